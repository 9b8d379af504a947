"""Vectorized ray intersections for the analytic primitive set.

Every primitive intersects a batch of rays at once and reports the hit
parameter t (inf on miss) plus a part code so normals can be recovered
without re-intersection. Geometry runs in float64.
"""

from __future__ import annotations

import math

import numpy as np

from ..synthscene import AssetSpec, MaterialSpec, Pose

_EPS = 1e-9
_BIG = np.inf


class Primitive:
    material: MaterialSpec

    def intersect(self, origins: np.ndarray, dirs: np.ndarray,
                  t_min: float) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def normals(self, points: np.ndarray, codes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.material.albedo, dtype=np.float64),
                               (points.shape[0], 3))


class _Oriented(Primitive):
    """Shared rigid-transform plumbing for posed primitives."""

    def __init__(self, pose: Pose):
        self.position = np.asarray(pose.position, dtype=np.float64)
        self.rotation = pose.rotation()

    def to_local(self, origins, dirs):
        o = (origins - self.position) @ self.rotation
        d = dirs @ self.rotation
        return o, d

    def point_to_local(self, points):
        return (points - self.position) @ self.rotation

    def normal_to_world(self, n_local):
        return n_local @ self.rotation.T


class Sphere(_Oriented):
    def __init__(self, pose: Pose, radius: float, material: MaterialSpec):
        super().__init__(pose)
        self.radius = float(radius)
        self.material = material

    def intersect(self, origins, dirs, t_min):
        oc = origins - self.position
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        t = np.full(origins.shape[0], _BIG)
        ok = disc >= 0
        sq = np.sqrt(np.clip(disc, 0, None))
        t1 = -b - sq
        t2 = -b + sq
        cand = np.where(t1 > t_min, t1, np.where(t2 > t_min, t2, _BIG))
        t[ok] = cand[ok]
        return t, np.zeros(origins.shape[0], dtype=np.int8)

    def normals(self, points, codes):
        n = points - self.position
        return n / np.linalg.norm(n, axis=-1, keepdims=True)


class Box(_Oriented):
    def __init__(self, pose: Pose, half_extents, material: MaterialSpec):
        super().__init__(pose)
        self.he = np.asarray(half_extents, dtype=np.float64)
        self.material = material

    def intersect(self, origins, dirs, t_min):
        o, d = self.to_local(origins, dirs)
        d = np.where(np.abs(d) < _EPS, _EPS, d)
        t_lo = (-self.he - o) / d
        t_hi = (self.he - o) / d
        t_near = np.minimum(t_lo, t_hi).max(axis=-1)
        t_far = np.maximum(t_lo, t_hi).min(axis=-1)
        hit = (t_near <= t_far) & (t_far > t_min)
        t = np.where(hit, np.where(t_near > t_min, t_near, t_far), _BIG)
        return t, np.zeros(origins.shape[0], dtype=np.int8)

    def normals(self, points, codes):
        p = self.point_to_local(points)
        rel = np.abs(np.abs(p) - self.he)            # distance to each face plane
        axis = rel.argmin(axis=-1)
        n_local = np.zeros_like(p)
        rows = np.arange(p.shape[0])
        n_local[rows, axis] = np.sign(p[rows, axis])
        return self.normal_to_world(n_local)


class Cylinder(_Oriented):
    SIDE, CAP_LO, CAP_HI = 0, 1, 2

    def __init__(self, pose: Pose, radius: float, half_height: float,
                 material: MaterialSpec):
        super().__init__(pose)
        self.radius = float(radius)
        self.hh = float(half_height)
        self.material = material

    def intersect(self, origins, dirs, t_min):
        o, d = self.to_local(origins, dirs)
        n = origins.shape[0]
        best = np.full(n, _BIG)
        code = np.zeros(n, dtype=np.int8)
        # side surface
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius ** 2
        disc = b * b - a * c
        ok = (disc >= 0) & (a > _EPS)
        sq = np.sqrt(np.clip(disc, 0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / a
                z = o[:, 2] + t * d[:, 2]
                good = ok & (t > t_min) & (t < best) & (np.abs(z) <= self.hh)
                best[good] = t[good]
                code[good] = self.SIDE
            # caps
            for zcap, cc in ((-self.hh, self.CAP_LO), (self.hh, self.CAP_HI)):
                t = (zcap - o[:, 2]) / d[:, 2]
                x = o[:, 0] + t * d[:, 0]
                y = o[:, 1] + t * d[:, 1]
                good = (np.abs(d[:, 2]) > _EPS) & (t > t_min) & (t < best) & \
                       (x * x + y * y <= self.radius ** 2)
                best[good] = t[good]
                code[good] = cc
        return best, code

    def normals(self, points, codes):
        p = self.point_to_local(points)
        n_local = np.zeros_like(p)
        side = codes == self.SIDE
        r = np.linalg.norm(p[side, :2], axis=-1, keepdims=True)
        n_local[side, :2] = p[side, :2] / np.maximum(r, _EPS)
        n_local[codes == self.CAP_LO, 2] = -1.0
        n_local[codes == self.CAP_HI, 2] = 1.0
        return self.normal_to_world(n_local)


class RevolutionSurface(_Oriented):
    """Watertight lathe: a stack of cone frustums plus end disks.

    A piecewise-linear profile (z_i, r_i) revolved about local z is exactly the
    union of truncated cones, so intersections stay analytic (one quadratic
    per segment).
    """

    CAP_LO, CAP_HI = -1, -2

    def __init__(self, pose: Pose, profile: list[tuple[float, float]],
                 material: MaterialSpec):
        super().__init__(pose)
        self.profile = [(float(z), float(r)) for z, r in profile]
        self.material = material

    def intersect(self, origins, dirs, t_min):
        o, d = self.to_local(origins, dirs)
        n = origins.shape[0]
        best = np.full(n, _BIG)
        code = np.zeros(n, dtype=np.int8)
        ox, oy, oz = o[:, 0], o[:, 1], o[:, 2]
        dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
        for seg, ((z0, r0), (z1, r1)) in enumerate(zip(self.profile, self.profile[1:])):
            k = (r1 - r0) / (z1 - z0)
            a0 = r0 - k * z0                      # radius(z) = a0 + k z
            a = dx * dx + dy * dy - (k * dz) ** 2
            b = ox * dx + oy * dy - k * dz * (a0 + k * oz)
            c = ox * ox + oy * oy - (a0 + k * oz) ** 2
            disc = b * b - a * c
            ok = disc >= 0
            sq = np.sqrt(np.clip(disc, 0, None))
            with np.errstate(divide="ignore", invalid="ignore"):
                for sign in (-1.0, 1.0):
                    t = (-b + sign * sq) / np.where(np.abs(a) < _EPS, _EPS, a)
                    z = oz + t * dz
                    rad = a0 + k * z
                    good = ok & (t > t_min) & (t < best) & (z >= z0) & (z <= z1) & (rad >= 0)
                    best[good] = t[good]
                    code[good] = seg
        # end disks close the surface
        for (zc, rc), cc in ((self.profile[0], self.CAP_LO), (self.profile[-1], self.CAP_HI)):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (zc - oz) / dz
            x = ox + t * dx
            y = oy + t * dy
            good = (np.abs(dz) > _EPS) & (t > t_min) & (t < best) & (x * x + y * y <= rc * rc)
            best[good] = t[good]
            code[good] = cc
        return best, code

    def normals(self, points, codes):
        p = self.point_to_local(points)
        n_local = np.zeros_like(p)
        for seg, ((z0, r0), (z1, r1)) in enumerate(zip(self.profile, self.profile[1:])):
            m = codes == seg
            if not m.any():
                continue
            k = (r1 - r0) / (z1 - z0)
            a0 = r0 - k * z0
            rad = a0 + k * p[m, 2]
            n_seg = np.stack([p[m, 0], p[m, 1], -k * rad], axis=-1)
            n_local[m] = n_seg / np.linalg.norm(n_seg, axis=-1, keepdims=True)
        n_local[codes == self.CAP_LO, 2] = -1.0
        n_local[codes == self.CAP_HI, 2] = 1.0
        return self.normal_to_world(n_local)


class Rectangle(Primitive):
    """Finite plane patch: corner + two edge vectors. Two-sided."""

    def __init__(self, corner, edge_u, edge_v, material: MaterialSpec,
                 checker: float | None = None,
                 checker_colors: tuple | None = None):
        self.corner = np.asarray(corner, dtype=np.float64)
        self.eu = np.asarray(edge_u, dtype=np.float64)
        self.ev = np.asarray(edge_v, dtype=np.float64)
        n = np.cross(self.eu, self.ev)
        self.n = n / np.linalg.norm(n)
        self.material = material
        self.checker = checker
        self.checker_colors = checker_colors or ((0.75, 0.72, 0.68), (0.35, 0.34, 0.33))
        self._lu = float(np.dot(self.eu, self.eu))
        self._lv = float(np.dot(self.ev, self.ev))

    def intersect(self, origins, dirs, t_min):
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = dirs @ self.n
            t = ((self.corner - origins) @ self.n) / denom
            p = origins + t[:, None] * dirs
            rel = p - self.corner
            u = (rel @ self.eu) / self._lu
            v = (rel @ self.ev) / self._lv
            good = (np.abs(denom) > _EPS) & (t > t_min) & \
                   (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
        return np.where(good, t, _BIG), np.zeros(origins.shape[0], dtype=np.int8)

    def normals(self, points, codes):
        return np.broadcast_to(self.n, (points.shape[0], 3))

    def albedo_at(self, points):
        if self.checker is None:
            return super().albedo_at(points)
        rel = points - self.corner
        u = (rel @ self.eu) / self._lu
        v = (rel @ self.ev) / self._lv
        iu = np.floor(u * np.linalg.norm(self.eu) / self.checker).astype(int)
        iv = np.floor(v * np.linalg.norm(self.ev) / self.checker).astype(int)
        parity = ((iu + iv) % 2).astype(bool)
        c0 = np.asarray(self.checker_colors[0], dtype=np.float64)
        c1 = np.asarray(self.checker_colors[1], dtype=np.float64)
        return np.where(parity[:, None], c1, c0)


def build_asset_primitive(asset: AssetSpec, pose: Pose) -> Primitive:
    s = asset.scale
    if asset.kind == "sphere":
        return Sphere(pose, asset.params[0] * s, asset.material)
    if asset.kind == "box":
        return Box(pose, [h * s for h in asset.params[:3]], asset.material)
    if asset.kind == "cylinder":
        return Cylinder(pose, asset.params[0] * s, asset.params[1] * s, asset.material)
    if asset.kind == "revolution_surface":
        prof = [(z * s, r * s) for z, r in asset.profile()]
        return RevolutionSurface(pose, prof, asset.material)
    raise ValueError(f"unknown asset kind {asset.kind!r}")
