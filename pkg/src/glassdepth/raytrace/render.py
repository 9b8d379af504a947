"""Whitted-style deterministic renderer producing RGB + depth + normal videos.

Shading recurses over ray subsets (diffuse / metal / dielectric) with at most
`max_bounces` levels; depth and normals always come from the first surface
hit, so the geometry channels are exact, noise-free, and independent of the
color sample count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..synthscene import CameraTrajectory, SceneSpec, euler_to_matrix, Pose, MaterialSpec
from .optics import (TOTAL_INTERNAL_REFLECTION, fresnel_schlick, fresnel_schlick_batch,
                     reflect_batch, refract, refract_batch)
from .primitives import Primitive, Rectangle, build_asset_primitive

_OFFSET = 1e-6          # hit-point offset against self-intersection
_SHADOW_TRANSMIT = 0.75  # light kept per transparent occluder on a shadow ray

BACKGROUND_ZENITH = np.array([0.25, 0.32, 0.42])
BACKGROUND_HORIZON = np.array([0.55, 0.57, 0.60])


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    medium_ior: float = 1.0
    depth_budget: int = 8

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length (norm {n:.8f})")
        self.direction = d


@dataclass
class RenderedFrame:
    rgb: np.ndarray       # H x W x 3 in [0, 1]
    depth: np.ndarray     # H x W, camera-z metric depth; 0 = no hit
    normal: np.ndarray    # H x W x 3 camera-space unit vectors; 0 = no hit
    valid: np.ndarray     # H x W bool, equivalent to depth > 0


@dataclass
class ScenePair:
    """One rendered sequence with everything needed for training and eval."""

    rgb: np.ndarray       # F x H x W x 3
    depth: np.ndarray     # F x H x W
    normal: np.ndarray    # F x H x W x 3
    valid: np.ndarray     # F x H x W bool
    trajectory: CameraTrajectory
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.rgb.shape[0]


class Camera:
    def __init__(self, position, look_at, up, fov_deg: float = 50.0):
        self.position = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(look_at, dtype=np.float64) - self.position
        self.forward = fwd / np.linalg.norm(fwd)
        right = np.cross(self.forward, np.asarray(up, dtype=np.float64))
        self.right = right / np.linalg.norm(right)
        self.up = np.cross(self.right, self.forward)
        self.fov_deg = fov_deg
        self.tan_half = math.tan(math.radians(fov_deg) * 0.5)

    def rays(self, width: int, height: int, jitter: np.ndarray | None = None
             ) -> tuple[np.ndarray, np.ndarray]:
        """Primary ray origins/directions; jitter is an (H,W,2) pixel offset."""
        j = np.arange(width)[None, :] + 0.5
        i = np.arange(height)[:, None] + 0.5
        if jitter is not None:
            j = j + jitter[..., 0]
            i = i + jitter[..., 1]
        aspect = width / height
        x = (2.0 * j / width - 1.0) * self.tan_half * aspect
        y = (1.0 - 2.0 * i / height) * self.tan_half
        x, y = np.broadcast_arrays(x, y)
        d = (self.forward[None, None] + x[..., None] * self.right[None, None]
             + y[..., None] * self.up[None, None])
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(self.position, d.shape)
        return o.reshape(-1, 3), d.reshape(-1, 3)

    def normals_to_camera(self, n_world: np.ndarray) -> np.ndarray:
        """World normals -> camera space with +z toward the camera."""
        return np.stack([n_world @ self.right, n_world @ self.up,
                         -(n_world @ self.forward)], axis=-1)

    def intrinsics(self, width: int, height: int) -> dict:
        fy = height / (2.0 * self.tan_half)
        return {"fov_deg": self.fov_deg, "width": width, "height": height,
                "fx": fy, "fy": fy, "cx": width / 2.0, "cy": height / 2.0}


class RenderScene:
    """SceneSpec compiled into primitives + lights for intersection queries."""

    def __init__(self, spec: SceneSpec, beer_lambert: bool = False,
                 beer_density: float = 1.0):
        self.spec = spec
        self.beer_lambert = beer_lambert
        self.beer_density = beer_density
        self.primitives: list[Primitive] = []
        self._build_environment(spec)
        for asset, pose in spec.placements:
            self.primitives.append(build_asset_primitive(asset, pose))
        self.lights = spec.lights
        self.ambient = spec.ambient

    def _build_environment(self, spec: SceneSpec) -> None:
        ex, ey = spec.extents
        ground_mat = MaterialSpec("diffuse", albedo=(0.6, 0.6, 0.6), roughness=0.5)
        self.primitives.append(Rectangle(
            corner=(-ex, -ey, 0.0), edge_u=(2 * ex, 0, 0), edge_v=(0, 2 * ey, 0),
            material=ground_mat, checker=0.5))
        if spec.environment == "container":
            wall_mat = MaterialSpec("diffuse", albedo=(0.55, 0.52, 0.48), roughness=0.6)
            h = spec.wall_height
            walls = [
                ((-ex, -ey, 0), (2 * ex, 0, 0), (0, 0, h)),
                ((-ex, ey, 0), (2 * ex, 0, 0), (0, 0, h)),
                ((-ex, -ey, 0), (0, 2 * ey, 0), (0, 0, h)),
                ((ex, -ey, 0), (0, 2 * ey, 0), (0, 0, h)),
            ]
            for corner, eu, ev in walls:
                self.primitives.append(Rectangle(corner, eu, ev, wall_mat))

    def nearest_hit(self, origins: np.ndarray, dirs: np.ndarray,
                    t_min: float = _OFFSET) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest intersection over all primitives.

        Returns (t, prim_index, part_code); t is inf and prim_index -1 on miss.
        """
        n = origins.shape[0]
        best_t = np.full(n, np.inf)
        best_prim = np.full(n, -1, dtype=np.int32)
        best_code = np.zeros(n, dtype=np.int8)
        for idx, prim in enumerate(self.primitives):
            t, code = prim.intersect(origins, dirs, t_min)
            closer = t < best_t
            best_t[closer] = t[closer]
            best_prim[closer] = idx
            best_code[closer] = code[closer]
        return best_t, best_prim, best_code

    def hit_normals(self, points, prim_idx, codes) -> np.ndarray:
        """Geometric outward normals per winning primitive."""
        n = np.zeros_like(points)
        for idx in np.unique(prim_idx):
            if idx < 0:
                continue
            m = prim_idx == idx
            n[m] = self.primitives[idx].normals(points[m], codes[m])
        return n

    def shadow_transmittance(self, points: np.ndarray, light_pos: np.ndarray
                             ) -> np.ndarray:
        """Fraction of light reaching each point: opaque occluders block,
        transparent ones attenuate by a fixed factor."""
        delta = light_pos[None, :] - points
        dist = np.linalg.norm(delta, axis=-1)
        dirs = delta / dist[:, None]
        trans = np.ones(points.shape[0])
        for prim in self.primitives:
            t, _ = prim.intersect(points, dirs, _OFFSET)
            blocked = t < dist - _OFFSET
            if not blocked.any():
                continue
            if prim.material.material_class in ("glass", "plastic"):
                trans[blocked] *= _SHADOW_TRANSMIT
            else:
                trans[blocked] = 0.0
        return trans


def background(dirs: np.ndarray) -> np.ndarray:
    up = np.clip(dirs[:, 2] * 0.5 + 0.5, 0.0, 1.0)[:, None]
    return BACKGROUND_HORIZON[None, :] * (1 - up) + BACKGROUND_ZENITH[None, :] * up


def _shade(scene: RenderScene, origins: np.ndarray, dirs: np.ndarray,
           medium_ior: np.ndarray, absorption: np.ndarray, budget: int
           ) -> np.ndarray:
    """Radiance for a batch of rays, recursing on material subsets."""
    n = origins.shape[0]
    rgb = np.zeros((n, 3))
    if n == 0:
        return rgb
    t, prim_idx, codes = scene.nearest_hit(origins, dirs)
    miss = prim_idx < 0
    rgb[miss] = background(dirs[miss])
    hit = ~miss
    if hit.any():
        points = origins + np.where(hit, t, 0.0)[:, None] * dirs
        normals = scene.hit_normals(points, prim_idx, codes)
        for idx in np.unique(prim_idx[hit]):
            prim = scene.primitives[idx]
            m = prim_idx == idx
            rgb[m] = _shade_material(scene, prim, points[m], dirs[m], normals[m],
                                     medium_ior[m], budget)
    # Beer-Lambert attenuation along this segment (absorption is zero in air)
    seg = np.minimum(t, 1e6)[:, None]
    rgb *= np.exp(-absorption * seg)
    return rgb


def _shade_material(scene: RenderScene, prim: Primitive, points, dirs, normals,
                    medium_ior, budget: int) -> np.ndarray:
    mat = prim.material
    albedo = prim.albedo_at(points)
    facing = np.sum(dirs * normals, axis=-1) < 0
    ns = np.where(facing[:, None], normals, -normals)   # oriented against ray

    if mat.material_class == "diffuse":
        return _shade_diffuse(scene, points, dirs, ns, albedo, mat.roughness)

    if mat.material_class == "metal":
        if budget <= 0:
            return albedo * scene.ambient
        refl = reflect_batch(dirs, ns)
        out = _shade(scene, points + ns * _OFFSET, refl,
                     medium_ior, np.zeros_like(points), budget - 1)
        return albedo * out

    # dielectric: glass or plastic
    if budget <= 0:
        return albedo * scene.ambient
    entering = facing
    ior_in = np.where(entering, medium_ior, mat.ior)
    ior_out = np.where(entering, mat.ior, 1.0)
    cos_i = np.abs(np.sum(dirs * ns, axis=-1))
    refr_dir, tir = refract_batch(dirs, ns, ior_in, ior_out)
    reflectance = np.where(tir, 1.0, fresnel_schlick_batch(cos_i, ior_in, ior_out))

    refl = reflect_batch(dirs, ns)
    rgb = reflectance[:, None] * _shade(
        scene, points + ns * _OFFSET, refl, medium_ior,
        np.zeros_like(points), budget - 1)

    through = ~tir
    if through.any():
        tint = np.ones((int(through.sum()), 3))
        absorption = np.zeros((int(through.sum()), 3))
        if mat.material_class == "plastic":
            tint = np.broadcast_to(albedo[through], tint.shape).copy()
        elif scene.beer_lambert:
            sigma = -np.log(np.clip(np.asarray(mat.albedo), 1e-3, 1.0)) * scene.beer_density
            absorption = np.where(entering[through, None], sigma[None, :], 0.0)
        transmitted = _shade(scene, points[through] - ns[through] * _OFFSET,
                             refr_dir[through], ior_out[through], absorption,
                             budget - 1)
        rgb[through] += (1.0 - reflectance[through, None]) * tint * transmitted
    return rgb


def _shade_diffuse(scene, points, dirs, ns, albedo, roughness) -> np.ndarray:
    rgb = albedo * scene.ambient
    spec_k = 0.15 * (1.0 - roughness)
    spec_exp = 4.0 + 60.0 * (1.0 - roughness)
    for light in scene.lights:
        lpos = np.asarray(light.position, dtype=np.float64)
        delta = lpos[None, :] - points
        dist2 = np.sum(delta * delta, axis=-1)
        ldir = delta / np.sqrt(dist2)[:, None]
        lambert = np.clip(np.sum(ns * ldir, axis=-1), 0.0, None)
        lit = lambert > 0
        if not lit.any():
            continue
        trans = np.zeros(points.shape[0])
        trans[lit] = scene.shadow_transmittance(points[lit] + ns[lit] * _OFFSET, lpos)
        irradiance = light.intensity * trans * lambert / np.maximum(dist2, 1e-6)
        color = np.asarray(light.color, dtype=np.float64)
        rgb += albedo * (irradiance[:, None] * color[None, :])
        if spec_k > 0:
            h = ldir - dirs
            h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
            spec = np.clip(np.sum(ns * h, axis=-1), 0.0, None) ** spec_exp
            rgb += spec_k * (irradiance * spec)[:, None] * color[None, :]
    return rgb


def trace(ray: Ray, scene: RenderScene) -> tuple[np.ndarray, float, np.ndarray, bool]:
    """Single-ray query: (radiance rgb, first-hit distance, world normal, valid).

    The distance is Euclidean along the ray; render_sequence converts to
    camera-z depth. Normal is the visible-side surface normal, zero on miss.
    """
    o = ray.origin[None, :]
    d = ray.direction[None, :]
    rgb = _shade(scene, o, d, np.full(1, ray.medium_ior),
                 np.zeros((1, 3)), ray.depth_budget)[0]
    t, prim_idx, codes = scene.nearest_hit(o, d)
    if prim_idx[0] < 0:
        return rgb, 0.0, np.zeros(3), False
    p = o + t[:, None] * d
    n = scene.hit_normals(p, prim_idx, codes)[0]
    if float(np.dot(n, ray.direction)) > 0:
        n = -n
    return rgb, float(t[0]), n, True


def render_frame(scene: RenderScene, camera: Camera, width: int, height: int,
                 spp: int, rng: np.random.Generator,
                 max_bounces: int = 8) -> RenderedFrame:
    o, d = camera.rays(width, height)
    n = o.shape[0]

    # geometry channels from pixel-center rays only: spp-invariant
    t, prim_idx, codes = scene.nearest_hit(o, d)
    hit = prim_idx >= 0
    t_safe = np.where(hit, t, 0.0)
    zdepth = t_safe * (d @ camera.forward)
    points = o + t_safe[:, None] * d
    n_world = np.zeros_like(points)
    n_world[hit] = scene.hit_normals(points[hit], prim_idx[hit], codes[hit])
    toward = np.sum(n_world * d, axis=-1) > 0
    n_world[toward] = -n_world[toward]
    n_cam = np.zeros_like(n_world)
    n_cam[hit] = camera.normals_to_camera(n_world[hit])

    acc = _shade(scene, o, d, np.ones(n), np.zeros((n, 3)), max_bounces)
    for _ in range(spp - 1):
        jitter = rng.uniform(-0.5, 0.5, size=(height, width, 2))
        oj, dj = camera.rays(width, height, jitter=jitter)
        acc += _shade(scene, oj, dj, np.ones(n), np.zeros((n, 3)), max_bounces)
    rgb = np.clip(acc / spp, 0.0, 1.0)

    return RenderedFrame(
        rgb=rgb.reshape(height, width, 3).astype(np.float32),
        depth=zdepth.reshape(height, width).astype(np.float32),
        normal=n_cam.reshape(height, width, 3).astype(np.float32),
        valid=(zdepth > 0).reshape(height, width),
    )


def render_sequence(spec: SceneSpec, trajectory: CameraTrajectory,
                    resolution: tuple[int, int], spp: int, seed: int,
                    fov_deg: float = 50.0, max_bounces: int = 8,
                    beer_lambert: bool = False) -> ScenePair:
    """Render every trajectory pose into a ScenePair; deterministic given seed."""
    width, height = resolution
    if width < 1 or height < 1 or spp < 1:
        raise ValueError("resolution and spp must be positive")
    scene = RenderScene(spec, beer_lambert=beer_lambert)
    frames = trajectory.frames
    rgb = np.empty((frames, height, width, 3), dtype=np.float32)
    depth = np.empty((frames, height, width), dtype=np.float32)
    normal = np.empty((frames, height, width, 3), dtype=np.float32)
    valid = np.empty((frames, height, width), dtype=bool)
    cam0 = None
    for k in range(frames):
        rng = np.random.default_rng((seed, k))
        cam = Camera(trajectory.positions[k], trajectory.look_at, trajectory.up,
                     fov_deg=fov_deg)
        if cam0 is None:
            cam0 = cam
        frame = render_frame(scene, cam, width, height, spp, rng,
                             max_bounces=max_bounces)
        rgb[k], depth[k], normal[k], valid[k] = (frame.rgb, frame.depth,
                                                 frame.normal, frame.valid)
    meta = {"seed": seed, "spp": spp, "fov_deg": fov_deg,
            "max_bounces": max_bounces, "resolution": [width, height],
            "intrinsics": cam0.intrinsics(width, height)}
    return ScenePair(rgb=rgb, depth=depth, normal=normal, valid=valid,
                     trajectory=trajectory, meta=meta)
