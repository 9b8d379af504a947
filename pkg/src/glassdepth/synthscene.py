"""Procedural composition of transparent/reflective desk scenes.

Assets are parametric (sphere, box, cylinder, surfaces of revolution built
from hand-authored profiles), paired with glass/plastic/metal/diffuse
materials, dropped into a tabletop or container environment, and relaxed to a
resting arrangement with bounding-sphere collision proxies. Cameras follow a
circular orbit around the settled geometry with a sinusoidal height
perturbation. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

ASSET_KINDS = ("sphere", "box", "cylinder", "revolution_surface")
MATERIAL_CLASSES = ("glass", "plastic", "metal", "diffuse")

GLASS_IOR_RANGE = (1.3, 1.7)
PENETRATION_TOL = 1e-4

# revolution profiles as (z, radius) control points, z in [-0.5, 0.5],
# max radius ~0.5 so every asset fits a unit-ish bounding box before scaling
REVOLUTION_PROFILES = {
    "goblet": [(-0.5, 0.30), (-0.45, 0.08), (-0.1, 0.06), (0.0, 0.18),
               (0.3, 0.30), (0.5, 0.28)],
    "bottle": [(-0.5, 0.28), (-0.1, 0.30), (0.15, 0.12), (0.35, 0.09),
               (0.5, 0.09)],
    "bowl": [(-0.5, 0.22), (-0.42, 0.38), (-0.1, 0.49), (0.2, 0.50)],
}


@dataclass
class MaterialSpec:
    material_class: str
    albedo: tuple[float, float, float] = (0.8, 0.8, 0.8)
    ior: float | None = None
    roughness: float = 0.2

    def validate(self) -> None:
        if self.material_class not in MATERIAL_CLASSES:
            raise DataError(f"unknown material class {self.material_class!r}")
        if self.material_class == "metal":
            if self.ior is not None:
                raise DataError("metal is reflectance-only: ior must be None")
        elif self.material_class in ("glass", "plastic"):
            if self.ior is None or self.ior < 1.0:
                raise DataError(f"{self.material_class} requires ior >= 1")
            if self.material_class == "glass" and not (
                    GLASS_IOR_RANGE[0] <= self.ior <= GLASS_IOR_RANGE[1]):
                raise DataError(f"glass ior {self.ior} outside {GLASS_IOR_RANGE}")
        if not all(0.0 <= a <= 1.0 for a in self.albedo):
            raise DataError(f"albedo {self.albedo} outside [0,1]")
        if not 0.0 <= self.roughness <= 1.0:
            raise DataError(f"roughness {self.roughness} outside [0,1]")

    def to_dict(self) -> dict:
        return {"class": self.material_class, "albedo": list(self.albedo),
                "ior": self.ior, "roughness": self.roughness}

    @staticmethod
    def from_dict(d: dict) -> "MaterialSpec":
        return MaterialSpec(material_class=d["class"], albedo=tuple(d["albedo"]),
                            ior=d["ior"], roughness=d["roughness"])


@dataclass
class AssetSpec:
    kind: str
    params: list[float]          # sphere: [r]; box: [hx,hy,hz]; cylinder: [r,hh];
                                 # revolution: flattened (z, r) pairs
    material: MaterialSpec
    scale: float = 1.0

    def validate(self) -> None:
        if self.kind not in ASSET_KINDS:
            raise DataError(f"unknown asset kind {self.kind!r}")
        if self.scale <= 0:
            raise DataError("scale must be positive")
        if self.kind == "revolution_surface":
            prof = self.profile()
            zs = [z for z, _ in prof]
            if any(r <= 0 for _, r in prof):
                raise DataError("revolution profile radii must be strictly positive")
            if len(zs) < 2 or any(b <= a for a, b in zip(zs, zs[1:])):
                raise DataError("revolution profile z must be strictly increasing")
        self.material.validate()

    def profile(self) -> list[tuple[float, float]]:
        if self.kind != "revolution_surface":
            raise DataError("profile() only applies to revolution surfaces")
        p = self.params
        return [(p[i], p[i + 1]) for i in range(0, len(p), 2)]

    def bounding_radius(self) -> float:
        """Radius of the collision proxy sphere (around the local origin)."""
        if self.kind == "sphere":
            r = self.params[0]
        elif self.kind == "box":
            r = math.sqrt(sum(h * h for h in self.params[:3]))
        elif self.kind == "cylinder":
            r = math.hypot(self.params[0], self.params[1])
        else:
            r = max(math.hypot(rr, z) for z, rr in self.profile())
        return r * self.scale

    def support_drop(self, rotation: np.ndarray) -> float:
        """Distance from the local origin to the lowest point of the rotated
        geometry, i.e. the support function evaluated at world -z."""
        u = rotation.T @ np.array([0.0, 0.0, -1.0])  # world down in local coords
        if self.kind == "sphere":
            h = self.params[0]
        elif self.kind == "box":
            h = float(np.dot(np.abs(u), np.asarray(self.params[:3])))
        elif self.kind == "cylinder":
            r, hh = self.params[0], self.params[1]
            h = r * math.hypot(u[0], u[1]) + hh * abs(u[2])
        else:
            uxy = math.hypot(u[0], u[1])
            h = max(rr * uxy + z * u[2] for z, rr in self.profile())
        return h * self.scale

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params),
                "material": self.material.to_dict(), "scale": self.scale}

    @staticmethod
    def from_dict(d: dict) -> "AssetSpec":
        return AssetSpec(kind=d["kind"], params=list(d["params"]),
                         material=MaterialSpec.from_dict(d["material"]),
                         scale=d["scale"])


def euler_to_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


@dataclass
class Pose:
    position: np.ndarray         # 3
    euler: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        return euler_to_matrix(*self.euler)

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position],
                "euler": [float(v) for v in self.euler]}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(position=np.asarray(d["position"], dtype=np.float64),
                    euler=tuple(d["euler"]))


@dataclass
class Light:
    position: np.ndarray
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position],
                "intensity": self.intensity, "color": list(self.color)}

    @staticmethod
    def from_dict(d: dict) -> "Light":
        return Light(position=np.asarray(d["position"], dtype=np.float64),
                     intensity=d["intensity"], color=tuple(d["color"]))


@dataclass
class SceneSpec:
    placements: list[tuple[AssetSpec, Pose]]
    environment: str = "tabletop"            # or "container"
    extents: tuple[float, float] = (2.0, 2.0)  # half-extents of the support
    wall_height: float = 0.8                   # container only
    lights: list[Light] = field(default_factory=list)
    ambient: float = 0.25
    seed: int = 0

    @property
    def asset_count(self) -> int:
        return len(self.placements)

    def object_centers(self) -> np.ndarray:
        return np.stack([pose.position for _, pose in self.placements])

    def geometric_center(self) -> np.ndarray:
        return self.object_centers().mean(axis=0)

    def max_extent(self) -> float:
        """Radius of the settled object cloud about its geometric center."""
        centers = self.object_centers()
        radii = np.array([a.bounding_radius() for a, _ in self.placements])
        c = centers.mean(axis=0)
        return float((np.linalg.norm(centers - c, axis=1) + radii).max())

    def to_dict(self) -> dict:
        return {
            "placements": [{"asset": a.to_dict(), "pose": p.to_dict()}
                           for a, p in self.placements],
            "environment": self.environment,
            "extents": list(self.extents),
            "wall_height": self.wall_height,
            "lights": [l.to_dict() for l in self.lights],
            "ambient": self.ambient,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        return SceneSpec(
            placements=[(AssetSpec.from_dict(pl["asset"]), Pose.from_dict(pl["pose"]))
                        for pl in d["placements"]],
            environment=d["environment"],
            extents=tuple(d["extents"]),
            wall_height=d.get("wall_height", 0.8),
            lights=[Light.from_dict(l) for l in d["lights"]],
            ambient=d["ambient"],
            seed=d["seed"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SceneSpec":
        return SceneSpec.from_dict(json.loads(text))


@dataclass
class CameraTrajectory:
    positions: np.ndarray        # F x 3
    look_at: np.ndarray          # 3 (scene center, shared by every pose)
    up: np.ndarray               # 3
    radius: float
    perturb_amp: float
    perturb_freq: float
    phase: float = 0.0

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    def to_dict(self) -> dict:
        return {"positions": self.positions.tolist(),
                "look_at": self.look_at.tolist(), "up": self.up.tolist(),
                "radius": self.radius, "perturb_amp": self.perturb_amp,
                "perturb_freq": self.perturb_freq, "phase": self.phase}

    @staticmethod
    def from_dict(d: dict) -> "CameraTrajectory":
        return CameraTrajectory(
            positions=np.asarray(d["positions"], dtype=np.float64),
            look_at=np.asarray(d["look_at"], dtype=np.float64),
            up=np.asarray(d["up"], dtype=np.float64),
            radius=d["radius"], perturb_amp=d["perturb_amp"],
            perturb_freq=d["perturb_freq"], phase=d.get("phase", 0.0))


def sample_trajectory(center, radius: float, frames: int, perturb_amp: float,
                      perturb_freq: float, seed: int) -> CameraTrajectory:
    """Circular orbit about `center` with sinusoidal height wobble.

    Frame k sits at azimuth 2*pi*k/F on a circle of the given radius, with
    height offset amp * sin(2*pi*freq*k/F + phase); the phase is the only
    seed-dependent quantity. Look-at is always the center.
    """
    if frames < 1 or frames % 4 != 1:
        raise DataError(f"trajectory frames {frames} violates F == 1 (mod 4)")
    center = np.asarray(center, dtype=np.float64)
    rng = np.random.default_rng(seed)
    phase = float(rng.uniform(0.0, 2.0 * math.pi)) if perturb_amp > 0 else 0.0
    k = np.arange(frames)
    azimuth = 2.0 * math.pi * k / frames
    height = perturb_amp * np.sin(2.0 * math.pi * perturb_freq * k / frames + phase)
    positions = np.stack([
        center[0] + radius * np.cos(azimuth),
        center[1] + radius * np.sin(azimuth),
        center[2] + height,
    ], axis=1)
    return CameraTrajectory(positions=positions, look_at=center,
                            up=np.array([0.0, 0.0, 1.0]), radius=radius,
                            perturb_amp=perturb_amp, perturb_freq=perturb_freq,
                            phase=phase)


# ---------------------------------------------------------------------------
# settling
# ---------------------------------------------------------------------------

# a proxy resting on another with contact closer than this fraction of the
# combined radius from the apex is unstable and rolls off
_UNSTABLE_FRACTION = 0.35
_MAX_SETTLE_ITERS = 200


def _ground_separation(r_top: float, r_bot: float) -> float:
    # horizontal center distance when the falling sphere touches both the
    # ground and the supporting sphere
    return math.sqrt(max((r_top + r_bot) ** 2 - (r_top - r_bot) ** 2, 0.0))


def settle(scene: SceneSpec, seed: int) -> SceneSpec:
    """Gravity relaxation with bounding-sphere collision proxies.

    Objects are processed lowest-first: each falls to its highest supported
    rest position (exact support height on the ground, proxy spheres against
    other objects); near-apex contacts are unstable and roll off sideways.
    A global pass then resolves residual pair penetration. Deterministic for
    a given seed; raises on non-convergence.
    """
    if scene.asset_count < 1:
        raise DataError("M >= 1 violated: scene has no placements")
    rng = np.random.default_rng(seed)
    assets = [a for a, _ in scene.placements]
    for a in assets:
        a.validate()
    poses = [Pose(p.position.astype(np.float64).copy(), p.euler)
             for _, p in scene.placements]
    radii = np.array([a.bounding_radius() for a in assets])
    drops = np.array([a.support_drop(p.rotation()) for a, p in zip(assets, poses)])
    ex, ey = scene.extents
    if any(p.position[2] < drops[i] - PENETRATION_TOL for i, p in enumerate(poses)):
        raise DataError("settle precondition: initial poses must sit above the support surface")

    order = sorted(range(len(poses)), key=lambda i: (poses[i].position[2], i))
    placed: list[int] = []

    def clamp_xy(i: int) -> None:
        r = radii[i]
        poses[i].position[0] = float(np.clip(poses[i].position[0], -ex + r, ex - r))
        poses[i].position[1] = float(np.clip(poses[i].position[1], -ey + r, ey - r))

    def drop_one(i: int) -> None:
        clamp_xy(i)
        for _ in range(_MAX_SETTLE_ITERS):
            x, y = poses[i].position[0], poses[i].position[1]
            rest_z = drops[i]          # ground contact via exact support height
            support = -1
            for j in placed:
                dx = x - poses[j].position[0]
                dy = y - poses[j].position[1]
                d_xy = math.hypot(dx, dy)
                rr = radii[i] + radii[j]
                if d_xy < rr - 1e-12:
                    z = poses[j].position[2] + math.sqrt(rr * rr - d_xy * d_xy)
                    if z > rest_z:
                        rest_z = z
                        support = j
            if support < 0:
                poses[i].position[2] = rest_z
                return
            dx = x - poses[support].position[0]
            dy = y - poses[support].position[1]
            d_xy = math.hypot(dx, dy)
            rr = radii[i] + radii[support]
            if d_xy >= _UNSTABLE_FRACTION * rr:
                poses[i].position[2] = rest_z   # stable enough: rests on support
                return
            # unstable near-apex contact: roll off to ground contact
            if d_xy < 1e-9:
                ang = rng.uniform(0.0, 2.0 * math.pi)
                ux, uy = math.cos(ang), math.sin(ang)
            else:
                ux, uy = dx / d_xy, dy / d_xy
            sep = _ground_separation(radii[i], radii[support])
            poses[i].position[0] = poses[support].position[0] + ux * sep
            poses[i].position[1] = poses[support].position[1] + uy * sep
            clamp_xy(i)
        raise NumericalError(f"settle: object {i} failed to find rest in "
                             f"{_MAX_SETTLE_ITERS} iterations; scene rejected")

    for i in order:
        drop_one(i)
        placed.append(i)

    # global cleanup: push residual penetrating pairs apart horizontally
    for _ in range(_MAX_SETTLE_ITERS):
        worst = 0.0
        for ai in range(len(poses)):
            for bi in range(ai + 1, len(poses)):
                delta = poses[ai].position - poses[bi].position
                dist = float(np.linalg.norm(delta))
                overlap = radii[ai] + radii[bi] - dist
                if overlap > PENETRATION_TOL:
                    worst = max(worst, overlap)
                    dxy = delta[:2]
                    n = np.linalg.norm(dxy)
                    if n < 1e-9:
                        ang = rng.uniform(0.0, 2.0 * math.pi)
                        dxy = np.array([math.cos(ang), math.sin(ang)])
                        n = 1.0
                    push = dxy / n * (overlap * 0.5 + PENETRATION_TOL)
                    poses[ai].position[:2] += push
                    poses[bi].position[:2] -= push
                    clamp_xy(ai)
                    clamp_xy(bi)
        if worst <= PENETRATION_TOL:
            break
        placed.clear()
        for i in order:
            drop_one(i)
            placed.append(i)
    else:
        raise NumericalError(f"settle: penetration not resolved in "
                             f"{_MAX_SETTLE_ITERS} global passes; scene rejected")

    settled = SceneSpec(placements=list(zip(assets, poses)),
                        environment=scene.environment, extents=scene.extents,
                        wall_height=scene.wall_height, lights=scene.lights,
                        ambient=scene.ambient, seed=scene.seed)
    check_settled(settled)
    return settled


def check_settled(scene: SceneSpec, tol: float = PENETRATION_TOL) -> None:
    """Invariants of a settled scene: no pair penetration, everything supported."""
    poses = [p for _, p in scene.placements]
    assets = [a for a, _ in scene.placements]
    radii = [a.bounding_radius() for a in assets]
    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            dist = float(np.linalg.norm(poses[i].position - poses[j].position))
            if dist < radii[i] + radii[j] - tol:
                raise NumericalError(
                    f"settled scene: objects {i},{j} interpenetrate by "
                    f"{radii[i] + radii[j] - dist:.2e}")
    support_tol = 1e-3
    for i, (a, p) in enumerate(scene.placements):
        on_ground = abs(p.position[2] - a.support_drop(p.rotation())) < support_tol
        on_other = any(
            abs(float(np.linalg.norm(p.position - q.position)) - (radii[i] + radii[j])) < support_tol
            for j, (_, q) in enumerate(scene.placements) if j != i)
        if not (on_ground or on_other):
            raise NumericalError(f"settled scene: object {i} is unsupported")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass
class AssetBank:
    """Distributions the scene sampler draws from."""

    kinds: tuple[str, ...] = ASSET_KINDS
    material_classes: tuple[str, ...] = MATERIAL_CLASSES
    scale_range: tuple[float, float] = (0.25, 0.55)
    profiles: tuple[str, ...] = tuple(REVOLUTION_PROFILES)

    def sample_asset(self, rng: np.random.Generator) -> AssetSpec:
        kind = str(rng.choice(self.kinds))
        if kind == "sphere":
            params = [float(rng.uniform(0.35, 0.5))]
        elif kind == "box":
            params = [float(rng.uniform(0.2, 0.5)) for _ in range(3)]
        elif kind == "cylinder":
            params = [float(rng.uniform(0.15, 0.35)), float(rng.uniform(0.25, 0.5))]
        else:
            name = str(rng.choice(self.profiles))
            base = REVOLUTION_PROFILES[name]
            jitter = rng.uniform(0.85, 1.15, size=len(base))
            params = []
            for (z, r), jr in zip(base, jitter):
                params.extend([z, max(r * jr, 0.02)])
        material = self.sample_material(rng)
        scale = float(rng.uniform(*self.scale_range))
        asset = AssetSpec(kind=kind, params=params, material=material, scale=scale)
        asset.validate()
        return asset

    def sample_material(self, rng: np.random.Generator) -> MaterialSpec:
        cls = str(rng.choice(self.material_classes))
        albedo = tuple(float(v) for v in rng.uniform(0.25, 0.95, size=3))
        roughness = float(rng.uniform(0.05, 0.8))
        if cls == "glass":
            return MaterialSpec("glass", albedo=(0.95, 0.97, 0.96),
                                ior=float(rng.uniform(*GLASS_IOR_RANGE)),
                                roughness=float(rng.uniform(0.0, 0.2)))
        if cls == "plastic":
            return MaterialSpec("plastic", albedo=albedo,
                                ior=float(rng.uniform(1.3, 1.6)),
                                roughness=float(rng.uniform(0.0, 0.4)))
        if cls == "metal":
            return MaterialSpec("metal", albedo=tuple(float(v) for v in rng.uniform(0.6, 0.95, size=3)),
                                ior=None, roughness=float(rng.uniform(0.0, 0.3)))
        return MaterialSpec("diffuse", albedo=albedo, ior=None, roughness=roughness)


def sample_scene(bank: AssetBank, m_range: tuple[int, int], seed: int,
                 environment: str = "tabletop",
                 extents: tuple[float, float] = (6.0, 6.0),
                 spawn_extents: tuple[float, float] = (1.1, 1.1)) -> SceneSpec:
    """Draw M ~ U(m_range), assets, lights, and initial poses, then settle.

    Objects spawn inside the small spawn_extents patch at the middle of the
    (much larger) support surface, so orbiting cameras see table all the way
    to the horizon instead of empty background.
    """
    if not bank.kinds:
        raise DataError("asset bank is empty")
    rng = np.random.default_rng(seed)
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    placements = []
    ex, ey = spawn_extents
    for i in range(m):
        asset = bank.sample_asset(rng)
        r = asset.bounding_radius()
        pos = np.array([
            rng.uniform(-max(ex - r, 0.05), max(ex - r, 0.05)),
            rng.uniform(-max(ey - r, 0.05), max(ey - r, 0.05)),
            rng.uniform(0.8, 1.6) + 0.4 * i,   # staggered drop heights
        ])
        euler = tuple(float(v) for v in rng.uniform(0, 2 * math.pi, size=3))
        placements.append((asset, Pose(pos, euler)))

    n_lights = int(rng.integers(1, 4))
    lights = []
    for _ in range(n_lights):
        ang = rng.uniform(0, 2 * math.pi)
        elev = rng.uniform(0.5, 1.2)
        dist = rng.uniform(2.5, 4.0)
        lights.append(Light(
            position=np.array([dist * math.cos(ang), dist * math.sin(ang),
                               dist * math.sin(elev) + 1.0]),
            intensity=float(rng.uniform(8.0, 18.0)),
            color=tuple(float(v) for v in rng.uniform(0.9, 1.0, size=3))))

    scene = SceneSpec(placements=placements, environment=environment,
                      extents=extents, lights=lights,
                      ambient=float(rng.uniform(0.15, 0.3)), seed=seed)
    return settle(scene, seed=seed)


def sample_scene_trajectory(scene: SceneSpec, frames: int, seed: int,
                            perturb_amp_frac: float | None = None,
                            lift_frac: float = 0.22) -> CameraTrajectory:
    """Orbit radius and perturbation drawn relative to the settled scene size.

    The orbit center is the geometric center of the objects lifted by
    lift_frac of the radius, tilting the view down onto the tabletop.
    """
    rng = np.random.default_rng(seed + 0x5EED)
    radius = scene.max_extent() * float(rng.uniform(2.2, 2.8))
    center = scene.geometric_center() + np.array([0.0, 0.0, lift_frac * radius])
    if perturb_amp_frac is None:
        perturb_amp_frac = float(rng.uniform(0.0, 0.2))
    amp = perturb_amp_frac * radius
    freq = float(rng.integers(1, 3))
    return sample_trajectory(center, radius, frames, amp, freq, seed)
