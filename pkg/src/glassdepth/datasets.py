"""Dataset manifests and on-disk layout for rendered sequences.

Layout under a dataset root:

    manifest.json
    scenes/<id>/scene.json          # SceneSpec + trajectory + render settings
    scenes/<id>/rgb/f###.png
    scenes/<id>/depth/f###.pfm      # meters
    scenes/<id>/normal/f###.pfm     # camera-space unit vectors
    scenes/<id>/mask/f###.png       # validity (depth > 0)

Every sequence is re-renderable bit-exactly from its scene.json. Disparity is
never persisted; it is derived from depth on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import io_formats
from .errors import DataError
from .raytrace import ScenePair, render_sequence
from .synthscene import CameraTrajectory, SceneSpec

MANIFEST_VERSION = 1


@dataclass
class SequenceRecord:
    seq_id: str
    frames: int
    height: int
    width: int
    rgb: list[str]
    depth: list[str]
    normal: list[str]
    mask: list[str]
    intrinsics: dict
    seed: int
    tags: list[str] = field(default_factory=list)
    tag_id: int = 0

    def to_dict(self) -> dict:
        return {"id": self.seq_id, "frames": self.frames, "height": self.height,
                "width": self.width, "rgb": self.rgb, "depth": self.depth,
                "normal": self.normal, "mask": self.mask,
                "intrinsics": self.intrinsics, "seed": self.seed,
                "tags": self.tags, "tag_id": self.tag_id}

    @staticmethod
    def from_dict(d: dict) -> "SequenceRecord":
        return SequenceRecord(seq_id=d["id"], frames=d["frames"], height=d["height"],
                              width=d["width"], rgb=d["rgb"], depth=d["depth"],
                              normal=d["normal"], mask=d["mask"],
                              intrinsics=d["intrinsics"], seed=d["seed"],
                              tags=d.get("tags", []), tag_id=d.get("tag_id", 0))


@dataclass
class DatasetManifest:
    split: str
    sequences: list[SequenceRecord] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def save(self, path: str) -> None:
        doc = {"version": self.version, "split": self.split,
               "sequences": [s.to_dict() for s in self.sequences]}
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
        os.replace(tmp, path)

    @staticmethod
    def load(path: str) -> "DatasetManifest":
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"manifest {path} is not valid JSON: {e}") from None
        if doc.get("version") != MANIFEST_VERSION:
            raise DataError(f"manifest {path}: unsupported version {doc.get('version')}")
        return DatasetManifest(
            split=doc["split"],
            sequences=[SequenceRecord.from_dict(s) for s in doc["sequences"]])

    def ids(self) -> list[str]:
        return [s.seq_id for s in self.sequences]


def scene_dir(root: str, seq_id: str) -> str:
    return os.path.join(root, "scenes", seq_id)


def write_scene_pair(root: str, seq_id: str, pair: ScenePair, scene: SceneSpec,
                     tag_id: int = 0) -> SequenceRecord:
    """Persist one rendered sequence and return its manifest record."""
    base = scene_dir(root, seq_id)
    for sub in ("rgb", "depth", "normal", "mask"):
        os.makedirs(os.path.join(base, sub), exist_ok=True)
    rel = lambda *parts: os.path.join("scenes", seq_id, *parts)
    rec = SequenceRecord(
        seq_id=seq_id, frames=pair.frames, height=pair.rgb.shape[1],
        width=pair.rgb.shape[2], rgb=[], depth=[], normal=[], mask=[],
        intrinsics=pair.meta.get("intrinsics", {}), seed=pair.meta.get("seed", 0),
        tags=[scene.environment], tag_id=tag_id)
    for k in range(pair.frames):
        names = {sub: rel(sub, f"f{k:03d}." + ("png" if sub in ("rgb", "mask") else "pfm"))
                 for sub in ("rgb", "depth", "normal", "mask")}
        io_formats.write_png(os.path.join(root, names["rgb"]), pair.rgb[k])
        io_formats.write_pfm(os.path.join(root, names["depth"]), pair.depth[k])
        io_formats.write_pfm(os.path.join(root, names["normal"]), pair.normal[k])
        io_formats.write_mask_png(os.path.join(root, names["mask"]), pair.valid[k])
        rec.rgb.append(names["rgb"])
        rec.depth.append(names["depth"])
        rec.normal.append(names["normal"])
        rec.mask.append(names["mask"])
    doc = {"scene": scene.to_dict(), "trajectory": pair.trajectory.to_dict(),
           "render": {k: v for k, v in pair.meta.items() if k != "intrinsics"}}
    with open(os.path.join(base, "scene.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    return rec


def rerender_from_scene_json(path: str) -> ScenePair:
    """Re-render a sequence bit-exactly from its persisted scene.json."""
    with open(path) as f:
        doc = json.load(f)
    scene = SceneSpec.from_dict(doc["scene"])
    traj = CameraTrajectory.from_dict(doc["trajectory"])
    r = doc["render"]
    return render_sequence(scene, traj, tuple(r["resolution"]), spp=r["spp"],
                           seed=r["seed"], fov_deg=r["fov_deg"],
                           max_bounces=r["max_bounces"])


@dataclass
class LoadedSequence:
    record: SequenceRecord
    rgb: np.ndarray      # F x H x W x 3 float32 in [0,1]
    depth: np.ndarray    # F x H x W float32 meters
    normal: np.ndarray   # F x H x W x 3 float32
    valid: np.ndarray    # F x H x W bool


def load_sequence(root: str, rec: SequenceRecord, with_normals: bool = True
                  ) -> LoadedSequence:
    f, h, w = rec.frames, rec.height, rec.width
    rgb = np.empty((f, h, w, 3), dtype=np.float32)
    depth = np.empty((f, h, w), dtype=np.float32)
    normal = np.zeros((f, h, w, 3), dtype=np.float32)
    valid = np.empty((f, h, w), dtype=bool)
    for k in range(f):
        rgb[k] = io_formats.read_png(os.path.join(root, rec.rgb[k]))
        depth[k] = io_formats.read_pfm(os.path.join(root, rec.depth[k]))
        if with_normals:
            normal[k] = io_formats.read_pfm(os.path.join(root, rec.normal[k]))
        valid[k] = io_formats.read_png(os.path.join(root, rec.mask[k]))
    return LoadedSequence(record=rec, rgb=rgb, depth=depth, normal=normal, valid=valid)


def load_sequence_cached(root: str, rec: SequenceRecord, with_normals: bool = True
                         ) -> LoadedSequence:
    """load_sequence with an optional on-disk array cache.

    When GLASSDEPTH_CACHE is set, decoded sequences are kept there as .npz and
    reused across runs; otherwise this is plain load_sequence.
    """
    cache_dir = os.environ.get("GLASSDEPTH_CACHE")
    if not cache_dir:
        return load_sequence(root, rec, with_normals=with_normals)
    import hashlib
    key = hashlib.sha1(
        f"{os.path.abspath(root)}|{rec.seq_id}|{rec.frames}|{rec.height}x{rec.width}"
        .encode()).hexdigest()[:20]
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"seq_{key}.npz")
    if os.path.exists(path):
        z = np.load(path)
        return LoadedSequence(record=rec, rgb=z["rgb"], depth=z["depth"],
                              normal=z["normal"], valid=z["valid"])
    seq = load_sequence(root, rec, with_normals=with_normals)
    tmp = path + ".tmp.npz"
    np.savez(tmp, rgb=seq.rgb, depth=seq.depth, normal=seq.normal, valid=seq.valid)
    os.replace(tmp, path)
    return seq


def validate_manifest(root: str, manifest: DatasetManifest) -> list[str]:
    """Check manifest invariants; returns a list of human-readable problems."""
    problems: list[str] = []
    seen = set()
    for rec in manifest.sequences:
        prefix = f"sequence {rec.seq_id}"
        if rec.seq_id in seen:
            problems.append(f"{prefix}: duplicate id")
        seen.add(rec.seq_id)
        if rec.frames % 4 != 1:
            problems.append(f"{prefix}: frames {rec.frames} violates F == 1 (mod 4)")
        lists = {"rgb": rec.rgb, "depth": rec.depth, "normal": rec.normal,
                 "mask": rec.mask}
        for kind, paths in lists.items():
            if len(paths) != rec.frames:
                problems.append(f"{prefix}: {kind} lists {len(paths)} paths for "
                                f"{rec.frames} frames")
                continue
            for p in paths:
                full = os.path.join(root, p)
                if not os.path.exists(full):
                    problems.append(f"{prefix}: missing file {p}")
        if problems and problems[-1].startswith(prefix):
            continue
        # shape + consistency spot check on first and last frames
        for k in (0, rec.frames - 1):
            try:
                rgb = io_formats.read_png(os.path.join(root, rec.rgb[k]))
                depth = io_formats.read_pfm(os.path.join(root, rec.depth[k]))
                normal = io_formats.read_pfm(os.path.join(root, rec.normal[k]))
                mask = io_formats.read_png(os.path.join(root, rec.mask[k]))
            except (DataError, OSError, ValueError) as e:
                problems.append(f"{prefix}: frame {k} unreadable: {e}")
                continue
            if rgb.shape != (rec.height, rec.width, 3):
                problems.append(f"{prefix}: rgb frame {k} has shape {rgb.shape}, "
                                f"declared {(rec.height, rec.width, 3)}")
            if depth.shape != (rec.height, rec.width):
                problems.append(f"{prefix}: depth frame {k} has shape {depth.shape}")
            if normal.shape != (rec.height, rec.width, 3):
                problems.append(f"{prefix}: normal frame {k} has shape {normal.shape}")
            if depth.shape == mask.shape and not np.array_equal(mask, depth > 0):
                problems.append(f"{prefix}: mask of frame {k} disagrees with depth > 0")
    return problems
