"""Exactly invertible video <-> latent codec plus depth/disparity transforms.

The learned video autoencoder is replaced by pure pixel packing: frame 0 is
packed alone, the remaining frames in temporal groups of 4, and each p x p
spatial patch is flattened into channels. decode(encode(v)) is bit-exact, so
any reconstruction error downstream belongs to the flow model, not the codec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

INVALID_DISPARITY = -1.0
INVALID_NORMAL = (0.0, 0.0, -1.0)

TEMPORAL_GROUP = 4


@dataclass(frozen=True)
class PackingDescriptor:
    """How videos are packed into latents; serialized with checkpoints."""

    patch: int = 8
    group: int = TEMPORAL_GROUP
    channels: int = 3
    first_frame_solo: bool = True

    def latent_channels(self) -> int:
        return self.channels * self.patch * self.patch * self.group

    def latent_shape(self, frames: int, height: int, width: int) -> tuple[int, int, int, int]:
        return (1 + (frames - 1) // self.group, height // self.patch,
                width // self.patch, self.latent_channels())

    def to_dict(self) -> dict:
        return {"patch": self.patch, "group": self.group, "channels": self.channels,
                "first_frame_solo": self.first_frame_solo}

    @staticmethod
    def from_dict(d: dict) -> "PackingDescriptor":
        return PackingDescriptor(patch=int(d["patch"]), group=int(d["group"]),
                                 channels=int(d["channels"]),
                                 first_frame_solo=bool(d["first_frame_solo"]))


@dataclass
class LatentGrid:
    """t_lat x h x w x c_lat reals plus the descriptor that made them."""

    data: np.ndarray
    desc: PackingDescriptor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass
class DisparityVideo:
    """Normalized disparity in [-1, 1] with the affine map needed to invert."""

    values: np.ndarray          # F x H x W float32
    d_min: float                # raw disparity range used for normalization
    d_max: float
    mask: np.ndarray            # F x H x W bool, False where fill value was used
    fill: float = field(default=INVALID_DISPARITY)

    def to_depth(self) -> np.ndarray:
        """Invert normalization and disparity on valid pixels; 0 elsewhere."""
        half_range = 0.5 * (self.d_max - self.d_min)
        disp = (self.values.astype(np.float64) + 1.0) * half_range + self.d_min
        depth = np.zeros_like(disp)
        ok = self.mask & (disp > 0)
        depth[ok] = 1.0 / disp[ok]
        return depth.astype(np.float32)


def _check_geometry(frames: int, height: int, width: int, desc: PackingDescriptor) -> None:
    if frames < 1 or (frames - 1) % desc.group != 0:
        raise ShapeError(f"frame count {frames} violates F == 1 (mod {desc.group})")
    if height % desc.patch != 0 or width % desc.patch != 0:
        raise ShapeError(f"H={height}, W={width} must be divisible by patch {desc.patch}")


def encode(video: np.ndarray, desc: PackingDescriptor) -> LatentGrid:
    """Pack an F x H x W x C video into a latent grid.

    Channel layout per latent cell: (group_frame, patch_row, patch_col, channel)
    flattened in that order. Frame 0 occupies the group_frame=0 slice of latent
    index 0, zero-padded elsewhere.
    """
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4:
        raise ShapeError(f"encode expects F x H x W x C, got {video.shape}")
    f, hh, ww, c = video.shape
    if c != desc.channels:
        raise ShapeError(f"encode: video has {c} channels, descriptor expects {desc.channels}")
    _check_geometry(f, hh, ww, desc)
    p, g = desc.patch, desc.group
    h, w = hh // p, ww // p
    t_lat = 1 + (f - 1) // g
    c_lat = desc.latent_channels()

    out = np.zeros((t_lat, h, w, c_lat), dtype=np.float32)
    # frame 0, solo: occupies the first C*p*p channels
    f0 = video[0].reshape(h, p, w, p, c).transpose(0, 2, 1, 3, 4).reshape(h, w, p * p * c)
    out[0, :, :, : p * p * c] = f0
    if f > 1:
        rest = video[1:].reshape(t_lat - 1, g, h, p, w, p, c)
        rest = rest.transpose(0, 2, 4, 1, 3, 5, 6).reshape(t_lat - 1, h, w, c_lat)
        out[1:] = rest
    return LatentGrid(out, desc)


def decode(grid: LatentGrid) -> np.ndarray:
    """Exact inverse of encode."""
    desc = grid.desc
    t_lat, h, w, c_lat = grid.data.shape
    if c_lat != desc.latent_channels():
        raise ShapeError(f"decode: latent has {c_lat} channels, descriptor expects "
                         f"{desc.latent_channels()}")
    p, g, c = desc.patch, desc.group, desc.channels
    f = 1 + (t_lat - 1) * g
    video = np.empty((f, h * p, w * p, c), dtype=np.float32)
    f0 = grid.data[0, :, :, : p * p * c].reshape(h, w, p, p, c)
    video[0] = f0.transpose(0, 2, 1, 3, 4).reshape(h * p, w * p, c)
    if f > 1:
        rest = grid.data[1:].reshape(t_lat - 1, h, w, g, p, p, c)
        rest = rest.transpose(0, 3, 1, 4, 2, 5, 6)
        video[1:] = rest.reshape(f - 1, h * p, w * p, c)
    return video


def depth_to_normalized_disparity(depth: np.ndarray, mask: np.ndarray | None = None,
                                  ) -> DisparityVideo:
    """1/depth on valid pixels, min-max mapped onto [-1, 1] per sequence.

    A degenerate range (single distinct disparity) maps to 0; invalid pixels
    carry the fill value -1. The (d_min, d_max) pair is recorded so the map
    can be inverted.
    """
    depth = np.asarray(depth, dtype=np.float32)
    if mask is None:
        mask = depth > 0
    mask = np.asarray(mask, dtype=bool) & (depth > 0)
    if not mask.any():
        raise DataError("disparity: sequence has no valid depth pixels")
    disp = np.zeros(depth.shape, dtype=np.float64)
    disp[mask] = 1.0 / depth[mask].astype(np.float64)
    d_min = float(disp[mask].min())
    d_max = float(disp[mask].max())
    values = np.full(depth.shape, INVALID_DISPARITY, dtype=np.float32)
    if d_max > d_min:
        values[mask] = (2.0 * (disp[mask] - d_min) / (d_max - d_min) - 1.0).astype(np.float32)
    else:
        values[mask] = 0.0
    return DisparityVideo(values=values, d_min=d_min, d_max=d_max, mask=mask)


def normals_to_signal(normals: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Unit normals are already a [-1, 1] signal; invalid pixels get (0,0,-1)."""
    normals = np.asarray(normals, dtype=np.float32)
    if normals.ndim != 4 or normals.shape[-1] != 3:
        raise ShapeError(f"normals_to_signal expects F x H x W x 3, got {normals.shape}")
    if mask is None:
        mask = np.linalg.norm(normals, axis=-1) > 0.5
    out = np.broadcast_to(np.asarray(INVALID_NORMAL, dtype=np.float32),
                          normals.shape).copy()
    out[mask] = normals[mask]
    return out


def signal_to_normals(signal: np.ndarray) -> tuple[np.ndarray, float]:
    """Renormalize decoded 3-vectors to unit length.

    Returns (normals, mean displacement of the renormalization). Zero-length
    vectors are mapped to the invalid fill.
    """
    signal = np.asarray(signal, dtype=np.float32)
    norms = np.linalg.norm(signal.astype(np.float64), axis=-1, keepdims=True)
    ok = norms[..., 0] > 1e-6
    unit = np.broadcast_to(np.asarray(INVALID_NORMAL, dtype=np.float32), signal.shape).copy()
    unit[ok] = (signal[ok] / norms[ok]).astype(np.float32)
    displacement = float(np.abs(norms[ok] - 1.0).mean()) if ok.any() else 0.0
    return unit, displacement


def rgb_to_signal(rgb: np.ndarray) -> np.ndarray:
    """[0,1] RGB -> [-1,1]."""
    return (np.asarray(rgb, dtype=np.float32) * 2.0 - 1.0)


def signal_to_rgb(signal: np.ndarray) -> np.ndarray:
    return np.clip((np.asarray(signal, dtype=np.float32) + 1.0) * 0.5, 0.0, 1.0)


def replicate_channels(mono: np.ndarray, n: int = 3) -> np.ndarray:
    """F x H x W -> F x H x W x n by replication (mono signals share the RGB codec)."""
    return np.repeat(np.asarray(mono, dtype=np.float32)[..., None], n, axis=-1)


def average_channels(signal: np.ndarray) -> np.ndarray:
    """Inverse of replicate_channels for decoded predictions."""
    return np.asarray(signal, dtype=np.float32).mean(axis=-1, dtype=np.float64).astype(np.float32)
