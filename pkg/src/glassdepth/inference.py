"""Arbitrary-length video-to-depth/normal inference.

The input is split into overlapping fixed-length segments; each segment is
denoised independently by Euler-integrating the learned velocity field from
shared noise, decoded to pixel space, and blended into the output canvas with
complementary linear ramp weights over the overlaps. Predictions are
affine-relative (normalized disparity / unit normals), matching the
evaluation protocol; no metric scale is recovered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec
from . import numcore as nc
from .backbone import VelocityBackbone
from .codec import PackingDescriptor
from .errors import DataError, NumericalError, ShapeError
from .numcore import Tensor

TARGETS = ("depth", "normal")


@dataclass
class InferenceConfig:
    steps: int = 5
    segment_frames: int = 21
    overlap: int = 8
    seed: int = 0
    target: str = "depth"

    def validate(self) -> None:
        if self.steps < 1:
            raise DataError("denoising steps K must be >= 1")
        if self.segment_frames % 4 != 1:
            raise DataError(f"segment length {self.segment_frames} violates "
                            f"F == 1 (mod 4)")
        if not 0 < self.overlap < self.segment_frames:
            raise DataError(f"overlap {self.overlap} must satisfy "
                            f"0 < O < {self.segment_frames}")
        if self.overlap % 4 != 0:
            raise DataError(f"overlap {self.overlap} must be a multiple of 4")
        if self.target not in TARGETS:
            raise DataError(f"target must be one of {TARGETS}")


@dataclass
class StitchPlan:
    """Frame windows plus the incoming blend ramp over each pairwise overlap."""

    windows: list[tuple[int, int]]
    ramps: list[np.ndarray] = field(default_factory=list)  # ramps[i]: window i vs i-1

    def coverage_ok(self, total: int) -> bool:
        covered = np.zeros(total, dtype=int)
        for s, e in self.windows:
            covered[s:e] += 1
        return bool((covered >= 1).all() and (covered <= 2).all())


def _ramp(m: int) -> np.ndarray:
    """Linear complementary ramp over m overlapped frames, strictly interior."""
    return (np.arange(1, m + 1) / (m + 1)).astype(np.float64)


def plan_segments(f_total: int, f_seg: int, overlap: int) -> StitchPlan:
    """Window layout covering [0, f_total) with pairwise-only overlaps.

    Interior windows step by f_seg - overlap; the final window is end-aligned,
    which can enlarge the last overlap. Any window that an end-aligned final
    would cover three-deep is dropped.
    """
    if f_total < 1:
        raise DataError(f"cannot plan segments for {f_total} frames")
    if f_total <= f_seg:
        return StitchPlan(windows=[(0, f_total)], ramps=[np.empty(0)])
    step = f_seg - overlap
    starts = [0]
    while starts[-1] + f_seg < f_total:
        starts.append(starts[-1] + step)
    if starts[-1] + f_seg > f_total:
        final = f_total - f_seg
        while len(starts) >= 2 and starts[-2] + f_seg > final:
            starts.pop()                      # would be covered three-deep
        if starts[-1] != final:
            starts.append(final)
    windows = [(s, s + f_seg) for s in starts]
    ramps: list[np.ndarray] = [np.empty(0)]
    for (ps, pe), (s, e) in zip(windows, windows[1:]):
        ramps.append(_ramp(pe - s))
    return StitchPlan(windows=windows, ramps=ramps)


def denoise_segment(x_c: np.ndarray, model: VelocityBackbone, steps: int,
                    noise: np.ndarray, cond_id: int | None = None) -> np.ndarray:
    """Euler-integrate dx/dt = u(concat(x, x_c), t) from t=0 to 1.

    The velocity field is exactly integrated by Euler when it is constant in
    t, which is the straight-path training target.
    """
    if x_c.shape[:3] != noise.shape[:3]:
        raise ShapeError(f"rgb latent {x_c.shape} and noise {noise.shape} disagree")
    x = noise.astype(np.float32).copy()
    dt = np.float32(1.0 / steps)
    xc_t = Tensor(x_c[None])
    cond = None if cond_id is None else np.array([cond_id])
    with nc.no_grad():
        for i in range(steps):
            t = np.array([i / steps])
            v = model.forward(Tensor(x[None]), xc_t, t, cond).data[0]
            x = x + dt * v
    return x


def _pad_frames(video: np.ndarray, segment_frames: int) -> tuple[np.ndarray, int]:
    """End-pad with the last frame up to the smallest F' >= F with F' == 1 (mod 4)."""
    f = video.shape[0]
    target = f
    while target % 4 != 1:
        target += 1
    pad = target - f
    if pad == 0:
        return video, 0
    tail = np.repeat(video[-1:], pad, axis=0)
    return np.concatenate([video, tail], axis=0), pad


@dataclass
class InferenceResult:
    disparity: np.ndarray | None = None   # F x H x W, model-space in ~[-1,1]
    normals: np.ndarray | None = None     # F x H x W x 3 unit vectors
    renorm_displacement: float = 0.0
    plan: StitchPlan | None = None


def infer_video(rgb_video: np.ndarray, model: VelocityBackbone,
                desc: PackingDescriptor, config: InferenceConfig,
                cond_id: int | None = None) -> InferenceResult:
    """RGB video [0,1] -> stitched relative prediction.

    Segments are denoised from one shared noise draw (fixed seed), decoded to
    pixel space, and blended as canvas + w*(incoming - canvas): windows that
    agree on an overlap pass through unchanged.
    """
    config.validate()
    video = np.asarray(rgb_video, dtype=np.float32)
    if video.ndim != 4 or video.shape[-1] != 3:
        raise ShapeError(f"expected F x H x W x 3 rgb video, got {video.shape}")
    f_total, h, w = video.shape[:3]
    if h % desc.patch or w % desc.patch:
        raise ShapeError(f"frame size {h}x{w} not divisible by patch {desc.patch}")

    plan = plan_segments(f_total, config.segment_frames, config.overlap)
    rng = np.random.default_rng(config.seed)
    max_shape = desc.latent_shape(config.segment_frames, h, w)
    shared_noise = rng.standard_normal(max_shape).astype(np.float32)

    channels = 1 if config.target == "depth" else 3
    canvas = np.zeros((f_total, h, w, channels), dtype=np.float64)
    filled = 0                                  # frames finalized so far
    for (start, end), ramp in zip(plan.windows, plan.ramps):
        clip, pad = _pad_frames(video[start:end], config.segment_frames)
        x_c = codec.encode(codec.rgb_to_signal(clip), desc).data
        t_lat = x_c.shape[0]
        x_hat = denoise_segment(x_c, model, config.steps,
                                shared_noise[:t_lat], cond_id=cond_id)
        sig = codec.decode(codec.LatentGrid(x_hat, desc))
        if pad:
            sig = sig[:-pad]
        if config.target == "depth":
            piece = codec.average_channels(sig)[..., None].astype(np.float64)
        else:
            piece = sig.astype(np.float64)
        if start >= filled:
            canvas[start:end] = piece
        else:
            m = filled - start                  # overlap with what's already there
            assert m == len(ramp), "plan ramps out of sync with windows"
            wgt = ramp[:, None, None, None]
            canvas[start:filled] += wgt * (piece[:m] - canvas[start:filled])
            canvas[filled:end] = piece[m:]
        filled = end

    if not np.isfinite(canvas).all():
        raise NumericalError("inference produced non-finite values")
    if config.target == "depth":
        return InferenceResult(disparity=canvas[..., 0].astype(np.float32), plan=plan)
    normals, disp = codec.signal_to_normals(canvas.astype(np.float32))
    return InferenceResult(normals=normals, renorm_displacement=disp, plan=plan)
