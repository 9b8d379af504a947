"""Flow-matching fine-tuning of the LoRA adapters.

Each step draws a clip length F = 4N + 1 with N uniform over {0..5}; batches
with F == 1 may mix frame-wise (image) sources with single video frames, while
F > 1 draws from video sources only. Targets follow the straight
noise-to-data path: x_t = t*x1 + (1-t)*x0 and velocity x1 - x0; the loss is
the MSE between predicted and target velocity. Only adapter tensors ever
receive optimizer updates, so the base stays byte-identical.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import codec
from . import numcore as nc
from .backbone import BackboneConfig, VelocityBackbone
from .datasets import DatasetManifest, LoadedSequence, load_sequence
from .errors import DataError, NumericalError
from .lora import DEFAULT_ALPHA, DEFAULT_RANK, DEFAULT_TARGETS, apply_lora
from .modelstate import ModelState, save_model
from .numcore import AdamW, Tensor
from .codec import PackingDescriptor

N_SUPPORT = (0, 1, 2, 3, 4, 5)
FRAME_CHOICES = tuple(4 * n + 1 for n in N_SUPPORT)


def sample_frame_count(rng: np.random.Generator, n_max: int = 5) -> int:
    """F = 4N + 1 with N uniform over {0..n_max}."""
    return 4 * int(rng.integers(0, n_max + 1)) + 1


def make_training_example(x1: np.ndarray, t: float, x0: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Straight-path interpolant and its velocity target."""
    if x1.shape != x0.shape:
        raise DataError(f"latent/noise shapes differ: {x1.shape} vs {x0.shape}")
    if not 0.0 <= t <= 1.0:
        raise DataError(f"t={t} outside [0, 1]")
    x_t = np.float32(t) * x1 + np.float32(1.0 - t) * x0
    return x_t, x1 - x0


@dataclass
class TrainBatch:
    x_t: np.ndarray        # B x t x h x w x c, noisy target latents
    x_c: np.ndarray        # B x t x h x w x c, clean rgb latents
    v_target: np.ndarray   # B x t x h x w x c
    t: np.ndarray          # B
    frames: int
    sources: list[str]     # "video" | "image" per sample
    cond_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.frames > 1 and any(s == "image" for s in self.sources):
            raise DataError("image-set samples are only allowed when F == 1")


def compute_loss(batch: TrainBatch, model: VelocityBackbone) -> nc.Tensor:
    """Mean squared error between predicted and target velocity."""
    pred = model.forward(Tensor(batch.x_t), Tensor(batch.x_c), batch.t,
                         batch.cond_ids)
    diff = nc.sub(pred, Tensor(batch.v_target))
    return nc.mean_(nc.mul(diff, diff))


@dataclass
class SourceSequence:
    data: LoadedSequence
    source: str            # "video" | "image"
    weight: float = 1.0


class ClipSampler:
    """Draws (sequence, window) pairs honoring the co-training rule."""

    def __init__(self, sequences: list[SourceSequence]):
        if not sequences:
            raise DataError("sampler: no sequences available")
        self.sequences = sequences
        self.has_video = any(s.source == "video" for s in sequences)

    def pool_for(self, frames: int) -> list[SourceSequence]:
        if frames == 1:
            return [s for s in self.sequences if s.data.record.frames >= 1]
        return [s for s in self.sequences
                if s.source == "video" and s.data.record.frames >= frames]

    def resolve_frames(self, frames: int) -> int:
        """Image-only configurations fall back to F = 1."""
        if frames > 1 and not self.pool_for(frames):
            if not self.has_video:
                return 1
            raise DataError(f"sampler: no video sequence long enough for F={frames}")
        return frames

    def draw(self, frames: int, rng: np.random.Generator) -> tuple[SourceSequence, int]:
        pool = self.pool_for(frames)
        w = np.array([s.weight for s in pool], dtype=np.float64)
        idx = int(rng.choice(len(pool), p=w / w.sum()))
        seq = pool[idx]
        start = int(rng.integers(0, seq.data.record.frames - frames + 1))
        return seq, start


def encode_clip(seq: LoadedSequence, start: int, frames: int,
                desc: PackingDescriptor, target: str
                ) -> tuple[np.ndarray, np.ndarray]:
    """(rgb latent, target latent) for one window of a loaded sequence."""
    sl = slice(start, start + frames)
    rgb_sig = codec.rgb_to_signal(seq.rgb[sl])
    x_c = codec.encode(rgb_sig, desc).data
    if target == "depth":
        dv = codec.depth_to_normalized_disparity(seq.depth[sl], seq.valid[sl])
        sig = codec.replicate_channels(dv.values)
    elif target == "normal":
        sig = codec.normals_to_signal(seq.normal[sl], seq.valid[sl])
    else:
        raise DataError(f"unknown training target {target!r}")
    x_1 = codec.encode(sig, desc).data
    return x_c, x_1


@dataclass
class TrainerConfig:
    steps: int = 10_000
    batch_size: int = 8
    seed: int = 0
    target: str = "depth"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lora_rank: int = DEFAULT_RANK
    lora_alpha: float = DEFAULT_ALPHA
    lora_targets: tuple[str, ...] = DEFAULT_TARGETS
    patch: int = 8
    n_support_max: int = 5
    n_blocks: int = 4
    model_dim: int = 192
    n_heads: int = 6
    mlp_ratio: int = 4
    cond_source: str = "null"
    checkpoint_every: int = 2000
    log_every: int = 25
    out_dir: str = "run"

    @staticmethod
    def from_dict(d: dict) -> "TrainerConfig":
        cfg = TrainerConfig()
        valid = set(cfg.__dataclass_fields__)
        for k, v in d.items():
            if k not in valid:
                raise DataError(f"unknown trainer config key {k!r}")
            setattr(cfg, k, tuple(v) if k == "lora_targets" else v)
        return cfg


class Trainer:
    def __init__(self, config: TrainerConfig, sequences: list[SourceSequence]):
        self.config = config
        self.sampler = ClipSampler(sequences)
        first = sequences[0].data
        h, w = first.record.height, first.record.width
        if h % config.patch or w % config.patch:
            raise DataError(f"frames {h}x{w} not divisible by patch {config.patch}")
        self.desc = PackingDescriptor(patch=config.patch, channels=3)
        c_lat = self.desc.latent_channels()
        f_max = 4 * config.n_support_max + 1
        model_cfg = BackboneConfig(
            in_channels=2 * c_lat, out_channels=c_lat, n_blocks=config.n_blocks,
            model_dim=config.model_dim, n_heads=config.n_heads,
            mlp_ratio=config.mlp_ratio, max_t=1 + (f_max - 1) // 4,
            max_h=h // config.patch, max_w=w // config.patch,
            cond_source=config.cond_source)
        self.model = VelocityBackbone(model_cfg, seed=config.seed)
        self.adapters = apply_lora(self.model, rank=config.lora_rank,
                                   alpha=config.lora_alpha, seed=config.seed,
                                   targets=tuple(config.lora_targets))
        self.trainable = {name: p for name, p in self.model.param_dict().items()
                          if p.requires_grad}
        self.optimizer = AdamW(self.trainable, lr=config.lr, beta1=config.beta1,
                               beta2=config.beta2, eps=config.eps,
                               weight_decay=config.weight_decay)
        self.rng = np.random.default_rng(config.seed)
        self.step = 0
        self.loss_history: list[float] = []
        self.f_history: list[int] = []
        self.image_sample_history: list[int] = []

    # -- batches -------------------------------------------------------------

    def next_batch(self) -> TrainBatch:
        frames = self.sampler.resolve_frames(
            sample_frame_count(self.rng, self.config.n_support_max))
        xs_c, xs_t, vs, ts, sources, tags = [], [], [], [], [], []
        for _ in range(self.config.batch_size):
            seq, start = self.sampler.draw(frames, self.rng)
            x_c, x_1 = encode_clip(seq.data, start, frames, self.desc,
                                   self.config.target)
            t = float(self.rng.uniform(0.0, 1.0))
            x_0 = self.rng.standard_normal(x_1.shape).astype(np.float32)
            x_t, v = make_training_example(x_1, t, x_0)
            xs_c.append(x_c)
            xs_t.append(x_t)
            vs.append(v)
            ts.append(t)
            sources.append(seq.source)
            tags.append(seq.data.record.tag_id)
        return TrainBatch(
            x_t=np.stack(xs_t), x_c=np.stack(xs_c), v_target=np.stack(vs),
            t=np.array(ts), frames=frames, sources=sources,
            cond_ids=np.array(tags, dtype=np.int64))

    # -- steps ----------------------------------------------------------------

    def train_step(self) -> float:
        batch = self.next_batch()
        self.optimizer.zero_grad()
        loss = compute_loss(batch, self.model)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(
                f"training loss is not finite at step {self.step} "
                f"(F={batch.frames}, sources={batch.sources})")
        nc.backward(loss)
        self.optimizer.step()
        self.step += 1
        self.loss_history.append(value)
        self.f_history.append(batch.frames)
        self.image_sample_history.append(sum(s == "image" for s in batch.sources))
        return value

    def model_state(self) -> ModelState:
        return ModelState(model=self.model, adapters=self.adapters,
                          desc=self.desc, target=self.config.target,
                          lora_rank=self.config.lora_rank,
                          lora_alpha=self.config.lora_alpha, step=self.step,
                          seed=self.config.seed)

    def run(self, progress: bool = False) -> str:
        """Full training loop; returns the final checkpoint path."""
        cfg = self.config
        os.makedirs(cfg.out_dir, exist_ok=True)
        log_path = os.path.join(cfg.out_dir, "metrics.csv")
        new_log = not os.path.exists(log_path)
        with open(log_path, "a", newline="") as logf:
            writer = csv.writer(logf)
            if new_log:
                writer.writerow(["step", "F", "loss", "lr", "image_samples"])
            while self.step < cfg.steps:
                value = self.train_step()
                if self.step % cfg.log_every == 0 or self.step == cfg.steps:
                    writer.writerow([self.step, self.f_history[-1],
                                     f"{value:.6f}", cfg.lr,
                                     self.image_sample_history[-1]])
                    logf.flush()
                if progress and self.step % max(cfg.log_every * 4, 1) == 0:
                    recent = float(np.mean(self.loss_history[-50:]))
                    print(f"step {self.step}/{cfg.steps} loss {recent:.4f}", flush=True)
                if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    save_model(os.path.join(cfg.out_dir, f"ckpt_{self.step:07d}.ckpt"),
                               self.model_state(), self.optimizer.state)
        final = os.path.join(cfg.out_dir, "final.ckpt")
        save_model(final, self.model_state(), self.optimizer.state)
        return final


def sequences_from_manifests(video: list[tuple[str, DatasetManifest]],
                             image: list[tuple[str, DatasetManifest]] | None = None,
                             weights: dict[str, float] | None = None,
                             loader=load_sequence) -> list[SourceSequence]:
    """Load every referenced sequence into memory, tagging its source kind."""
    weights = weights or {}
    out: list[SourceSequence] = []
    for source, sets in (("video", video), ("image", image or [])):
        for root, manifest in sets:
            w = weights.get(source, 1.0)
            for rec in manifest.sequences:
                out.append(SourceSequence(data=loader(root, rec),
                                          source=source, weight=w))
    if not out:
        raise DataError("no training sequences found in the given manifests")
    return out


def smoothed(values: list[float], window: int = 100) -> np.ndarray:
    """Trailing moving average used for the loss-decrease checks."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        return v
    kernel = np.ones(min(window, len(v))) / min(window, len(v))
    return np.convolve(v, kernel, mode="valid")
