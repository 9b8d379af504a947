"""Compact diffusion transformer translating RGB latents to velocity fields.

The noisy target latent and the clean RGB latent are concatenated along
channels, flattened to spatiotemporal tokens, and processed by pre-norm
attention/MLP blocks whose layer norms are modulated by a conditioning vector
(timestep embedding plus a null or scene-tag embedding). Attention is joint
over all tokens, which is where temporal consistency comes from. The output
projection starts at zero, so an untrained model predicts the zero velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import DataError, ShapeError
from .numcore import Tensor

COND_SOURCES = ("null", "scene_tag")
TIME_FREQ_SCALE = 25.0     # max angular rate of the sinusoidal time features


@dataclass
class BackboneConfig:
    in_channels: int
    out_channels: int
    n_blocks: int = 4
    model_dim: int = 192
    n_heads: int = 6
    mlp_ratio: int = 4
    max_t: int = 6
    max_h: int = 8
    max_w: int = 8
    cond_source: str = "null"
    n_scene_tags: int = 8

    def __post_init__(self):
        if self.model_dim % self.n_heads != 0:
            raise DataError(f"model_dim {self.model_dim} not divisible by "
                            f"n_heads {self.n_heads}")
        if self.cond_source not in COND_SOURCES:
            raise DataError(f"cond_source must be one of {COND_SOURCES}")

    @property
    def max_tokens(self) -> int:
        return self.max_t * self.max_h * self.max_w

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "in_channels", "out_channels", "n_blocks", "model_dim", "n_heads",
            "mlp_ratio", "max_t", "max_h", "max_w", "cond_source", "n_scene_tags")}

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        return BackboneConfig(**d)


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 std: float = 0.02, zero: bool = False, bias: bool = True):
        w = np.zeros((d_in, d_out)) if zero else rng.normal(0.0, std, (d_in, d_out))
        self.w = Tensor(w.astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nc.matmul(x, self.w)
        return nc.add(y, self.b) if self.b is not None else y

    def param_dict(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    x = nc.reshape(x, (b, n, n_heads, d // n_heads))
    return nc.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, hd = x.shape
    return nc.reshape(nc.transpose(x, (0, 2, 1, 3)), (b, n, h * hd))


class Attention:
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(dim // n_heads)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        q = _split_heads(self.wq(x), self.n_heads)
        k = _split_heads(self.wk(x), self.n_heads)
        v = _split_heads(self.wv(x), self.n_heads)
        scores = nc.mul(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), Tensor(self.scale))
        attn = nc.softmax(scores, axis=-1)
        return self.wo(_merge_heads(nc.matmul(attn, v)))

    def param_dict(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("wq", "wk", "wv", "wo"):
            out.update(getattr(self, name).param_dict(f"{prefix}.{name}"))
        return out


class Mlp:
    def __init__(self, dim: int, ratio: int, rng: np.random.Generator):
        self.w1 = Linear(dim, dim * ratio, rng)
        self.w2 = Linear(dim * ratio, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(nc.gelu(self.w1(x)))

    def param_dict(self, prefix: str) -> dict[str, Tensor]:
        return {**self.w1.param_dict(f"{prefix}.w1"),
                **self.w2.param_dict(f"{prefix}.w2")}


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    # shift/scale are [B, D]; broadcast over tokens
    b, d = shift.shape
    shift = nc.reshape(shift, (b, 1, d))
    scale = nc.reshape(scale, (b, 1, d))
    return nc.add(nc.mul(x, nc.add(scale, Tensor(1.0))), shift)


class Block:
    """Pre-norm attention + MLP with conditioning-driven modulation.

    The modulation projection is part of the frozen base, so its gate biases
    start at 1 (blocks alive from the first step) rather than at 0.
    """

    def __init__(self, dim: int, n_heads: int, ratio: int, rng: np.random.Generator):
        self.attn = Attention(dim, n_heads, rng)
        self.mlp = Mlp(dim, ratio, rng)
        self.ada = Linear(dim, 6 * dim, rng, std=0.02)
        gates = np.zeros(6 * dim, dtype=np.float32)
        gates[2 * dim:3 * dim] = 1.0
        gates[5 * dim:] = 1.0
        self.ada.b = Tensor(gates, requires_grad=True)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        mod = self.ada(nc.gelu(cond))
        sh1, sc1, g1, sh2, sc2, g2 = nc.split(mod, 6, axis=-1)
        b, d = sh1.shape
        h = _modulate(nc.layer_norm(x), sh1, sc1)
        x = nc.add(x, nc.mul(self.attn(h), nc.reshape(g1, (b, 1, d))))
        h = _modulate(nc.layer_norm(x), sh2, sc2)
        x = nc.add(x, nc.mul(self.mlp(h), nc.reshape(g2, (b, 1, d))))
        return x

    def param_dict(self, prefix: str) -> dict[str, Tensor]:
        return {**self.attn.param_dict(f"{prefix}.attn"),
                **self.mlp.param_dict(f"{prefix}.mlp"),
                **self.ada.param_dict(f"{prefix}.ada")}


class VelocityBackbone:
    """predict velocity = f(concat(noisy target latent, rgb latent), t, cond)."""

    def __init__(self, config: BackboneConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.model_dim
        self.in_proj = Linear(config.in_channels, d, rng)
        self.pos_t = Tensor(rng.normal(0, 0.02, (config.max_t, d)).astype(np.float32),
                            requires_grad=True)
        self.pos_h = Tensor(rng.normal(0, 0.02, (config.max_h, d)).astype(np.float32),
                            requires_grad=True)
        self.pos_w = Tensor(rng.normal(0, 0.02, (config.max_w, d)).astype(np.float32),
                            requires_grad=True)
        self.time_mlp1 = Linear(d, d, rng)
        self.time_mlp2 = Linear(d, d, rng)
        if config.cond_source == "null":
            self.cond_table = Tensor(rng.normal(0, 0.02, (1, d)).astype(np.float32),
                                     requires_grad=True)
        else:
            self.cond_table = Tensor(
                rng.normal(0, 0.02, (config.n_scene_tags, d)).astype(np.float32),
                requires_grad=True)
        self.blocks = [Block(d, config.n_heads, config.mlp_ratio, rng)
                       for _ in range(config.n_blocks)]
        self.ada_out = Linear(d, 2 * d, rng, std=0.02)
        self.head = Linear(d, config.out_channels, rng, zero=True)

    # -- parameters ---------------------------------------------------------

    def param_dict(self) -> dict[str, Tensor]:
        params = {"in_proj.w": self.in_proj.w, "in_proj.b": self.in_proj.b,
                  "pos_t": self.pos_t, "pos_h": self.pos_h, "pos_w": self.pos_w,
                  "cond_table": self.cond_table}
        params.update(self.time_mlp1.param_dict("time_mlp1"))
        params.update(self.time_mlp2.param_dict("time_mlp2"))
        for i, blk in enumerate(self.blocks):
            params.update(blk.param_dict(f"block{i}"))
        params.update(self.ada_out.param_dict("ada_out"))
        params.update(self.head.param_dict("head"))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.param_dict().values())

    # -- embeddings ---------------------------------------------------------

    def _time_features(self, t: np.ndarray) -> np.ndarray:
        d = self.config.model_dim
        half = d // 2
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
        ang = TIME_FREQ_SCALE * t[:, None] * freqs[None, :]
        return np.concatenate([np.cos(ang), np.sin(ang)], axis=1).astype(np.float32)

    def embed_timestep(self, t) -> Tensor:
        """Smooth deterministic embedding of t in [0, 1]; [B, D] for array t."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if (t < 0).any() or (t > 1).any():
            raise DataError(f"timestep outside [0, 1]: {t}")
        feats = Tensor(self._time_features(t))
        return self.time_mlp2(nc.gelu(self.time_mlp1(feats)))

    def _positional(self, t_lat: int, h: int, w: int) -> Tensor:
        cfg = self.config
        if t_lat > cfg.max_t or h > cfg.max_h or w > cfg.max_w:
            raise ShapeError(f"latent grid {t_lat}x{h}x{w} exceeds configured "
                             f"maxima {cfg.max_t}x{cfg.max_h}x{cfg.max_w}")
        d = cfg.model_dim
        pt = nc.reshape(nc.slice_axis(self.pos_t, 0, 0, t_lat), (t_lat, 1, 1, d))
        ph = nc.reshape(nc.slice_axis(self.pos_h, 0, 0, h), (1, h, 1, d))
        pw = nc.reshape(nc.slice_axis(self.pos_w, 0, 0, w), (1, 1, w, d))
        pos = nc.add(nc.add(pt, ph), pw)
        return nc.reshape(pos, (1, t_lat * h * w, d))

    def _condition(self, t: np.ndarray, cond_ids: np.ndarray | None) -> Tensor:
        t_emb = self.embed_timestep(t)
        if self.config.cond_source == "null" or cond_ids is None:
            ids = np.zeros(len(t), dtype=np.int64)
        else:
            ids = np.asarray(cond_ids, dtype=np.int64) % self.cond_table.shape[0]
        return nc.add(t_emb, nc.embedding(self.cond_table, ids))

    # -- forward ------------------------------------------------------------

    def forward(self, x_d: Tensor, x_c: Tensor, t: np.ndarray,
                cond_ids: np.ndarray | None = None) -> Tensor:
        """Batched velocity prediction.

        x_d: [B, t_lat, h, w, c_d] noisy target latent; x_c: same grid with
        c_c channels; t: [B] times in [0,1]. Output matches x_d's shape.
        """
        if x_d.shape[:4] != x_c.shape[:4]:
            raise ShapeError(f"latent grids disagree: {x_d.shape} vs {x_c.shape}")
        b, t_lat, h, w, c_d = x_d.shape
        if c_d + x_c.shape[-1] != self.config.in_channels:
            raise ShapeError(f"channel concat {c_d}+{x_c.shape[-1]} != configured "
                             f"in_channels {self.config.in_channels}")
        if c_d != self.config.out_channels:
            raise ShapeError(f"target latent channels {c_d} != configured "
                             f"out_channels {self.config.out_channels}")
        x = nc.concat_channel(x_d, x_c)
        n = t_lat * h * w
        tokens = nc.reshape(x, (b, n, self.config.in_channels))
        tokens = nc.add(self.in_proj(tokens), self._positional(t_lat, h, w))
        cond = self._condition(np.asarray(t, dtype=np.float64), cond_ids)
        for blk in self.blocks:
            tokens = blk(tokens, cond)
        sh, sc = nc.split(self.ada_out(nc.gelu(cond)), 2, axis=-1)
        out = self.head(_modulate(nc.layer_norm(tokens), sh, sc))
        return nc.reshape(out, (b, t_lat, h, w, c_d))

    def predict_velocity(self, x_d: np.ndarray, x_c: np.ndarray, t: float,
                         cond_id: int | None = None) -> np.ndarray:
        """Single-sample convenience wrapper around forward()."""
        with nc.no_grad():
            out = self.forward(Tensor(x_d[None]), Tensor(x_c[None]),
                               np.array([t]),
                               None if cond_id is None else np.array([cond_id]))
        return out.data[0]


def randomize_all_weights(model: VelocityBackbone, seed: int = 0) -> None:
    """Overwrite every parameter (including zero-init ones) with noise.

    Test helper for gradient-flow checks, where structurally-zero inits would
    otherwise mask wiring bugs.
    """
    rng = np.random.default_rng(seed)
    for p in model.param_dict().values():
        p.data = rng.normal(0, 0.05, p.shape).astype(np.float32)
