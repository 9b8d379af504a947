"""Low-rank adapters over backbone projections.

A wrapped projection computes W x + (alpha/r) * B(A x) with the base W frozen.
A starts Gaussian and B at zero, so a fresh adapter is exactly the identity on
behavior, and during fine-tuning only the A/B factors (across all wrapped
projections) receive gradients.

The base network here is random rather than pretrained, and its output head
is zero-initialized; without an adapter on the head no gradient could ever
reach the trunk, so the head is part of the default target list.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .backbone import Linear, VelocityBackbone
from .errors import DataError
from .numcore import Tensor

DEFAULT_TARGETS = ("wq", "wk", "wv", "wo", "mlp.w1", "mlp.w2", "head")
DEFAULT_RANK = 16
DEFAULT_ALPHA = 16.0


class LoraLinear:
    """A frozen Linear plus trainable low-rank delta."""

    def __init__(self, base: Linear, rank: int, alpha: float,
                 rng: np.random.Generator, target: str):
        d_in, d_out = base.w.shape
        if rank < 1 or rank > min(d_in, d_out):
            raise DataError(f"lora rank {rank} out of range for {d_in}x{d_out} "
                            f"projection {target!r}")
        self.base = base
        base.w.requires_grad = False
        if base.b is not None:
            base.b.requires_grad = False
        self.rank = rank
        self.alpha = alpha
        self.target = target
        self.merged = False
        self.a = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, rank))
                        .astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros((rank, d_out), dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.base(x)
        delta = nc.matmul(nc.matmul(x, self.a), self.b)
        return nc.add(y, nc.mul(delta, Tensor(self.alpha / self.rank)))

    def delta_weight(self) -> np.ndarray:
        return (self.alpha / self.rank) * (self.a.data.astype(np.float64)
                                           @ self.b.data.astype(np.float64))

    def merge(self) -> Linear:
        """Fold the delta into a plain Linear; a second merge is an error."""
        if self.merged:
            raise DataError(f"adapter {self.target!r} already merged")
        self.merged = True
        merged = Linear.__new__(Linear)
        merged.w = Tensor((self.base.w.data.astype(np.float64)
                           + self.delta_weight()).astype(np.float32))
        merged.b = None if self.base.b is None else Tensor(self.base.b.data.copy())
        return merged

    def param_dict(self, prefix: str) -> dict[str, Tensor]:
        out = self.base.param_dict(prefix)
        out[f"{prefix}.lora_a"] = self.a
        out[f"{prefix}.lora_b"] = self.b
        return out


def _linear_slots(model: VelocityBackbone):
    """(owner, attribute, target-name) for every projection LoRA can wrap."""
    slots = []
    for i, blk in enumerate(model.blocks):
        for name in ("wq", "wk", "wv", "wo"):
            slots.append((blk.attn, name, f"block{i}.attn.{name}", name))
        slots.append((blk.mlp, "w1", f"block{i}.mlp.w1", "mlp.w1"))
        slots.append((blk.mlp, "w2", f"block{i}.mlp.w2", "mlp.w2"))
    slots.append((model, "head", "head", "head"))
    return slots


def apply_lora(model: VelocityBackbone, rank: int = DEFAULT_RANK,
               alpha: float = DEFAULT_ALPHA, seed: int = 0,
               targets: tuple[str, ...] = DEFAULT_TARGETS) -> dict[str, LoraLinear]:
    """Wrap matching projections in place and freeze everything else.

    Returns the adapters keyed by their fully qualified target name.
    """
    for p in model.param_dict().values():
        p.requires_grad = False
    rng = np.random.default_rng(seed)
    adapters: dict[str, LoraLinear] = {}
    for owner, attr, full_name, kind in _linear_slots(model):
        if kind not in targets:
            continue
        base = getattr(owner, attr)
        if isinstance(base, LoraLinear):
            raise DataError(f"{full_name} is already wrapped")
        wrapped = LoraLinear(base, rank, alpha, rng, target=full_name)
        setattr(owner, attr, wrapped)
        adapters[full_name] = wrapped
    if not adapters:
        raise DataError(f"no projection matched targets {targets}")
    return adapters


def merge_lora(model: VelocityBackbone) -> int:
    """Fold every adapter back into its base projection; returns the count."""
    n = 0
    for owner, attr, full_name, _ in _linear_slots(model):
        layer = getattr(owner, attr)
        if isinstance(layer, LoraLinear):
            setattr(owner, attr, layer.merge())
            n += 1
    return n


def adapter_params(adapters: dict[str, LoraLinear]) -> dict[str, Tensor]:
    out = {}
    for name, ad in adapters.items():
        out[f"lora.{name}.a"] = ad.a
        out[f"lora.{name}.b"] = ad.b
    return out


def trainable_param_count(adapters: dict[str, LoraLinear]) -> int:
    return sum(ad.a.size + ad.b.size for ad in adapters.values())
