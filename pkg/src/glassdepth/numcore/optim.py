"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ShapeError
from .tensor import Tensor


@dataclass
class OptimizerState:
    """Per-parameter moments plus the shared step counter and hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState) -> OptimizerState:
    """One bias-corrected AdamW update, in place on the params.

    Weight decay is decoupled: p <- p - lr*wd*p, independent of the moments.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"adamw: non-finite gradient for {name!r} "
                                 f"(shape {g.shape}, step {state.step})")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in grads:
            continue
        g = grads[name].astype(np.float32, copy=False)
        if g.shape != p.shape:
            raise ShapeError(f"adamw: grad shape {g.shape} != param shape {p.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m[:] = state.beta1 * m + (1.0 - state.beta1) * g
        v[:] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        upd = mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            upd = upd + state.weight_decay * p.data
        p.data = p.data - np.float32(state.lr) * upd
    return state


class AdamW:
    """Thin object wrapper over adamw_step for a fixed parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                                    weight_decay=weight_decay)

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            if p.grad is not None:
                grads[name] = p.grad
        adamw_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
