"""Central finite-difference gradient checking for the tape engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn, inputs: list[Tensor], wrt: int, h: float = 1e-3) -> np.ndarray:
    """Central differences of a scalar-valued fn in the wrt-th input."""
    x = inputs[wrt]
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = float(fn(*inputs).data)
        flat[i] = orig - h
        lm = float(fn(*inputs).data)
        flat[i] = orig
        gflat[i] = (lp - lm) / (2.0 * h)
    return g


def check_gradients(fn, inputs: list[Tensor], h: float = 1e-3,
                    rel_tol: float = 1e-3) -> float:
    """Compare tape gradients of scalar fn against central differences.

    Returns the worst relative error over all inputs with requires_grad.
    Relative error uses a unit floor so near-zero components are compared
    absolutely.
    """
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    backward(loss)
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        ag = t.grad if t.grad is not None else np.zeros(t.shape, dtype=np.float32)
        ng = numerical_grad(fn, inputs, i, h=h)
        denom = np.maximum(np.maximum(np.abs(ng), np.abs(ag)), 1.0)
        rel = np.abs(ag - ng) / denom
        worst = max(worst, float(rel.max()))
    if worst >= rel_tol:
        raise AssertionError(f"gradient check failed: worst rel err {worst:.3e} >= {rel_tol:g}")
    return worst
