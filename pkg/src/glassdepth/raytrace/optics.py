"""Reflection, Snell refraction, and the Schlick reflectance approximation."""

from __future__ import annotations

import numpy as np

from ..errors import DataError


class _TIR:
    """Sentinel returned by refract when no transmitted ray exists."""

    def __repr__(self):
        return "TOTAL_INTERNAL_REFLECTION"


TOTAL_INTERNAL_REFLECTION = _TIR()

_UNIT_TOL = 1e-6


def _check_unit(v: np.ndarray, what: str) -> None:
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > _UNIT_TOL:
        raise DataError(f"{what} must be unit length, got norm {n:.8f}")


def reflect(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    return d - 2.0 * np.dot(d, n) * n


def refract(direction, normal, ior_in: float, ior_out: float):
    """Snell's law direction, or TOTAL_INTERNAL_REFLECTION.

    The normal is re-oriented against the incident direction internally, so
    callers may pass the geometric outward normal from either side.
    """
    d = np.asarray(direction, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    _check_unit(d, "refract: direction")
    _check_unit(n, "refract: normal")
    if ior_in < 1.0 or ior_out < 1.0:
        raise DataError(f"refract: iors must be >= 1, got {ior_in}, {ior_out}")
    cosi = -float(np.dot(d, n))
    if cosi < 0.0:
        n = -n
        cosi = -cosi
    eta = ior_in / ior_out
    sin2t = eta * eta * (1.0 - cosi * cosi)
    if sin2t > 1.0:
        return TOTAL_INTERNAL_REFLECTION
    cost = np.sqrt(1.0 - sin2t)
    t = eta * d + (eta * cosi - cost) * n
    return t / np.linalg.norm(t)


def fresnel_schlick(cos_theta: float, ior_in: float, ior_out: float) -> float:
    """R0 + (1 - R0)(1 - cos)^5 with R0 = ((n1 - n2)/(n1 + n2))^2."""
    if not 0.0 <= cos_theta <= 1.0 + 1e-9:
        raise DataError(f"fresnel: cos_theta {cos_theta} outside [0, 1]")
    r0 = ((ior_in - ior_out) / (ior_in + ior_out)) ** 2
    return float(r0 + (1.0 - r0) * (1.0 - min(cos_theta, 1.0)) ** 5)


# batched forms used by the renderer; semantics match the scalar ops

def reflect_batch(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def refract_batch(d: np.ndarray, n: np.ndarray, ior_in: np.ndarray,
                  ior_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Snell refraction against normals oriented opposing d.

    Returns (directions, tir_mask); directions are unspecified where tir.
    """
    cosi = -np.sum(d * n, axis=-1)
    eta = ior_in / ior_out
    sin2t = eta * eta * (1.0 - cosi * cosi)
    tir = sin2t > 1.0
    cost = np.sqrt(np.clip(1.0 - sin2t, 0.0, None))
    t = eta[:, None] * d + (eta * cosi - cost)[:, None] * n
    norm = np.linalg.norm(t, axis=-1, keepdims=True)
    t = np.divide(t, norm, out=np.zeros_like(t), where=norm > 0)
    return t, tir


def fresnel_schlick_batch(cos_theta: np.ndarray, ior_in: np.ndarray,
                          ior_out: np.ndarray) -> np.ndarray:
    r0 = ((ior_in - ior_out) / (ior_in + ior_out)) ** 2
    return r0 + (1.0 - r0) * (1.0 - np.clip(cos_theta, 0.0, 1.0)) ** 5
