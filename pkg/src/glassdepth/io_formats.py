"""File formats: PFM float maps, PNG images, and preview colorization.

PFM follows the usual convention: 'Pf' single channel / 'PF' three channels,
negative scale meaning little-endian, scanlines stored bottom-to-top. Depth is
stored in meters; 8-bit PNG holds RGB frames and boolean masks.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import DataError


def write_pfm(path: str, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise DataError(f"pfm: expected HxW or HxWx3, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")                       # negative scale: little-endian
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise DataError(f"{path}: not a PFM file (tag {tag!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * channels
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(count * 4)
        if len(buf) != count * 4:
            raise DataError(f"{path}: truncated PFM payload")
        data = np.frombuffer(buf, dtype=dtype).astype(np.float32)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(data).copy()


def write_png(path: str, rgb01: np.ndarray) -> None:
    arr = np.asarray(rgb01)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_png(path: str) -> np.ndarray:
    """PNG -> float32 in [0, 1] (RGB) or bool (mode L masks)."""
    img = Image.open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8) > 127
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def write_mask_png(path: str, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, dtype=bool) * np.uint8(255)), mode="L").save(path)


# small built-in colormap for previews: dark blue -> cyan -> yellow -> red
_STOPS = np.array([
    [0.05, 0.03, 0.25],
    [0.02, 0.35, 0.65],
    [0.10, 0.70, 0.55],
    [0.90, 0.85, 0.15],
    [0.85, 0.20, 0.10],
])


def colorize(values: np.ndarray, mask: np.ndarray | None = None,
             vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Scalar map -> RGB [0,1] via the built-in ramp; masked-out pixels black."""
    v = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    sel = v[mask]
    if sel.size == 0:
        return np.zeros(v.shape + (3,), dtype=np.float32)
    lo = float(sel.min()) if vmin is None else vmin
    hi = float(sel.max()) if vmax is None else vmax
    t = np.zeros_like(v) if hi <= lo else np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    x = t * (len(_STOPS) - 1)
    i0 = np.clip(np.floor(x).astype(int), 0, len(_STOPS) - 2)
    frac = (x - i0)[..., None]
    rgb = _STOPS[i0] * (1 - frac) + _STOPS[i0 + 1] * frac
    rgb[~mask] = 0.0
    return rgb.astype(np.float32)


def colorize_normals(normals: np.ndarray) -> np.ndarray:
    """Unit normals -> the usual (n+1)/2 RGB encoding."""
    return ((np.asarray(normals, dtype=np.float32) + 1.0) * 0.5).clip(0.0, 1.0)
