"""Image and map file formats.

Depth maps are 16-bit grayscale PNGs holding millimetres (0 = missing).
Float maps (normals, radiance, probability) use a small binary sidecar: the
magic ``RNBVMAP1``, then little-endian uint32 width, height and channel
count, then row-major float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"RNBVMAP1"
_HEADER = struct.Struct("<8sIII")


def write_depth_png(path, depth, scale: float = 1.0) -> None:
    """Save depth in units of ``1/scale`` mm; NaN and nonpositive values become 0."""
    d = np.asarray(depth, dtype=np.float64) * scale
    out = np.where(np.isfinite(d) & (d > 0), np.rint(d), 0)
    if out.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range; lower the scale")
    Image.fromarray(out.astype(np.uint16)).save(path)


def read_depth_png(path, scale: float = 1.0) -> np.ndarray:
    raw = np.asarray(Image.open(path)).astype(np.float64)
    if raw.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel")
    return np.where(raw > 0, raw / scale, np.nan)


def write_intensity_png(path, image) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.nan_to_num(img)), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def read_intensity_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("L", "P", "1"):
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def write_mask_png(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255).save(path)


def read_mask_png(path) -> np.ndarray:
    return read_intensity_png(path) > 0


def write_float_map(path, data) -> None:
    a = np.asarray(data, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ValueError("float maps are (H, W) or (H, W, C)")
    h, w, c = a.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, w, h, c))
        f.write(np.ascontiguousarray(a).tobytes())


def read_float_map(path) -> np.ndarray:
    """``(H, W, C)`` float64 array, squeezed to ``(H, W)`` when ``C == 1``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated float map header")
    magic, w, h, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a float map (bad magic)")
    body = raw[_HEADER.size:]
    if len(body) != 4 * w * h * c:
        raise ValueError(f"{path}: expected {w}x{h}x{c} float32 values, got {len(body) // 4}")
    a = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
    return a[..., 0] if c == 1 else a
