"""8-bit PNG and raw float image dumps.

The float format is a 16-byte header (magic ``IMGF``, little-endian u32
height, width, channels) followed by row-major little-endian f32 samples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"IMGF"


def save_png(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_imgf(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_imgf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    h, w, c = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: size mismatch")
    return data.reshape(h, w, c).astype(np.float64)
