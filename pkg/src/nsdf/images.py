"""Image file I/O: 8/16-bit PNG and raw float32 planar dumps.

The raw format used by the guidance protocol is: width u32 LE, height u32 LE,
channels u32 LE, then float32 LE planes (channel-major, row-major within a
plane).
"""

from __future__ import annotations

import struct
from pathlib import Path

import cv2
import numpy as np


def write_png(path, image: np.ndarray, bitdepth: int = 8) -> None:
    """Write a float image in [0, 1]; shape (H, W) or (H, W, 3)."""
    image = np.asarray(image, dtype=np.float64)
    if bitdepth == 8:
        arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    elif bitdepth == 16:
        arr = np.clip(np.rint(image * 65535.0), 0, 65535).astype(np.uint16)
    else:
        raise ValueError(f"unsupported bit depth {bitdepth}")
    if arr.ndim == 3:
        arr = arr[:, :, ::-1]  # RGB -> BGR for OpenCV
    if not cv2.imwrite(str(path), arr):
        raise IOError(f"failed to write {path}")


def read_png(path) -> np.ndarray:
    """Read a PNG into float64 [0, 1]; color images come back as (H, W, 3) RGB."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise IOError(f"failed to read {path}")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1]
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return arr.astype(np.float64) / scale


def write_raw_planar(path, image: np.ndarray) -> None:
    """Dump an (H, W, C) or (H, W) float image as the raw planar format."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, c = image.shape
    planes = np.ascontiguousarray(image.transpose(2, 0, 1)).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", w, h, c))
        fh.write(planes.tobytes())


def read_raw_planar(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, c = struct.unpack("<III", data[:12])
    arr = np.frombuffer(data, dtype="<f4", count=w * h * c, offset=12)
    return arr.reshape(c, h, w).transpose(1, 2, 0).copy()


def planar_bytes(image: np.ndarray) -> bytes:
    """Encode (H, W, C) float as float32 LE channel-major bytes (wire payload)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    return np.ascontiguousarray(image.transpose(2, 0, 1)).astype("<f4").tobytes()


def planar_from_bytes(raw: bytes, width: int, height: int, channels: int) -> np.ndarray:
    expected = width * height * channels * 4
    if len(raw) != expected:
        raise ValueError(f"payload is {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(channels, height, width)
    return arr.transpose(1, 2, 0).copy()
