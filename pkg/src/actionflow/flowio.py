"""Middlebury .flo flow files and PNG frame I/O.

.flo layout, little-endian throughout: float32 202021.25 (reads as "PIEH"),
int32 width, int32 height, then height*width interleaved (u, v) float32
pairs in row-major order. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import FormatError
from .losses import FlowField

FLO_MAGIC = 202021.25

__all__ = ["FLO_MAGIC", "write_flo", "read_flo", "write_png", "read_png"]


def _flow_array(flow: Union[FlowField, np.ndarray]) -> np.ndarray:
    if isinstance(flow, FlowField):
        return flow.to_array()
    arr = np.asarray(flow)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise FormatError(f"expected FlowField or (2,H,W) array, got shape {arr.shape}")
    return arr


def write_flo(path, flow: Union[FlowField, np.ndarray]) -> None:
    arr = _flow_array(flow)
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite flow")
    h, w = arr.shape[1:]
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = arr[0]
    interleaved[..., 1] = arr[1]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(interleaved.tobytes())


def read_flo(path) -> np.ndarray:
    """Read a .flo file as a (2,H,W) float32 array."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    (magic,) = struct.unpack_from("<f", blob, 0)
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    w, h = struct.unpack_from("<ii", blob, 4)
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad .flo dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(blob) != expected:
        raise FormatError(f"{path}: .flo payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w, 2)
    return np.ascontiguousarray(data.transpose(2, 0, 1))


def write_png(path, img: np.ndarray) -> None:
    """img: (3,H,W) uint8 or float in [0,1], or (H,W[,3]) uint8."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = arr.transpose(1, 2, 0)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Read an RGB PNG as (3,H,W) uint8."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return np.ascontiguousarray(arr.transpose(2, 0, 1))
