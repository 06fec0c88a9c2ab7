"""AFNC binary checkpoints.

Layout (little-endian):
    magic   "AFNC" (4 bytes)
    version u32
    speclen u32, then UTF-8 model-spec JSON
    tensors, sorted by name, each:
        namelen u32, UTF-8 name,
        rank u32, rank * extent u32,
        float32 payload
    crc32   u32 over every preceding byte (verified on load)
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import FormatError

MAGIC = b"AFNC"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint", "save_model", "load_model"]


def save_checkpoint(path, spec_json: str, tensors: Dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    spec_bytes = spec_json.encode("utf-8")
    parts.append(struct.pack("<I", len(spec_bytes)))
    parts.append(spec_bytes)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # keeps 0-d tensors rank 0
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    blob = b"".join(parts)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    Path(path).write_bytes(blob + struct.pack("<I", crc))


def load_checkpoint(path) -> Tuple[str, Dict[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated checkpoint")
    body, crc_bytes = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError(f"{path}: checkpoint CRC mismatch (corrupted file)")
    if body[:4] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {body[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (spec_len,) = struct.unpack_from("<I", body, off)
    off += 4
    spec_json = body[off : off + spec_len].decode("utf-8")
    off += spec_len
    tensors: Dict[str, np.ndarray] = {}
    while off < len(body):
        try:
            (name_len,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated tensor record ({exc})") from exc
        tensors[name] = arr.copy()
    return spec_json, tensors


def save_model(path, model) -> None:
    save_checkpoint(path, model.spec.to_json(), model.state_dict())


def load_model(path, dtype=np.float32):
    """Rebuild a model from a checkpoint (stacked variants reassemble their
    frozen flow estimator from the same geometry)."""
    from .models import Model, ModelSpec, StackedModel, build

    spec_json, tensors = load_checkpoint(path)
    spec = ModelSpec.from_json(spec_json)
    if spec.variant == "stacked2f":
        flow_spec = ModelSpec(
            "flownet2f", spec.input_size, spec.width_mult, spec.num_classes, spec.use_batchnorm, spec.dropout
        )
        model = StackedModel(build(flow_spec, dtype=dtype), spec.num_classes, dtype=dtype)
    else:
        model = Model(spec, dtype=dtype)
    model.load_state_dict(tensors)
    return model
