"""Binary checkpoint format for parameter registries.

Layout: magic "DRCK", u32 version, then per parameter (in registration
order): u32 name length, utf-8 name, u8 tag byte, u32 rank, u32 extents,
float64 little-endian row-major data. Read until EOF.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import ParamRegistry, Tensor

_TAG_TO_BYTE = {"backbone": 0, "identity": 1, "motion": 2, "controller": 3}
_BYTE_TO_TAG = {v: k for k, v in _TAG_TO_BYTE.items()}


def save_checkpoint(path: Path, registry: ParamRegistry) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"DRCK")
        fh.write(struct.pack("<I", 1))
        for name, tensor, tag in registry.entries():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", _TAG_TO_BYTE[tag]))
            shape = tensor.data.shape
            fh.write(struct.pack("<I", len(shape)))
            for extent in shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path: Path) -> ParamRegistry:
    registry = ParamRegistry()
    with open(path, "rb") as fh:
        if fh.read(4) != b"DRCK":
            raise ValueError(f"{path}: not a DRCK checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"{path}: unsupported DRCK version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (tag_byte,) = struct.unpack("<B", fh.read(1))
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            registry.register(name, Tensor(data.astype(np.float64)), _BYTE_TO_TAG[tag_byte])
    return registry


def load_into(path: Path, registry: ParamRegistry, prefix: str | None = None) -> int:
    """Copy checkpoint values into an existing registry; names/shapes must match.

    With `prefix`, only parameters whose name starts with it are applied
    (e.g. "backbone." to seed a customized model from a pretrained backbone).
    Returns the number of parameters applied.
    """
    loaded = load_checkpoint(path)
    applied = 0
    for name, tensor, tag in loaded.entries():
        if prefix is not None and not name.startswith(prefix):
            continue
        if name not in registry:
            raise ValueError(f"{path}: checkpoint parameter {name!r} unknown to this model")
        if registry.tag(name) != tag:
            raise ValueError(f"{path}: tag mismatch for {name!r}")
        registry.replace(name, tensor)
        applied += 1
    return applied
