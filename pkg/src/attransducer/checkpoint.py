"""Versioned binary checkpoint container.

Layout, all integers and floats little-endian::

    magic    8 bytes  b"ATTRNSDR"
    version  u32
    cfg_len  u32, then cfg_len bytes of UTF-8 JSON (the config record)
    count    u32
    count x tensor record:
        name_len u16, name (UTF-8)
        dtype    u8   0 = float32, 1 = int8
        ndim     u8, then ndim x u32 extents
        scale    f32  (1.0 for float32 tensors)
        data     prod(shape) x itemsize bytes, row-major
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ATTRNSDR"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1")}
TAGS = {np.dtype("<f4"): 0, np.dtype("i1"): 1}


class CheckpointError(ValueError):
    pass


def write(path, config: dict, entries) -> int:
    """Write ``(name, array, scale)`` entries; returns the byte count.

    ``scale`` is None for float32 tensors and the dequantization scale for
    int8 tensors.
    """
    out = bytearray(MAGIC)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out += struct.pack("<II", VERSION, len(cfg)) + cfg
    entries = list(entries)
    out += struct.pack("<I", len(entries))
    for name, arr, scale in entries:
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
        if dt not in TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        tag = TAGS[dt]
        if (tag == 1) == (scale is None):
            raise CheckpointError(f"{name}: int8 tensors need a scale, float32 tensors must not have one")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", tag, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += struct.pack("<f", 1.0 if scale is None else scale)
        out += np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()
    Path(path).write_bytes(bytes(out))
    return len(out)


def read(path) -> tuple[dict, dict]:
    """Return ``(config, {name: (array, scale_or_None)})``."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        version, cfg_len = take("<II")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config = json.loads(buf[pos:pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = take("<I")
        entries = {}
        for _ in range(count):
            (n,) = take("<H")
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            tag, ndim = take("<BB")
            if tag not in DTYPES:
                raise CheckpointError(f"{name}: unknown dtype tag {tag}")
            shape = take(f"<{ndim}I")
            (scale,) = take("<f")
            size = int(np.prod(shape)) * DTYPES[tag].itemsize
            if pos + size > len(buf):
                raise CheckpointError(f"{name}: truncated tensor data")
            arr = np.frombuffer(buf, dtype=DTYPES[tag], count=int(np.prod(shape)), offset=pos).reshape(shape)
            pos += size
            if name in entries:
                raise CheckpointError(f"duplicate tensor {name!r}")
            entries[name] = (arr.copy(), None if tag == 0 else scale)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return config, entries
