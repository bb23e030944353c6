"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TFNC" | u32 version | u32 n_params
    n_params x ( u16 name_len | name utf-8 | u8 ndim | ndim x u32 dim | float32 data )
    section* : 4-byte tag | u64 payload_len | payload

Parameters are stored as float32.  Sections carry free-form payloads (model
config, vocabulary, optimizer state) keyed by their tag.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"TFNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_arrays(named: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def _read(f, n):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def decode_arrays(f) -> dict[str, np.ndarray]:
    if isinstance(f, (bytes, bytearray)):
        f = io.BytesIO(f)
    (count,) = struct.unpack("<I", _read(f, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(f, 1))
        shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(_read(f, 4 * size), dtype="<f4").reshape(shape).copy()
    return out


def save_checkpoint(path, params: Mapping[str, np.ndarray], sections: Mapping[str, bytes] | None = None):
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", VERSION))
    body.write(encode_arrays(params))
    for tag, payload in (sections or {}).items():
        t = tag.encode("ascii")
        if len(t) != 4:
            raise CheckpointError(f"section tag must be 4 ASCII bytes, got {tag!r}")
        body.write(t)
        body.write(struct.pack("<Q", len(payload)))
        body.write(payload)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(body.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, bytes]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a TFNC checkpoint")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        params = decode_arrays(f)
        sections = {}
        while True:
            tag = f.read(4)
            if not tag:
                break
            if len(tag) != 4:
                raise CheckpointError("truncated section header")
            (n,) = struct.unpack("<Q", _read(f, 8))
            sections[tag.decode("ascii")] = _read(f, n)
    return params, sections
