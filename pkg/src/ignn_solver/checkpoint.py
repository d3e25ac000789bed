"""Binary tensor container shared by model and solver checkpoints.

Layout (little endian)::

    b"IGNN"  u32 version
    repeated until EOF:
        u32 name_length, utf-8 name, u32 rank, u64 dims[rank], f64 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"IGNN"
VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in tensors.items():
            arr = np.asarray(value, dtype="<f8")  # ascontiguousarray would promote rank 0 to rank 1
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParseError("not an IGNN checkpoint (bad magic)", path)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path)
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            out[name] = arr.reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"truncated or corrupt checkpoint: {exc}", path) from None
    return out
