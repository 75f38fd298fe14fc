"""Named-tensor checkpoint container.

Layout (all integers little-endian)::

    b"NRMC1"
    repeated until EOF:
        u32 name_length, name bytes (utf-8)
        u32 rank, rank x u64 dims
        prod(dims) x f64 payload, row-major
"""

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"NRMC1"


def save_tensors(path, tensors):
    """Write ``{name: array-like}`` in insertion order."""
    chunks = [MAGIC]
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path):
    """Read a checkpoint into an ordered ``{name: ndarray}``."""
    buf = Path(path).read_bytes()
    if not buf.startswith(MAGIC):
        raise ParseError(path, 1, "missing NRMC1 header")
    pos, out = len(MAGIC), {}
    try:
        while pos < len(buf):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise ParseError(path, 1, f"tensor {name!r} payload truncated")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise ParseError(path, 1, f"truncated checkpoint at byte {pos}") from exc
    return out
