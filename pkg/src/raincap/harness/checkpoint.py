"""RCAP named-tensor checkpoints.

Layout (little-endian): magic ``RCAP``, version u16, count u32, then per
entry name length u16, UTF-8 name, rank u8, rank x u32 extents and the
float32 payload.
"""
import os
import struct
import tempfile

import numpy as np

MAGIC = b"RCAP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors):
    names = list(tensors)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(names))]
    for name in names:
        arr = np.asarray(tensors[name], dtype="<f4")  # keeps rank 0; tobytes is C order
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"{name}: name or rank too large")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(buf):
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated while reading {what} at byte {pos}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError("bad magic, not an RCAP checkpoint")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(nlen, "name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * size, f"payload of {name}"), dtype="<f4").reshape(shape)
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name}")
        out[name] = data.astype(np.float32)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after the last entry")
    return out


def atomic_write(path, data):
    """Write bytes or text via a temporary file in the same directory and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, tensors):
    atomic_write(path, encode(tensors))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode(f.read())
