"""Binary checkpoint format.

Layout (little-endian)::

    b"MSEPCKPT"  u32 version
    u64 meta_len, meta_len bytes of UTF-8 JSON (configs, epoch, RNG state)
    u32 n_tensors
    n_tensors x { u32 name_len, name, u8 dtype, u32 ndim, u64 dims[ndim], raw data }
"""

import json
import struct

import numpy as np

MAGIC = b"MSEPCKPT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {v: k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def save(path, tensors, meta):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            dt = arr.dtype.newbyteorder("<")
            if dt not in CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            key = name.encode("utf-8")
            f.write(struct.pack("<I", len(key)))
            f.write(key)
            f.write(struct.pack("<BI", CODES[dt], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load(path):
    """Returns ``(tensors, meta)``."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        (version,) = struct.unpack_from("<I", data, 8)
        if version != VERSION:
            raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
        pos = 12
        (meta_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BI", data, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dt = DTYPES[code]
            size = int(np.prod(shape)) * dt.itemsize
            tensors[name] = np.frombuffer(data[pos : pos + size], dtype=dt).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    return tensors, meta
