"""Flat binary checkpoint container.

Layout (all integers little-endian):
  magic "DLXW" | version u32 | records until EOF
  record: name_len u32 | name utf-8 | rank u64 | dims u64 * rank | f64 values

Records are written sorted by name, so equal parameter sets produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"DLXW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(params: dict, path: str):
    """Write name -> Tensor (or ndarray) mapping."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name in sorted(params):
            data = getattr(params[name], "data", params[name])
            arr = np.ascontiguousarray(data, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    total = len(blob)
    while off < total:
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<Q", blob, off)
        off += 8
        dims = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        out[name] = arr.reshape(dims)
    return out


def load_into(store, path: str):
    """Load a checkpoint into a ParamStore; names and shapes must match."""
    arrays = load_arrays(path)
    missing = set(store.params) - set(arrays)
    extra = set(arrays) - set(store.params)
    if missing or extra:
        raise CheckpointError(
            f"parameter mismatch: missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}")
    for name, arr in arrays.items():
        p = store.params[name]
        if p.data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.data = arr.astype(np.float64)


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
