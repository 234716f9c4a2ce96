"""
Binary record container used for checkpoints.

Layout (all integers little-endian):
    b"IQRL" | u32 format version | u32 record count
    then per record:
    u32 name length | name (utf-8) | u8 dtype code | u32 ndim | ndim x u32 extents | raw data

dtype codes: 0 float32, 1 float64, 2 uint8 (opaque bytes, e.g. JSON metadata), 3 int64.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

MAGIC = b"IQRL"
FORMAT_VERSION = 1

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i8"),
}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


class CheckpointError(RuntimeError):
    pass


def _code_for(arr: np.ndarray) -> int:
    key = arr.dtype.newbyteorder("=")
    if key not in _CODES:
        raise CheckpointError(f"unsupported dtype {arr.dtype} in checkpoint record")
    return _CODES[key]


def encode_records(records: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    for name, value in records.items():
        arr = np.asarray(value)
        code = _code_for(arr)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BI", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(chunks)


def decode_records(blob: bytes) -> Dict[str, np.ndarray]:
    """Parse a whole container; nothing is returned unless every record is intact."""
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {pos}, file has {len(view)}")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not an IQRL checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})")

    records: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise CheckpointError(f"record {name!r}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(bytes(take(nbytes)), dtype=dtype).reshape(shape)
        records[name] = data.astype(dtype.newbyteorder("="), copy=True)
    if pos != len(view):
        raise CheckpointError(f"trailing {len(view) - pos} bytes after {count} records")
    return records


def save_records(path: Union[str, Path], records: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_records(records))
    os.replace(tmp, path)
    return path


def load_records(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_records(path.read_bytes())
