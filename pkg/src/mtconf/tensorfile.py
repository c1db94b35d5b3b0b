"""Byte-stable container for named float/int arrays with a JSON metadata header.

Used for checkpoint weight payloads and the suggestion index. The format is a
single file:

    magic "MTCF" | u32 header length | UTF-8 JSON header | raw array bytes

The header maps array names to (dtype, shape, byte offset into the payload)
and carries a caller-supplied metadata dict plus a format version tag. All
integers are little-endian, arrays are written in C order, and header keys are
sorted, so writing the same arrays twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTCF"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"float32", "float64", "int32", "int64", "uint8"}


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Write named arrays plus metadata to ``path``.

    Array order in the payload follows sorted names, making the output a pure
    function of its contents.
    """
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype.name!r} for array {name!r}")
        raw = arr.tobytes()
        entries[name] = {"dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "arrays": entries,
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for raw in blobs:
            f.write(raw)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back ``(arrays, metadata)`` written by :func:`save_arrays`."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tensorfile (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported tensorfile version {header.get('version')!r}")
        payload = f.read()
    arrays = {}
    for name, entry in header["arrays"].items():
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        start = entry["offset"]
        end = start + dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(payload[start:end], dtype=dtype).reshape(shape).copy()
    return arrays, header["metadata"]
