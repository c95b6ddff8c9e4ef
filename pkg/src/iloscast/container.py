"""Versioned binary container for datasets and model parameters.

Layout (little-endian):

    magic   5 bytes  b"ILOS1"
    version 1 byte
    u32     length of the metadata JSON block
    bytes   metadata JSON (UTF-8, sorted keys)
    u32     length of the array-index JSON block
    bytes   index JSON: list of {name, dtype, shape} in payload order
    bytes   raw C-order array payloads, concatenated in index order

Writes are byte-deterministic for identical inputs, which the
reproducibility checks rely on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"ILOS1"
VERSION = 1

# dtypes allowed in the payload; anything else must be stored in metadata
_ALLOWED_DTYPES = {"float64", "float32", "int64", "int32", "int8", "uint8", "bool"}


def write_container(
    path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None
) -> None:
    """Write named arrays plus a JSON metadata dict to ``path``."""
    path = Path(path)
    index = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise DataError(f"array {name!r} has unsupported dtype {arr.dtype}")
        index.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())

    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    index_blob = json.dumps(index, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(index_blob)))
        fh.write(index_blob)
        for blob in payloads:
            fh.write(blob)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by :func:`write_container`.

    Returns ``(arrays, meta)``. Raises :class:`DataError` on a bad magic,
    version, or truncated payload.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: not an ILOS1 container (magic {magic!r})")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (index_len,) = struct.unpack("<I", fh.read(4))
        index = json.loads(fh.read(index_len).decode("utf-8"))

        arrays: dict[str, np.ndarray] = {}
        for entry in index:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise DataError(f"{path}: truncated payload for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
    return arrays, meta
