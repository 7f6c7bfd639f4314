"""Writer/reader for the toolkit's tensor container.

Layout: 4-byte magic "TNSR", one compact JSON header line with dtype, shape,
layout and endianness, a newline, then the raw little-endian row-major
payload.  Kept dependency-free so exporters stand alone.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
_DTYPES = {"f32": "<f4", "f64": "<f8", "u8": "u1", "i32": "<i4", "i64": "<i8"}
_NAMES = {np.dtype(v): k for k, v in _DTYPES.items()}


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    name = _NAMES.get(arr.dtype.newbyteorder("<")) or _NAMES.get(arr.dtype)
    if name is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if sys.byteorder != "little":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    header = json.dumps(
        {"dtype": name, "endian": "little", "layout": "row-major", "shape": list(arr.shape)},
        sort_keys=True,
        separators=(",", ":"),
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    nl = raw.find(b"\n", 4)
    header = json.loads(raw[4:nl].decode("utf-8"))
    dtype = np.dtype(_DTYPES[header["dtype"]])
    shape = tuple(header["shape"])
    return np.frombuffer(raw[nl + 1 :], dtype=dtype).reshape(shape).copy()
