"""File formats shared across the toolkit.

Tensor files ("TNSR"): 4-byte magic, one compact JSON header line
{dtype, shape, layout, endian}, a newline, then the raw little-endian
row-major payload.  Meshes are an ASCII OBJ subset (v / triangle f only).
Pose files are JSON arrays of {frame, quat, t} records.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Pose, Rotation, TriangleMesh

MAGIC = b"TNSR"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
}
_DTYPE_NAMES = {np.dtype(v.str.lstrip("<|")): k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    """Raised on malformed input files."""


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    name = _DTYPE_NAMES.get(arr.dtype.newbyteorder("="))
    if name is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
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
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    nl = raw.find(b"\n", 4)
    if nl < 0:
        raise FormatError(f"{path}: missing header terminator")
    try:
        header = json.loads(raw[4:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad tensor header: {exc}") from exc
    for key in ("dtype", "shape"):
        if key not in header:
            raise FormatError(f"{path}: tensor header missing '{key}'")
    if header.get("endian", "little") != "little" or header.get("layout", "row-major") != "row-major":
        raise FormatError(f"{path}: unsupported tensor layout")
    dtype = _DTYPES.get(header["dtype"])
    if dtype is None:
        raise FormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    shape = tuple(int(s) for s in header["shape"])
    payload = raw[nl + 1 :]
    expected = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload size {len(payload)} != expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# OBJ meshes


def load_obj(path, scale: float = 1.0) -> TriangleMesh:
    """Parse the v/f subset of ASCII OBJ; any non-triangle face is rejected."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"{path}:{ln}: vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise FormatError(f"{path}:{ln}: only triangle faces are supported")
                face = []
                for token in idx:
                    i = int(token.split("/")[0])
                    if i < 0:
                        raise FormatError(f"{path}:{ln}: negative indices not supported")
                    face.append(i - 1)
                faces.append(face)
            # vn / vt / o / g / s / usemtl / mtllib lines carry no geometry here.
    try:
        return TriangleMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64), scale)
    except GeometryError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# Pose records


def pose_to_record(pose: Pose, frame: int | None = None) -> dict:
    rec = {"quat": [float(x) for x in pose.rotation.q], "t": [float(x) for x in pose.translation]}
    if frame is not None:
        rec["frame"] = int(frame)
    return rec


def pose_from_record(rec: dict) -> Pose:
    try:
        return Pose(Rotation(np.array(rec["quat"], dtype=np.float64)), np.array(rec["t"]))
    except (KeyError, GeometryError, ValueError) as exc:
        raise FormatError(f"bad pose record: {exc}") from exc


def save_poses(path, poses: list[Pose], frames: list[int] | None = None) -> None:
    frames = frames if frames is not None else list(range(len(poses)))
    records = [pose_to_record(p, f) for p, f in zip(poses, frames)]
    Path(path).write_text(canonical_json(records) + "\n", encoding="utf-8")


def load_poses(path) -> list[tuple[int, Pose]]:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(int(r.get("frame", i)), pose_from_record(r)) for i, r in enumerate(records)]


# ---------------------------------------------------------------------------
# Canonical JSON: sorted keys, floats at 9 significant digits, so identical
# inputs produce byte-identical files on every platform.


def _canon(value):
    if isinstance(value, dict):
        return {str(k): _canon(value[k]) for k in sorted(value, key=str)}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    if isinstance(value, (bool, int, str)) or value is None:
        return value
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if not np.isfinite(f):
            raise ValueError("non-finite float in canonical JSON")
        # Round to 9 significant digits; repr of the rounded value is the
        # shortest round-tripping string, identical on every platform.
        return float(format(f, ".9g"))
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return _canon(value.tolist())
    raise TypeError(f"cannot canonicalize {type(value)!r}")


def canonical_json(value) -> str:
    return json.dumps(_canon(value), sort_keys=True, separators=(",", ":"))


def write_json(path, value) -> None:
    Path(path).write_text(canonical_json(value) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
