"""CAD-model descriptor database: aggregation, flat index, retrieval.

Each database object carries M rendered views with per-view patch-token
grids.  Retrieval matches a single aggregated descriptor per object against
the query descriptor with a plain dot-product scan, which at ~50k rows is
both faster than an approximate index and exactly checkable against a naive
scan.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Rotation
from .tensorio import FormatError, read_json, read_tensor, write_json, write_tensor

INDEX_MAGIC = b"P6DX"
INDEX_VERSION = 1


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    """rows x cols grid of feature tokens plus a per-patch foreground mask."""

    data: np.ndarray  # (rows, cols, dim) float32
    foreground: np.ndarray  # (rows, cols) bool

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise DescriptorError("patch grid must be rows x cols x dim")
        fg = np.asarray(self.foreground, dtype=bool)
        if fg.shape != d.shape[:2]:
            raise DescriptorError("foreground mask shape mismatch")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "foreground", fg)
        self.data.setflags(write=False)
        self.foreground.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ViewRecord:
    rotation: Rotation
    grid: PatchGrid
    cls_token: np.ndarray
    extents: np.ndarray  # (width, height, depth) of the posed model, meters

    def __post_init__(self):
        e = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0.0):
            raise DescriptorError("view extents must be positive")
        object.__setattr__(self, "extents", e)
        object.__setattr__(self, "cls_token", np.asarray(self.cls_token, dtype=np.float32).reshape(-1))
        self.extents.setflags(write=False)
        self.cls_token.setflags(write=False)


@dataclass(frozen=True)
class ObjectEntry:
    object_id: str
    views: list[ViewRecord]
    ffa_descriptor: np.ndarray
    cls_descriptor: np.ndarray
    mesh_ref: str
    native_scale: float = 1.0
    scale_trusted: bool = False

    @property
    def native_size(self) -> float:
        """Largest camera-frame extent seen over all views, meters.

        Stable proxy for the model's largest dimension at its native scale;
        used to rescale extents once an absolute size estimate exists.
        """
        return max(float(v.extents.max()) for v in self.views)


def ffa_aggregate(grids: list[PatchGrid]) -> np.ndarray:
    """Foreground-mean per view, mean across views, L2-normalized."""
    if not grids:
        raise DescriptorError("no views to aggregate")
    per_view = []
    for g in grids:
        if not g.foreground.any():
            raise DescriptorError("empty foreground")
        tokens = g.data.reshape(-1, g.dim)[g.foreground.reshape(-1)]
        per_view.append(tokens.astype(np.float64).mean(axis=0))
    agg = np.mean(per_view, axis=0)
    norm = np.linalg.norm(agg)
    if norm < 1e-12:
        raise DescriptorError("zero-norm aggregate")
    return (agg / norm).astype(np.float32)


def cls_aggregate(tokens: list[np.ndarray]) -> np.ndarray:
    """Mean of per-view CLS tokens, L2-normalized."""
    if not tokens:
        raise DescriptorError("no tokens to aggregate")
    agg = np.mean([np.asarray(t, dtype=np.float64).reshape(-1) for t in tokens], axis=0)
    norm = np.linalg.norm(agg)
    if norm < 1e-12:
        raise DescriptorError("zero-norm aggregate")
    return (agg / norm).astype(np.float32)


@dataclass(frozen=True)
class DescriptorIndex:
    """Flat, contiguous, unit-norm descriptor rows with parallel ids."""

    ids: list[str]
    rows: np.ndarray  # (count, dim) float32

    def __post_init__(self):
        r = np.ascontiguousarray(self.rows, dtype=np.float32)
        if r.ndim != 2:
            raise DescriptorError("index rows must be 2D")
        if len(self.ids) != r.shape[0]:
            raise DescriptorError("id count does not match row count")
        object.__setattr__(self, "rows", r)
        self.rows.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.ids)


def build_index(entries: list[ObjectEntry], mode: str = "ffa") -> DescriptorIndex:
    if mode not in ("ffa", "cls"):
        raise DescriptorError(f"unknown descriptor mode {mode!r}")
    ordered = sorted(entries, key=lambda e: e.object_id)
    dims = {e.ffa_descriptor.shape[-1] if mode == "ffa" else e.cls_descriptor.shape[-1] for e in ordered}
    if len(dims) > 1:
        raise DescriptorError(f"descriptor dimension mismatch: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    rows = np.zeros((len(ordered), dim), dtype=np.float32)
    for i, e in enumerate(ordered):
        rows[i] = e.ffa_descriptor if mode == "ffa" else e.cls_descriptor
    return DescriptorIndex([e.object_id for e in ordered], rows)


def retrieve(query: np.ndarray, index: DescriptorIndex, k: int) -> list[tuple[str, float]]:
    """Top-k ids by dot product, descending; ties broken by ascending id."""
    if len(index) == 0:
        raise DescriptorError("empty index")
    if k < 1:
        raise DescriptorError("k must be >= 1")
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != index.dim:
        raise DescriptorError(f"query dim {q.shape[0]} != index dim {index.dim}")
    norm = np.linalg.norm(q.astype(np.float64))
    if norm < 1e-12:
        raise DescriptorError("zero-norm query")
    q = (q / norm).astype(np.float32)
    scores = index.rows @ q
    # Rows are stored sorted by id, so a stable sort keeps the id tie-break.
    order = np.argsort(-scores, kind="stable")[: min(k, len(index))]
    return [(index.ids[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# Index file: 4-byte magic, u32 version/dim/count, length-prefixed UTF-8 ids,
# then contiguous little-endian float32 rows.


def save_index(path, index: DescriptorIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<III", INDEX_VERSION, index.dim, len(index)))
        for oid in index.ids:
            blob = oid.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
        fh.write(np.ascontiguousarray(index.rows, dtype="<f4").tobytes())


def load_index(path) -> DescriptorIndex:
    raw = Path(path).read_bytes()
    if raw[:4] != INDEX_MAGIC:
        raise FormatError(f"{path}: not a descriptor index (bad magic)")
    version, dim, count = struct.unpack_from("<III", raw, 4)
    if version != INDEX_VERSION:
        raise FormatError(f"{path}: unsupported index version {version}")
    off = 16
    ids = []
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        ids.append(raw[off : off + ln].decode("utf-8"))
        off += ln
    expected = count * dim * 4
    if len(raw) - off != expected:
        raise FormatError(f"{path}: truncated index payload")
    rows = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    return DescriptorIndex(ids, rows.copy())


# ---------------------------------------------------------------------------
# View bundles: one directory per object holding views.tnsr, rotations.json,
# extents.json, cls.tnsr, fg_masks.tnsr and meta.json.


def save_object_bundle(dirpath, object_id: str, views: list[ViewRecord], mesh_ref: str,
                       native_scale: float = 1.0, scale_trusted: bool = False) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    grids = np.stack([v.grid.data for v in views])
    masks = np.stack([v.grid.foreground for v in views]).astype(np.uint8)
    cls = np.stack([v.cls_token for v in views])
    write_tensor(d / "views.tnsr", grids)
    write_tensor(d / "fg_masks.tnsr", masks)
    write_tensor(d / "cls.tnsr", cls)
    write_json(d / "rotations.json", [{"quat": list(v.rotation.q)} for v in views])
    write_json(d / "extents.json", [list(v.extents) for v in views])
    write_json(
        d / "meta.json",
        {
            "object_id": object_id,
            "mesh_ref": mesh_ref,
            "native_scale": native_scale,
            "scale_trusted": scale_trusted,
        },
    )


def load_object_bundle(dirpath) -> ObjectEntry:
    d = Path(dirpath)
    meta = read_json(d / "meta.json")
    grids = read_tensor(d / "views.tnsr")
    masks = read_tensor(d / "fg_masks.tnsr").astype(bool)
    cls = read_tensor(d / "cls.tnsr")
    rots = read_json(d / "rotations.json")
    extents = read_json(d / "extents.json")
    counts = {grids.shape[0], masks.shape[0], cls.shape[0], len(rots), len(extents)}
    if len(counts) != 1:
        raise FormatError(f"{dirpath}: inconsistent view counts {sorted(counts)}")
    views = [
        ViewRecord(
            Rotation(np.array(rots[i]["quat"], dtype=np.float64)),
            PatchGrid(grids[i], masks[i]),
            cls[i],
            np.array(extents[i], dtype=np.float64),
        )
        for i in range(grids.shape[0])
    ]
    return ObjectEntry(
        object_id=str(meta["object_id"]),
        views=views,
        ffa_descriptor=ffa_aggregate([v.grid for v in views]),
        cls_descriptor=cls_aggregate([v.cls_token for v in views]),
        mesh_ref=str(meta["mesh_ref"]),
        native_scale=float(meta.get("native_scale", 1.0)),
        scale_trusted=bool(meta.get("scale_trusted", False)),
    )
