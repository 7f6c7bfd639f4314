"""Absolute object scale from relative depth plus a text-description size table.

Monocular depth gives consistent ratios between objects in a scene but no
absolute unit.  A database of object descriptions with typical metric sizes
supplies per-object priors; the scene is rescaled by a single robust factor
so the depth-map ratios survive while the unit becomes meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, backproject_many
from .tensorio import FormatError, read_tensor

DEFAULT_NEIGHBORS = 5


class ScaleError(ValueError):
    pass


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray  # (h, w), relative or metric depth
    valid: np.ndarray  # (h, w) bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ScaleError("depth map must be 2D")
        mask = np.asarray(self.valid, dtype=bool) if self.valid is not None else v > 0
        if mask.shape != v.shape:
            raise ScaleError("validity mask shape mismatch")
        if np.any(v[mask] <= 0):
            raise ScaleError("valid depth values must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", mask)
        self.values.setflags(write=False)
        self.valid.setflags(write=False)

    @staticmethod
    def from_array(values: np.ndarray) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        return DepthMap(values, values > 0)


@dataclass(frozen=True)
class ScaleDatabase:
    texts: list[str]
    scales: np.ndarray  # meters
    embeddings: np.ndarray  # (n, d), unit rows

    def __post_init__(self):
        s = np.asarray(self.scales, dtype=np.float64).reshape(-1)
        e = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.texts) != s.shape[0] or e.shape[0] != s.shape[0]:
            raise ScaleError("database arrays are misaligned")
        if np.any(s <= 0):
            raise ScaleError("scales must be positive")
        norms = np.linalg.norm(e, axis=1)
        if np.any(norms < 1e-6):
            raise ScaleError("zero-norm embedding in database")
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ScaleError("database embeddings must be unit-norm")
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "embeddings", e / norms[:, None])
        self.scales.setflags(write=False)
        self.embeddings.setflags(write=False)

    def __len__(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class ScaleEstimate:
    object_id: str
    relative: float | None  # depth-map units
    metric_prior: float | None  # meters
    fused: float | None = None  # meters
    ratio: float | None = None  # metric_prior / relative


def principal_axis_extent(points: np.ndarray, mode: str = "half_extent") -> float:
    """Extent of a point cloud along its dominant direction.

    half_extent: furthest point from the centroid along the principal axis.
    full_range: spread between extreme projections (up to 2x larger).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centered = pts - pts.mean(axis=0)
    # Right singular vector of the centered cloud = direction of max variance.
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[0]
    if mode == "half_extent":
        return float(np.abs(proj).max())
    if mode == "full_range":
        return float(proj.max() - proj.min())
    raise ScaleError(f"unknown extent mode {mode!r}")


def relative_scale(
    depth: DepthMap,
    mask: np.ndarray,
    k: CameraIntrinsics,
    mode: str = "half_extent",
    min_pixels: int = 10,
) -> float:
    """Principal-axis extent of the back-projected masked depth pixels."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.values.shape:
        raise ScaleError("mask shape does not match depth map")
    sel = mask & depth.valid
    ys, xs = np.nonzero(sel)
    if xs.size < min_pixels:
        raise ScaleError(f"degenerate object cloud: {xs.size} valid pixels < {min_pixels}")
    pixels = np.stack([xs + 0.5, ys + 0.5], axis=1)
    cloud = backproject_many(pixels, depth.values[sel], k)
    return principal_axis_extent(cloud, mode=mode)


def lookup_metric_scale(
    object_embedding: np.ndarray,
    db: ScaleDatabase,
    k_neighbors: int = DEFAULT_NEIGHBORS,
) -> float:
    """Median size of the k most similar descriptions (lower median when even)."""
    if len(db) == 0:
        raise ScaleError("empty scale database")
    if k_neighbors < 1:
        raise ScaleError("k_neighbors must be >= 1")
    q = np.asarray(object_embedding, dtype=np.float64).reshape(-1)
    if q.shape[0] != db.embeddings.shape[1]:
        raise ScaleError("embedding dimension mismatch")
    scores = db.embeddings @ q
    kk = min(k_neighbors, len(db))
    top = np.argsort(-scores, kind="stable")[:kk]
    chosen = np.sort(db.scales[top])
    return float(chosen[(kk - 1) // 2])


def global_rescale(estimates: list[ScaleEstimate]) -> tuple[float, list[ScaleEstimate]]:
    """Median prior/relative ratio over the scene, applied to every object.

    Objects without a metric prior still receive a fused scale because the
    correction factor is shared by the whole scene.
    """
    ratios = [
        e.metric_prior / e.relative
        for e in estimates
        if e.relative is not None and e.relative > 0 and e.metric_prior is not None
    ]
    if not ratios:
        raise ScaleError("no objects with both relative scale and metric prior")
    rho = float(np.median(ratios))
    fused = []
    for e in estimates:
        if e.relative is not None and e.relative > 0:
            fused.append(
                ScaleEstimate(
                    object_id=e.object_id,
                    relative=e.relative,
                    metric_prior=e.metric_prior,
                    fused=e.relative * rho,
                    ratio=(e.metric_prior / e.relative) if e.metric_prior is not None else None,
                )
            )
        else:
            fused.append(e)
    return rho, fused


# ---------------------------------------------------------------------------
# Database files: JSON lines {"text", "scale_m"} plus embeddings.tnsr aligned
# by line number.


def load_scale_database(jsonl_path, embeddings_path=None) -> ScaleDatabase:
    import json

    jsonl_path = Path(jsonl_path)
    if embeddings_path is None:
        embeddings_path = jsonl_path.with_name("embeddings.tnsr")
    texts = []
    scales = []
    for ln, line in enumerate(jsonl_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            texts.append(str(rec["text"]))
            scales.append(float(rec["scale_m"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{jsonl_path}:{ln}: bad scale record: {exc}") from exc
    embeddings = read_tensor(embeddings_path).astype(np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(texts):
        raise FormatError(
            f"{embeddings_path}: embedding rows {embeddings.shape} do not match "
            f"{len(texts)} database lines"
        )
    try:
        return ScaleDatabase(texts, np.array(scales), embeddings)
    except ScaleError as exc:
        raise FormatError(f"{jsonl_path}: {exc}") from exc
