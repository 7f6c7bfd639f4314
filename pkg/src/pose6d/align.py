"""Single-frame 6D alignment of a retrieved model to an image proposal.

Rotation comes from matching the proposal's patch-token grid against the
model's pre-rendered views; translation comes from comparing the model's
camera-frame extents with the detection bounding box under a pinhole model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import ObjectEntry, PatchGrid
from .geometry import CameraIntrinsics, GeometryError, Pose, Rotation

# Square crop with this padding fraction around the mask box, resized to
# CROP_SIZE, is the protocol template features and query features share.
CROP_PADDING = 0.10
CROP_SIZE = 420


class AlignError(ValueError):
    pass


@dataclass(frozen=True)
class Proposal:
    """One detected object in one frame.

    bbox is center-based (b_x, b_y, b_w, b_h) in pixels and must enclose the
    mask's nonzero pixels.
    """

    bbox: tuple[float, float, float, float]
    mask: np.ndarray  # (h, w) bool
    query_grid: PatchGrid
    clip_embedding: np.ndarray | None = None
    frame_index: int = 0

    def __post_init__(self):
        bx, by, bw, bh = self.bbox
        if bw <= 0 or bh <= 0:
            raise AlignError("bounding box must have positive size")
        mask = np.asarray(self.mask, dtype=bool)
        if not mask.any():
            raise AlignError("empty proposal mask")
        ys, xs = np.nonzero(mask)
        # Pixel (x, y) spans [x, x+1) x [y, y+1).
        if (
            xs.min() < bx - bw / 2 - 1e-9
            or xs.max() + 1 > bx + bw / 2 + 1e-9
            or ys.min() < by - bh / 2 - 1e-9
            or ys.max() + 1 > by + bh / 2 + 1e-9
        ):
            raise AlignError("bounding box does not enclose mask")
        object.__setattr__(self, "mask", mask)

    @staticmethod
    def bbox_from_mask(mask: np.ndarray) -> tuple[float, float, float, float]:
        ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
        if xs.size == 0:
            raise AlignError("empty proposal mask")
        w = float(xs.max() + 1 - xs.min())
        h = float(ys.max() + 1 - ys.min())
        return (float(xs.min()) + w / 2, float(ys.min()) + h / 2, w, h)


@dataclass(frozen=True)
class AlignmentResult:
    pose: Pose
    view_index: int
    score: float
    object_id: str
    scale: float


def _normalize_patches(grid: PatchGrid) -> np.ndarray:
    """Zero background patches, then unit-normalize each remaining token."""
    data = grid.data.astype(np.float64).copy()
    data[~grid.foreground] = 0.0
    flat = data.reshape(-1, grid.dim)
    norms = np.linalg.norm(flat, axis=1)
    nz = norms > 0
    flat[nz] /= norms[nz, None]
    return flat


def estimate_rotation(query: PatchGrid, entry: ObjectEntry) -> tuple[Rotation, int, float]:
    """Best view by mean per-patch token dot product; first view wins ties."""
    views = entry.views
    if not views:
        raise AlignError("entry has no views")
    t0 = views[0].grid
    if (query.rows, query.cols, query.dim) != (t0.rows, t0.cols, t0.dim):
        raise AlignError(
            f"query grid {query.rows}x{query.cols}x{query.dim} does not match "
            f"templates {t0.rows}x{t0.cols}x{t0.dim}"
        )
    q = _normalize_patches(query)
    n_patches = query.rows * query.cols
    scores = np.empty(len(views))
    for i, view in enumerate(views):
        t = _normalize_patches(view.grid)
        scores[i] = np.einsum("kd,kd->", q, t) / n_patches
    best = int(np.argmax(scores))
    return views[best].rotation, best, float(scores[best])


def estimate_translation(
    bbox: tuple[float, float, float, float],
    extents,
    k: CameraIntrinsics,
) -> np.ndarray:
    """Depth from extent/box ratios, then x/y from the box center ray."""
    bx, by, bw, bh = bbox
    if bw <= 0 or bh <= 0:
        raise AlignError("bounding box must have positive size")
    ow, oh, _ = np.asarray(extents, dtype=np.float64).reshape(3)
    if ow <= 0 or oh <= 0:
        raise AlignError("extents must be positive")
    tz = 0.5 * (k.f * ow / bw + k.f * oh / bh)
    tx = (bx - k.cx) * tz / k.f
    ty = (by - k.cy) * tz / k.f
    return np.array([tx, ty, tz])


def default_intrinsics(width: int, height: int) -> CameraIntrinsics:
    """Focal-length prior of image-diagonal pixels, centered principal point."""
    if width <= 0 or height <= 0:
        raise GeometryError("image dimensions must be positive")
    f = float(np.hypot(width, height))
    return CameraIntrinsics(f=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def estimate_pose(
    proposal: Proposal,
    entry: ObjectEntry,
    k: CameraIntrinsics,
    scale: float,
) -> AlignmentResult:
    """Full single-frame pose: matched rotation plus box-derived translation.

    The winning view's extents are rescaled so the model's largest dimension
    equals the absolute size estimate before the depth computation.
    """
    if scale <= 0:
        raise AlignError("scale must be positive")
    rotation, view_index, score = estimate_rotation(proposal.query_grid, entry)
    factor = scale / entry.native_size
    extents = entry.views[view_index].extents * factor
    translation = estimate_translation(proposal.bbox, extents, k)
    return AlignmentResult(
        pose=Pose(rotation, translation),
        view_index=view_index,
        score=score,
        object_id=entry.object_id,
        scale=scale,
    )
