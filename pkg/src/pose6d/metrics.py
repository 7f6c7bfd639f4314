"""Pose evaluation: silhouette overlap, 3D and projected point-cloud
distances with recall aggregation, and velocity-based tracking errors with
object-origin correction and symmetry handling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    CameraIntrinsics,
    Pose,
    Rotation,
    TriangleMesh,
    project_many,
    sample_mesh_surface,
    so3_exp,
    so3_log,
)


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Silhouette rasterization

SUPERSAMPLE = 2
MIN_Z = 1e-9


def rasterize_silhouette(
    mesh: TriangleMesh,
    pose: Pose,
    k: CameraIntrinsics,
    supersample: int = SUPERSAMPLE,
) -> np.ndarray:
    """Binary coverage mask of the posed mesh, (height, width) bool.

    Coverage is evaluated with edge functions at supersample^2 sample points
    per pixel; a pixel is set when at least half of its samples are covered.
    Triangles touching the camera plane are dropped (no clipping), so a mesh
    fully behind the camera yields an empty mask.
    """
    ss = int(supersample)
    w2, h2 = k.width * ss, k.height * ss
    sub = np.zeros((h2, w2), dtype=bool)
    cam = pose.apply(mesh.vertices_m)
    tris = mesh.triangles
    front = np.all(cam[:, 2][tris] > MIN_Z, axis=1)
    if front.any():
        pix = np.full((cam.shape[0], 2), np.nan)
        ok = cam[:, 2] > MIN_Z
        pix[ok] = project_many(cam[ok], k)
        # Sample point (i, j) of the fine grid sits at pixel coords
        # ((i + 0.5)/ss, (j + 0.5)/ss); work in fine-grid units.
        tri_pix = pix[tris[front]] * ss - 0.5
        for p0, p1, p2 in tri_pix:
            _cover_triangle(sub, p0, p1, p2)
    counts = sub.reshape(k.height, ss, k.width, ss).sum(axis=(1, 3))
    return counts * 2 >= ss * ss


def _cover_triangle(grid: np.ndarray, p0, p1, p2) -> None:
    area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
    if area == 0.0:
        return
    if area < 0.0:
        p1, p2 = p2, p1
    h, w = grid.shape
    x_min = max(int(np.ceil(min(p0[0], p1[0], p2[0]))), 0)
    x_max = min(int(np.floor(max(p0[0], p1[0], p2[0]))), w - 1)
    y_min = max(int(np.ceil(min(p0[1], p1[1], p2[1]))), 0)
    y_max = min(int(np.floor(max(p0[1], p1[1], p2[1]))), h - 1)
    if x_min > x_max or y_min > y_max:
        return
    xs = np.arange(x_min, x_max + 1, dtype=np.float64)
    ys = np.arange(y_min, y_max + 1, dtype=np.float64)
    X, Y = np.meshgrid(xs, ys)
    inside = np.ones(X.shape, dtype=bool)
    for a, b in ((p0, p1), (p1, p2), (p2, p0)):
        # Edge function >= 0 keeps points on the edge inside.
        inside &= (b[0] - a[0]) * (Y - a[1]) - (b[1] - a[1]) * (X - a[0]) >= 0.0
    grid[y_min : y_max + 1, x_min : x_max + 1] |= inside


def cou(mask_gt: np.ndarray, mask_pred: np.ndarray) -> float:
    """Complement of mask overlap: 1 - intersection/union, in [0, 1]."""
    a = np.asarray(mask_gt, dtype=bool)
    b = np.asarray(mask_pred, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0  # both silhouettes empty: worst case by convention
    inter = np.logical_and(a, b).sum()
    return 1.0 - inter / union


# ---------------------------------------------------------------------------
# Point-cloud distances


def chamfer(
    mesh_gt: TriangleMesh,
    pose_gt: Pose,
    mesh_pred: TriangleMesh,
    pose_pred: Pose,
    n_samples: int = 1000,
    seed: int = 0,
) -> float:
    """Symmetric mean nearest-neighbor distance between posed surfaces, meters."""
    pts_gt = pose_gt.apply(sample_mesh_surface(mesh_gt, n_samples, seed))
    pts_pred = pose_pred.apply(sample_mesh_surface(mesh_pred, n_samples, seed))
    d_ab = cKDTree(pts_pred, leafsize=16).query(pts_gt)[0]
    d_ba = cKDTree(pts_gt, leafsize=16).query(pts_pred)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def projected_chamfer(
    mesh_gt: TriangleMesh,
    pose_gt: Pose,
    mesh_pred: TriangleMesh,
    pose_pred: Pose,
    k: CameraIntrinsics,
    n_samples: int = 1000,
    seed: int = 0,
) -> float:
    """Two-sided mean squared pixel distance between projected surfaces.

    The two one-sided means are summed, and distances stay squared, so units
    are pixels^2.  Samples behind the camera are dropped.
    """
    pts_gt = pose_gt.apply(sample_mesh_surface(mesh_gt, n_samples, seed))
    pts_pred = pose_pred.apply(sample_mesh_surface(mesh_pred, n_samples, seed))
    pts_gt = pts_gt[pts_gt[:, 2] > MIN_Z]
    pts_pred = pts_pred[pts_pred[:, 2] > MIN_Z]
    if pts_gt.shape[0] == 0 or pts_pred.shape[0] == 0:
        raise MetricError("all samples behind camera")
    px_gt = project_many(pts_gt, k)
    px_pred = project_many(pts_pred, k)
    d_ab = cKDTree(px_pred, leafsize=16).query(px_gt)[0]
    d_ba = cKDTree(px_gt, leafsize=16).query(px_pred)[0]
    return float(np.mean(d_ab**2)) + float(np.mean(d_ba**2))


def average_recall(errors, thresholds) -> float:
    """Mean over thresholds of the fraction of instances below threshold."""
    errs = np.asarray(errors, dtype=np.float64)
    ths = np.asarray(thresholds, dtype=np.float64)
    if errs.size == 0:
        raise MetricError("no errors to aggregate")
    if ths.size == 0:
        raise MetricError("no thresholds")
    return float(np.mean([(errs < t).mean() for t in ths]))


def default_thresholds(k: CameraIntrinsics | None = None) -> dict:
    diag = float(np.hypot(k.width, k.height)) if k is not None else 800.0
    return {
        "cou": np.linspace(0.05, 0.5, 10).tolist(),
        "ch": np.linspace(0.01, 0.10, 10).tolist(),
        "pch": np.linspace((0.01 * diag) ** 2, (0.1 * diag) ** 2, 10).tolist(),
    }


# ---------------------------------------------------------------------------
# Tracking metrics


@dataclass(frozen=True)
class SymmetrySet:
    rotations: list[Rotation] = field(default_factory=list)

    def __post_init__(self):
        rots = list(self.rotations)
        if not any(r.angle_to(Rotation.identity()) < 1e-12 for r in rots):
            rots = [Rotation.identity()] + rots
        object.__setattr__(self, "rotations", rots)

    @staticmethod
    def identity_only() -> "SymmetrySet":
        return SymmetrySet([])

    @staticmethod
    def axis(axis_vec, count: int = 64) -> "SymmetrySet":
        """Discretized continuous symmetry about one axis."""
        axis_vec = np.asarray(axis_vec, dtype=np.float64)
        axis_vec = axis_vec / np.linalg.norm(axis_vec)
        angles = np.arange(count) * (2.0 * np.pi / count)
        return SymmetrySet([so3_exp(axis_vec * a) for a in angles])


def gamma_set(n_frames: int) -> list[int]:
    """Frame gaps for velocity errors: 10 values spanning 1 to n_frames // 2."""
    if n_frames < 4:
        raise MetricError("need at least 4 frames")
    values = np.rint(np.linspace(1, n_frames // 2, 10)).astype(int)
    out = []
    for v in values:
        if int(v) not in out:
            out.append(int(v))
    return out


def _gamma_average(n_frames: int, gammas: list[int], pair_error) -> float:
    """Triple average of per-frame-pair errors normalized by the gap."""
    per_gamma = []
    for delta in gammas:
        vals = [pair_error(i, i + delta) for i in range(n_frames - delta)]
        vals = [v for v in vals if v is not None]
        if not vals:
            continue
        per_gamma.append(np.mean([v / delta for v in vals]))
    if not per_gamma:
        raise MetricError("no valid frame pairs")
    return float(np.mean(per_gamma))


def track_rot_error(
    traj: list[Pose],
    traj_gt: list[Pose],
    sym: SymmetrySet | None = None,
    gammas: list[int] | None = None,
) -> float:
    """Rotation-velocity discrepancy, degrees per frame, symmetry-minimized."""
    if len(traj) != len(traj_gt):
        raise MetricError("trajectory length mismatch")
    n = len(traj)
    gammas = gammas if gammas is not None else gamma_set(n)
    sym = sym if sym is not None else SymmetrySet.identity_only()
    R = [p.rotation for p in traj]
    Rg = [p.rotation for p in traj_gt]

    def pair(i, j):
        vel = so3_log(R[i].compose(R[j].inverse()))
        best = np.inf
        for s in sym.rotations:
            vel_gt = so3_log(Rg[i].compose(s).compose(Rg[j].inverse()))
            best = min(best, float(np.linalg.norm(vel - vel_gt)))
        return np.degrees(best)

    return _gamma_average(n, gammas, pair)


def correct_origin(
    traj: list[Pose],
    traj_gt: list[Pose],
    scale: float,
) -> tuple[np.ndarray, list[Pose]]:
    """Shift the predicted model origin to best follow the reference rays.

    For each frame, the reference direction at the predicted range is pulled
    back into the predicted model frame; the mean over frames is the new
    origin, clamped to half the object scale.  Returns the origin offset and
    the trajectory with corrected translations.
    """
    if len(traj) != len(traj_gt):
        raise MetricError("trajectory length mismatch")
    if scale <= 0:
        raise MetricError("object scale must be positive")
    acc = np.zeros(3)
    for p, g in zip(traj, traj_gt):
        norm_gt = np.linalg.norm(g.translation)
        if norm_gt < 1e-12:
            raise MetricError("reference translation has zero norm")
        target_point = g.translation / norm_gt * np.linalg.norm(p.translation)
        acc += p.inverse().apply(target_point)
    o_star = acc / len(traj)
    norm = np.linalg.norm(o_star)
    if norm > scale / 2.0:
        o_star = o_star * (scale / 2.0 / norm)
    corrected = [Pose(p.rotation, p.translation + p.rotation.apply(o_star)) for p in traj]
    return o_star, corrected


def track_proj_error(
    traj: list[Pose],
    traj_gt: list[Pose],
    k: CameraIntrinsics,
    k_gt: CameraIntrinsics | None = None,
    gammas: list[int] | None = None,
) -> float:
    """Projected-origin velocity discrepancy, percent of image diagonal.

    Expects translations already origin-corrected.  Frame pairs whose origin
    falls behind either camera are skipped.
    """
    if len(traj) != len(traj_gt):
        raise MetricError("trajectory length mismatch")
    k_gt = k_gt if k_gt is not None else k
    n = len(traj)
    gammas = gammas if gammas is not None else gamma_set(n)
    diag = float(np.hypot(k_gt.width, k_gt.height))

    def proj(p: Pose, intr: CameraIntrinsics):
        t = p.translation
        if t[2] <= MIN_Z:
            return None
        return np.array([intr.f * t[0] / t[2] + intr.cx, intr.f * t[1] / t[2] + intr.cy])

    def pair(i, j):
        pi, pj = proj(traj[i], k), proj(traj[j], k)
        gi, gj = proj(traj_gt[i], k_gt), proj(traj_gt[j], k_gt)
        if pi is None or pj is None or gi is None or gj is None:
            return None
        return 100.0 / diag * float(np.linalg.norm((pi - pj) - (gi - gj)))

    return _gamma_average(n, gammas, pair)


def track_depth_error(
    traj: list[Pose],
    traj_gt: list[Pose],
    scale: float,
    scale_gt: float,
    gammas: list[int] | None = None,
) -> float:
    """Range-velocity discrepancy normalized by the two object scales."""
    if len(traj) != len(traj_gt):
        raise MetricError("trajectory length mismatch")
    if scale <= 0 or scale_gt <= 0:
        raise MetricError("object scales must be positive")
    n = len(traj)
    gammas = gammas if gammas is not None else gamma_set(n)
    d = [float(np.linalg.norm(p.translation)) for p in traj]
    dg = [float(np.linalg.norm(p.translation)) for p in traj_gt]

    def pair(i, j):
        return abs((d[i] - d[j]) / scale - (dg[i] - dg[j]) / scale_gt)

    return _gamma_average(n, gammas, pair)
