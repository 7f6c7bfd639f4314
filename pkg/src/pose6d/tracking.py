"""Temporal pose refinement from 2D point tracks.

The best single-frame alignment seeds 3D surface points; an external tracker
follows their projections through the video; each frame is then re-solved
with PnP, and frames that fail the visibility or reprojection gates are
filled by geodesic interpolation between their solved neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    GeometryError,
    Pose,
    TriangleMesh,
    project_many,
    sample_mesh_surface,
    se3_interpolate,
)
from .pnp import PnPError, ransac_pnp, solve_pnp
from .tensorio import FormatError, read_json, write_json

DEFAULT_SEED_POINTS = 256
DEFAULT_RMS_GATE = 8.0  # pixels
DEFAULT_RANSAC_THRESHOLD = 4.0  # pixels
DEFAULT_RANSAC_ITERS = 200


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class CorrespondenceSet:
    """Model-frame 3D points with their per-frame tracked pixels."""

    points3d: np.ndarray  # (n, 3) meters, model frame
    frames: list[int]
    pixels: np.ndarray  # (n_frames, n, 2)
    visible: np.ndarray  # (n_frames, n) bool

    def __post_init__(self):
        p = np.asarray(self.points3d, dtype=np.float64).reshape(-1, 3)
        px = np.asarray(self.pixels, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if px.shape != (len(self.frames), p.shape[0], 2) or vis.shape != px.shape[:2]:
            raise TrackingError("track arrays do not line up with frames and points")
        object.__setattr__(self, "points3d", p)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "visible", vis)


@dataclass(frozen=True)
class TrajectoryFrame:
    frame_index: int
    pose: Pose
    status: str  # solved | interpolated | missing
    rms: float | None = None


@dataclass(frozen=True)
class PoseTrajectory:
    frames: list[TrajectoryFrame] = field(default_factory=list)

    def __post_init__(self):
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise TrackingError("frame indices must be strictly increasing")

    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]


def select_init_frame(scores: list[float]) -> int:
    """Frame with the best alignment score; earliest frame on ties."""
    if len(scores) == 0:
        raise TrackingError("no alignment results")
    return int(np.argmax(scores))


def seed_correspondences(
    mesh: TriangleMesh,
    pose: Pose,
    k: CameraIntrinsics,
    n: int = DEFAULT_SEED_POINTS,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample camera-facing surface points and project them into the image.

    Returns model-frame points (meters) and their pixel positions under the
    given pose.  Points projecting outside the image are dropped.
    """
    if n < 8:
        raise TrackingError("need at least 8 seed points")
    verts_m = mesh.vertices_m
    cam_verts = pose.apply(verts_m)
    tris = mesh.triangles
    centroid_z = cam_verts.mean(axis=0)[2]
    if centroid_z <= 0:
        raise GeometryError("pose is behind camera")
    a, b, c = (cam_verts[tris[:, i]] for i in range(3))
    normals = np.cross(b - a, c - a)
    centers = (a + b + c) / 3.0
    facing = np.einsum("ij,ij->i", normals, centers) < 0.0
    front = centers[:, 2] > 0
    keep = facing & front
    if not keep.any():
        raise TrackingError("insufficient visible seeds")
    sub = TriangleMesh(mesh.vertices, tris[keep], mesh.scale)
    pts_model = sample_mesh_surface(sub, n, seed)
    pts_cam = pose.apply(pts_model)
    ok = pts_cam[:, 2] > 1e-9
    pix = np.full((n, 2), np.nan)
    pix[ok] = project_many(pts_cam[ok], k)
    inside = ok & (pix[:, 0] >= 0) & (pix[:, 0] < k.width) & (pix[:, 1] >= 0) & (pix[:, 1] < k.height)
    if inside.sum() < 8:
        raise TrackingError("insufficient visible seeds")
    return pts_model[inside], pix[inside]


@dataclass(frozen=True)
class RefineConfig:
    rms_gate: float = DEFAULT_RMS_GATE
    use_ransac: bool = True
    ransac_threshold: float = DEFAULT_RANSAC_THRESHOLD
    ransac_iterations: int = DEFAULT_RANSAC_ITERS
    seed: int = 0


def refine_trajectory(
    corr: CorrespondenceSet,
    k: CameraIntrinsics,
    config: RefineConfig = RefineConfig(),
) -> PoseTrajectory:
    """Per-frame PnP over visible tracks with geodesic gap filling."""
    n_frames = len(corr.frames)
    solved: dict[int, tuple[Pose, float]] = {}
    for i in range(n_frames):
        vis = corr.visible[i]
        if vis.sum() < 4:
            continue
        pts3 = corr.points3d[vis]
        pts2 = corr.pixels[i][vis]
        try:
            if config.use_ransac:
                pose, rms, _ = ransac_pnp(
                    pts3,
                    pts2,
                    k,
                    inlier_threshold=config.ransac_threshold,
                    iterations=config.ransac_iterations,
                    seed=config.seed,
                )
            else:
                pose, rms = solve_pnp(pts3, pts2, k)
        except PnPError:
            continue
        if rms <= config.rms_gate:
            solved[i] = (pose, rms)
    if not solved:
        raise TrackingError("no solvable frames in track set")

    solved_idx = sorted(solved)
    frames = []
    for i in range(n_frames):
        if i in solved:
            pose, rms = solved[i]
            frames.append(TrajectoryFrame(corr.frames[i], pose, "solved", rms))
            continue
        prev = max((j for j in solved_idx if j < i), default=None)
        nxt = min((j for j in solved_idx if j > i), default=None)
        if prev is None:
            pose = solved[nxt][0]
        elif nxt is None:
            pose = solved[prev][0]
        else:
            alpha = (i - prev) / (nxt - prev)
            pose = se3_interpolate(solved[prev][0], solved[nxt][0], alpha)
        frames.append(TrajectoryFrame(corr.frames[i], pose, "interpolated", None))
    return PoseTrajectory(frames)


# ---------------------------------------------------------------------------
# Track files: {"n_points": n, "frames": [{"idx": i, "pts": [[x, y, vis]...]}]}


def save_tracks(path, corr: CorrespondenceSet) -> None:
    frames = []
    for i, idx in enumerate(corr.frames):
        pts = np.concatenate([corr.pixels[i], corr.visible[i][:, None].astype(float)], axis=1)
        frames.append({"idx": int(idx), "pts": pts.tolist()})
    write_json(path, {"n_points": int(corr.points3d.shape[0]), "frames": frames})


def load_tracks(path, points3d: np.ndarray) -> CorrespondenceSet:
    raw = read_json(path)
    try:
        n_points = int(raw["n_points"])
        entries = sorted(raw["frames"], key=lambda f: int(f["idx"]))
        frames = [int(f["idx"]) for f in entries]
        arr = np.array([f["pts"] for f in entries], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad track file: {exc}") from exc
    if arr.ndim != 3 or arr.shape[1] != n_points or arr.shape[2] != 3:
        raise FormatError(f"{path}: track array shape {arr.shape} inconsistent with n_points={n_points}")
    points3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    if points3d.shape[0] != n_points:
        raise FormatError(
            f"{path}: track file carries {n_points} points but {points3d.shape[0]} seeds were derived"
        )
    return CorrespondenceSet(points3d, frames, arr[:, :, :2], arr[:, :, 2] > 0.5)


def save_trajectory(path, traj: PoseTrajectory, dt: float | None = None, meta: dict | None = None) -> None:
    rows = []
    for f in traj.frames:
        row = {
            "frame": f.frame_index,
            "quat": [float(x) for x in f.pose.rotation.q],
            "t": [float(x) for x in f.pose.translation],
            "status": f.status,
        }
        if f.rms is not None:
            row["rms"] = float(f.rms)
        rows.append(row)
    doc = {"frames": rows}
    if dt is not None:
        doc["dt"] = dt
    if meta:
        doc["meta"] = meta
    write_json(path, doc)


def load_trajectory(path) -> PoseTrajectory:
    from .tensorio import pose_from_record

    raw = read_json(path)
    frames = [
        TrajectoryFrame(int(r["frame"]), pose_from_record(r), str(r.get("status", "solved")), r.get("rms"))
        for r in raw["frames"]
    ]
    return PoseTrajectory(frames)
