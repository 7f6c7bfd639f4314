"""Synthetic fixture scenes for tests and golden files.

Everything here is deterministic in the seed: procedural meshes, a z-buffer
depth/mask renderer, a closed-form patch-feature model (object signature +
view signature + per-patch noise), and a full scene writer that emits every
file format the CLI consumes.  No learned model is involved anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import Proposal
from .descriptors import ObjectEntry, PatchGrid, ViewRecord, load_object_bundle, save_object_bundle
from .geometry import (
    CameraIntrinsics,
    Pose,
    Rotation,
    TriangleMesh,
    project_many,
    sample_so3_quats,
    so3_exp,
)
from .tensorio import load_obj, save_obj, write_json, write_tensor
from .tracking import (
    CorrespondenceSet,
    PoseTrajectory,
    TrajectoryFrame,
    save_tracks,
    save_trajectory,
    seed_correspondences,
    select_init_frame,
)

# ---------------------------------------------------------------------------
# Procedural meshes (model units; metric size comes from the scale field)


def box_mesh(extents=(1.0, 1.0, 1.0), scale: float = 1.0) -> TriangleMesh:
    ex, ey, ez = np.asarray(extents, dtype=np.float64) / 2.0
    v = np.array(
        [
            [-ex, -ey, -ez], [ex, -ey, -ez], [ex, ey, -ez], [-ex, ey, -ez],
            [-ex, -ey, ez], [ex, -ey, ez], [ex, ey, ez], [-ex, ey, ez],
        ]
    )
    # Outward-facing winding per face.
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z-
            [4, 5, 6], [4, 6, 7],  # z+
            [0, 1, 5], [0, 5, 4],  # y-
            [3, 7, 6], [3, 6, 2],  # y+
            [0, 4, 7], [0, 7, 3],  # x-
            [1, 2, 6], [1, 6, 5],  # x+
        ]
    )
    return TriangleMesh(v, f, scale)


def icosphere_mesh(subdivisions: int = 2, radius: float = 1.0, scale: float = 1.0) -> TriangleMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts) * radius, np.array(faces), scale)


def lopsided_mesh(scale: float = 1.0) -> TriangleMesh:
    """Box with a skewed nose, so no orientation looks like another."""
    base = box_mesh((1.2, 0.6, 0.5))
    verts = list(base.vertices)
    tip = len(verts)
    verts.append(np.array([0.9, 0.35, 0.1]))
    faces = list(base.triangles)
    faces += [[1, 2, tip], [2, 6, tip], [6, 5, tip], [5, 1, tip]]
    return TriangleMesh(np.array(verts), np.array(faces), scale)


# ---------------------------------------------------------------------------
# Fixture-side z-buffer renderer (perspective-correct depth)


def render_depth_mask(mesh: TriangleMesh, pose: Pose, k: CameraIntrinsics):
    """Exact per-pixel depth of the posed mesh at pixel centers.

    Returns (depth, mask); depth is 0 where the mesh does not cover the pixel.
    """
    cam = pose.apply(mesh.vertices_m)
    tris = mesh.triangles
    depth = np.zeros((k.height, k.width))
    zbuf = np.full((k.height, k.width), np.inf)
    front = np.all(cam[:, 2][tris] > 1e-9, axis=1)
    if not front.any():
        return depth, depth > 0
    pix = np.zeros((cam.shape[0], 2))
    ok = cam[:, 2] > 1e-9
    pix[ok] = project_many(cam[ok], k)
    for t in tris[front]:
        p = pix[t] - 0.5  # evaluate at pixel centers
        z = cam[t, 2]
        area = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area == 0.0:
            continue
        x_min = max(int(np.ceil(p[:, 0].min())), 0)
        x_max = min(int(np.floor(p[:, 0].max())), k.width - 1)
        y_min = max(int(np.ceil(p[:, 1].min())), 0)
        y_max = min(int(np.floor(p[:, 1].max())), k.height - 1)
        if x_min > x_max or y_min > y_max:
            continue
        X, Y = np.meshgrid(np.arange(x_min, x_max + 1), np.arange(y_min, y_max + 1))
        w0 = (p[1, 0] - X) * (p[2, 1] - Y) - (p[1, 1] - Y) * (p[2, 0] - X)
        w1 = (p[2, 0] - X) * (p[0, 1] - Y) - (p[2, 1] - Y) * (p[0, 0] - X)
        w2 = (p[0, 0] - X) * (p[1, 1] - Y) - (p[0, 1] - Y) * (p[1, 0] - X)
        lam = np.stack([w0, w1, w2]) / area
        inside = np.all(lam >= 0.0, axis=0)
        if not inside.any():
            continue
        # 1/z interpolates linearly in screen space.
        iz = lam[0] / z[0] + lam[1] / z[1] + lam[2] / z[2]
        zt = 1.0 / iz
        sl = (slice(y_min, y_max + 1), slice(x_min, x_max + 1))
        closer = inside & (zt < zbuf[sl])
        zbuf[sl][closer] = zt[closer]
        depth[sl][closer] = zt[closer]
    return depth, depth > 0


# ---------------------------------------------------------------------------
# Closed-form feature model


@dataclass(frozen=True)
class FeatureModel:
    """Deterministic stand-in for a patch-feature extractor.

    Every token mixes a per-object signature, a per-view signature and
    per-patch noise, so retrieval separates objects and view matching
    separates orientations, with exact reproducibility.
    """

    dim: int = 32
    seed: int = 0
    object_weight: float = 1.0
    view_weight: float = 0.7
    patch_weight: float = 0.3

    def _unit(self, tags) -> np.ndarray:
        rng = np.random.default_rng([self.seed, *tags])
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def object_vector(self, obj: int) -> np.ndarray:
        return self._unit([1, obj])

    def view_grid(self, obj: int, view: int, rows: int, cols: int) -> np.ndarray:
        g = self.object_vector(obj)
        h = self._unit([2, obj, view])
        rng = np.random.default_rng([self.seed, 3, obj, view])
        eps = rng.normal(size=(rows * cols, self.dim))
        tokens = self.object_weight * g + self.view_weight * h + self.patch_weight * eps
        tokens /= np.linalg.norm(tokens, axis=1, keepdims=True)
        return tokens.reshape(rows, cols, self.dim).astype(np.float32)

    def cls_token(self, obj: int, view: int) -> np.ndarray:
        g = self.object_vector(obj)
        h = self._unit([2, obj, view])
        v = g + 0.5 * h
        return (v / np.linalg.norm(v)).astype(np.float32)


def view_extents(mesh: TriangleMesh, rotation: Rotation) -> np.ndarray:
    rotated = rotation.apply(mesh.vertices_m)
    return rotated.max(axis=0) - rotated.min(axis=0)


def make_template_views(
    mesh: TriangleMesh,
    obj: int,
    model: FeatureModel,
    n_views: int,
    rows: int = 30,
    cols: int = 30,
) -> list[ViewRecord]:
    quats = sample_so3_quats(n_views)
    views = []
    fg = np.ones((rows, cols), dtype=bool)
    for v in range(n_views):
        rot = Rotation(quats[v])
        grid = PatchGrid(model.view_grid(obj, v, rows, cols), fg)
        views.append(ViewRecord(rot, grid, model.cls_token(obj, v), view_extents(mesh, rot)))
    return views


def nearest_view_index(rotation: Rotation, views: list[ViewRecord]) -> int:
    qs = np.stack([v.rotation.q for v in views])
    return int(np.argmax(np.abs(qs @ rotation.q)))


# ---------------------------------------------------------------------------
# Full scene writer


@dataclass(frozen=True)
class SceneObject:
    name: str
    mesh: TriangleMesh  # model units, scale = 1
    text: str
    true_size: float  # largest dimension in meters in the scene
    base_pose: Pose


@dataclass(frozen=True)
class SceneSpec:
    n_frames: int = 24
    n_views: int = 150
    dim: int = 32
    grid_rows: int = 30
    grid_cols: int = 30
    seed: int = 1
    intrinsics: CameraIntrinsics = CameraIntrinsics(600.0, 320.0, 240.0, 640, 480)


def default_scene_objects() -> list[SceneObject]:
    return [
        SceneObject(
            "obj_jug",
            lopsided_mesh(),
            "a lopsided jug",
            0.24,
            Pose(so3_exp([0.3, -0.4, 0.2]), np.array([0.0, -0.02, 1.1])),
        ),
        SceneObject(
            "obj_ball",
            icosphere_mesh(2, 0.5),
            "a rubber ball",
            0.16,
            Pose(so3_exp([0.0, 0.7, 0.1]), np.array([-0.38, 0.05, 1.3])),
        ),
        SceneObject(
            "obj_brick",
            box_mesh((1.2, 0.5, 0.5)),
            "a clay brick",
            0.20,
            Pose(so3_exp([-0.2, 0.1, 0.9]), np.array([0.40, 0.08, 1.25])),
        ),
    ]


def object_trajectory(base: Pose, n_frames: int, moving: bool) -> list[Pose]:
    if not moving:
        return [base] * n_frames
    poses = []
    axis = np.array([0.2, 1.0, 0.35])
    axis /= np.linalg.norm(axis)
    for j in range(n_frames):
        spin = so3_exp(axis * np.deg2rad(0.9) * j)
        drift = np.array([0.0024 * j, -0.0015 * j, 0.0018 * j])
        poses.append(Pose(spin.compose(base.rotation), base.translation + drift))
    return poses


def generate_scene(outdir, spec: SceneSpec = SceneSpec(), mini: bool = False) -> dict:
    """Write a complete synthetic scene; returns a manifest of what went where."""
    out = Path(outdir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "bundles").mkdir(exist_ok=True)
    (out / "frames").mkdir(exist_ok=True)
    (out / "proposals").mkdir(exist_ok=True)
    if mini:
        spec = SceneSpec(
            n_frames=4, n_views=20, dim=8, grid_rows=10, grid_cols=10,
            seed=spec.seed, intrinsics=spec.intrinsics,
        )
    k = spec.intrinsics
    model = FeatureModel(dim=spec.dim, seed=spec.seed)
    objects = default_scene_objects()

    entries: dict[str, ObjectEntry] = {}
    scene_meshes: dict[str, TriangleMesh] = {}
    mpu_true: dict[str, float] = {}
    for i, obj in enumerate(objects):
        save_obj(out / "meshes" / f"{obj.name}.obj", obj.mesh)
        views = make_template_views(obj.mesh, i, model, spec.n_views, spec.grid_rows, spec.grid_cols)
        save_object_bundle(
            out / "bundles" / obj.name,
            obj.name,
            views,
            mesh_ref=f"meshes/{obj.name}.obj",
            native_scale=1.0,
            scale_trusted=False,
        )
        entries[obj.name] = load_object_bundle(out / "bundles" / obj.name)
        # Scene instance: rescale so the largest observed dimension hits true_size.
        mpu = obj.true_size / entries[obj.name].native_size
        mpu_true[obj.name] = mpu
        scene_meshes[obj.name] = obj.mesh.rescaled(mpu)

    # Scale database: the three scene objects plus distractors.
    db_rows = []
    emb_rows = []
    for i, obj in enumerate(objects):
        db_rows.append({"text": obj.text, "scale_m": obj.true_size})
        emb_rows.append(model._unit([4, i]))
    extra_rng = np.random.default_rng([spec.seed, 5])
    for j, (text, s) in enumerate(
        [("a park bench", 1.8), ("a soup spoon", 0.19), ("a reading lamp", 0.45)]
    ):
        db_rows.append({"text": text, "scale_m": s})
        v = extra_rng.normal(size=spec.dim)
        emb_rows.append(v / np.linalg.norm(v))
    with open(out / "scale_db.jsonl", "w", encoding="utf-8") as fh:
        for row in db_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    write_tensor(out / "embeddings.tnsr", np.stack(emb_rows).astype(np.float32))

    # Ground-truth trajectories; only the first object moves.
    gt = {obj.name: object_trajectory(obj.base_pose, spec.n_frames, moving=(i == 0))
          for i, obj in enumerate(objects)}

    proposals = []
    frames = []
    for j in range(spec.n_frames):
        scene_depth = np.zeros((k.height, k.width))
        for i, obj in enumerate(objects):
            depth, mask = render_depth_mask(scene_meshes[obj.name], gt[obj.name][j], k)
            take = mask & ((scene_depth == 0) | (depth < scene_depth))
            scene_depth[take] = depth[take]
            stem = f"f{j:03d}_{obj.name}"
            write_tensor(out / "proposals" / f"{stem}_mask.tnsr", mask.astype(np.uint8))
            view_idx = nearest_view_index(gt[obj.name][j].rotation, entries[obj.name].views)
            grid = entries[obj.name].views[view_idx].grid
            write_tensor(out / "proposals" / f"{stem}_grid.tnsr", grid.data)
            write_tensor(out / "proposals" / f"{stem}_fg.tnsr", grid.foreground.astype(np.uint8))
            write_tensor(
                out / "proposals" / f"{stem}_clip.tnsr", np.asarray(emb_rows[i], dtype=np.float32)
            )
            write_tensor(
                out / "proposals" / f"{stem}_cls.tnsr",
                entries[obj.name].views[view_idx].cls_token.astype(np.float32),
            )
            bbox = Proposal.bbox_from_mask(mask)
            proposals.append(
                {
                    "frame": j,
                    "label": obj.name,
                    "bbox": [float(x) for x in bbox],
                    "mask": f"proposals/{stem}_mask.tnsr",
                    "grid": f"proposals/{stem}_grid.tnsr",
                    "fg": f"proposals/{stem}_fg.tnsr",
                    "clip": f"proposals/{stem}_clip.tnsr",
                    "cls": f"proposals/{stem}_cls.tnsr",
                }
            )
        write_tensor(out / "frames" / f"depth_{j:03d}.tnsr", scene_depth.astype(np.float32))
        frames.append(
            {
                "index": j,
                "depth": f"frames/depth_{j:03d}.tnsr",
                "intrinsics": {
                    "f": k.f, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height,
                },
            }
        )
    write_json(out / "proposals.json", proposals)
    write_json(out / "frames.json", frames)

    # Ground truth for the moving object, for tracking evaluation.
    tracked = objects[0].name
    gt_traj = PoseTrajectory(
        [TrajectoryFrame(j, gt[tracked][j], "solved") for j in range(spec.n_frames)]
    )
    save_trajectory(
        out / "gt_trajectory.json",
        gt_traj,
        meta={"object_id": tracked, "scale": objects[0].true_size,
              "mesh_scale_mpu": mpu_true[tracked]},
    )

    config = {
        "seed": spec.seed,
        "index": "index.p6dx",
        "bundles": "bundles",
        "scale_db": "scale_db.jsonl",
        "embeddings": "embeddings.tnsr",
        "descriptor_mode": "ffa",
        "retrieval_k": 1,
        "scale_neighbors": 1,
        "scale_mode": "half_extent",
        "constant_scale_m": 0.10,
        "seed_points": 192,
        "rms_gate_px": 8.0,
        "ransac_enabled": True,
        "ransac_threshold_px": 4.0,
        "ransac_iterations": 200,
        "retarget_dt": 0.05,
        "jobs": 1,
    }
    write_json(out / "config.json", config)

    eval_manifest = {
        "intrinsics": frames[0]["intrinsics"],
        "mesh_gt": f"meshes/{tracked}.obj",
        "mesh_gt_scale_mpu": mpu_true[tracked],
        "mesh_pred": f"meshes/{tracked}.obj",
        "object_scale_gt": objects[0].true_size,
        "n_samples": 600,
        "sample_seed": 11,
        "symmetries": [],
        "metrics": ["cou", "ch", "pch"],
    }
    write_json(out / "eval_manifest.json", eval_manifest)

    return {
        "objects": [o.name for o in objects],
        "tracked": tracked,
        "mpu_true": mpu_true,
        "true_sizes": {o.name: o.true_size for o in objects},
        "gt": gt,
        "intrinsics": k,
        "spec": spec,
    }


def emit_tracks_for_scene(outdir, scene: dict, align_results: list[dict], config: dict) -> Path:
    """Exact-tracker output for the moving object.

    The tracked physical points are the model points the pipeline will seed
    (same mesh, same estimated init pose, same seed), placed at the object's
    true scale; their projections under the true motion are the tracks.
    """
    out = Path(outdir)
    tracked = scene["tracked"]
    k = scene["intrinsics"]
    rows = [r for r in align_results if r["object_id"] == tracked]
    rows.sort(key=lambda r: r["frame"])
    init = select_init_frame([r["score"] for r in rows])
    init_row = rows[init]
    entry = load_object_bundle(out / "bundles" / tracked)
    mesh = load_obj(out / entry.mesh_ref, scale=1.0)
    s_est = init_row["scale"]
    mesh_est = mesh.rescaled(mesh.scale * s_est / entry.native_size)
    init_pose = Pose(
        Rotation(np.array(init_row["quat"])), np.array(init_row["t"])
    )
    pts_model, _ = seed_correspondences(
        mesh_est, init_pose, k, n=config["seed_points"], seed=config["seed"]
    )
    # Physical points: same model coordinates at the true scale.
    kappa = mesh_est.scale / scene["mpu_true"][tracked]
    pts_phys = pts_model / kappa
    n_frames = scene["spec"].n_frames
    pixels = np.zeros((n_frames, pts_model.shape[0], 2))
    visible = np.ones((n_frames, pts_model.shape[0]), dtype=bool)
    for j in range(n_frames):
        cam = scene["gt"][tracked][j].apply(pts_phys)
        pixels[j] = project_many(cam, k)
    corr = CorrespondenceSet(pts_model, list(range(n_frames)), pixels, visible)
    path = out / "tracks.json"
    save_tracks(path, corr)
    return path
