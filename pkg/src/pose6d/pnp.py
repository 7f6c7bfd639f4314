"""Perspective-n-point solving.

Closed-form solution via four (three when the points are coplanar) control
points expressed in barycentric coordinates, followed by Gauss-Newton
refinement of the reprojection error on SE(3).  A fixed-seed RANSAC wrapper
handles gross outliers in tracked correspondences.
"""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, Pose, Rotation, se3_exp


class PnPError(ValueError):
    pass


def _control_points(pts: np.ndarray):
    """Centroid plus principal directions scaled by cloud spread.

    Returns (control points, planar flag).  Collinear or coincident points
    leave fewer than two usable directions and are rejected.
    """
    n = pts.shape[0]
    c0 = pts.mean(axis=0)
    centered = pts - c0
    cov = centered.T @ centered
    w, v = np.linalg.eigh(cov)  # ascending eigenvalues
    w = np.maximum(w, 0.0)
    scale = w[2] if w[2] > 0 else 1.0
    if w[1] <= 1e-12 * scale:
        raise PnPError("degenerate configuration")
    planar = w[0] <= 1e-9 * scale
    dirs = v[:, ::-1].T  # descending order
    if planar:
        cps = np.stack([c0, c0 + np.sqrt(w[2] / n) * dirs[0], c0 + np.sqrt(w[1] / n) * dirs[1]])
    else:
        cps = np.stack(
            [
                c0,
                c0 + np.sqrt(w[2] / n) * dirs[0],
                c0 + np.sqrt(w[1] / n) * dirs[1],
                c0 + np.sqrt(w[0] / n) * dirs[2],
            ]
        )
    return cps, planar


def _barycentric(pts: np.ndarray, cps: np.ndarray) -> np.ndarray:
    basis = (cps[1:] - cps[0]).T  # 3 x (m-1)
    rel = (pts - cps[0]).T  # 3 x n
    coeff, *_ = np.linalg.lstsq(basis, rel, rcond=None)
    alphas = np.zeros((pts.shape[0], cps.shape[0]))
    alphas[:, 1:] = coeff.T
    alphas[:, 0] = 1.0 - coeff.sum(axis=0)
    return alphas


def _solve_m_nullspace(alphas: np.ndarray, pts2d: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    n, m = alphas.shape
    M = np.zeros((2 * n, 3 * m))
    u = pts2d[:, 0]
    v = pts2d[:, 1]
    for j in range(m):
        M[0::2, 3 * j] = alphas[:, j] * k.f
        M[0::2, 3 * j + 2] = alphas[:, j] * (k.cx - u)
        M[1::2, 3 * j + 1] = alphas[:, j] * k.f
        M[1::2, 3 * j + 2] = alphas[:, j] * (k.cy - v)
    _, vecs = np.linalg.eigh(M.T @ M)
    return vecs  # columns ascending by eigenvalue

def _pairwise_sq(points: np.ndarray) -> np.ndarray:
    m = points.shape[0]
    out = []
    for i in range(m):
        for j in range(i + 1, m):
            out.append(np.sum((points[i] - points[j]) ** 2))
    return np.array(out)


_L_PAIRS = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2), (0, 3), (1, 3), (2, 3), (3, 3)]


def _build_l6x10(vs: np.ndarray) -> np.ndarray:
    """Distance-constraint matrix over the 4-vector nullspace basis."""
    diffs = []
    for vec in vs:
        cp = vec.reshape(4, 3)
        d = [cp[a] - cp[b] for a in range(4) for b in range(a + 1, 4)]
        diffs.append(np.stack(d))  # 6 x 3
    L = np.zeros((6, 10))
    for col, (a, b) in enumerate(_L_PAIRS):
        dot = np.sum(diffs[a] * diffs[b], axis=1)
        L[:, col] = dot if a == b else 2.0 * dot
    return L


def _betas_to_vec(b):
    b1, b2, b3, b4 = b
    return np.array(
        [b1 * b1, b1 * b2, b2 * b2, b1 * b3, b2 * b3, b3 * b3, b1 * b4, b2 * b4, b3 * b4, b4 * b4]
    )


def _gauss_newton_betas(L: np.ndarray, rho: np.ndarray, betas: np.ndarray, iters: int = 5):
    b = betas.copy()
    for _ in range(iters):
        A = np.zeros((6, 4))
        b1, b2, b3, b4 = b
        A[:, 0] = 2 * L[:, 0] * b1 + L[:, 1] * b2 + L[:, 3] * b3 + L[:, 6] * b4
        A[:, 1] = L[:, 1] * b1 + 2 * L[:, 2] * b2 + L[:, 4] * b3 + L[:, 7] * b4
        A[:, 2] = L[:, 3] * b1 + L[:, 4] * b2 + 2 * L[:, 5] * b3 + L[:, 8] * b4
        A[:, 3] = L[:, 6] * b1 + L[:, 7] * b2 + L[:, 8] * b3 + 2 * L[:, 9] * b4
        resid = rho - L @ _betas_to_vec(b)
        try:
            step = np.linalg.solve(A.T @ A + 1e-12 * np.eye(4), A.T @ resid)
        except np.linalg.LinAlgError:
            break
        b = b + step
    return b


def _approx_betas(L: np.ndarray, rho: np.ndarray) -> list[np.ndarray]:
    """The three standard linearizations of the distance constraints."""
    out = []
    # betas ~ (b11, b12, b13, b14)
    sol, *_ = np.linalg.lstsq(L[:, [0, 1, 3, 6]], rho, rcond=None)
    b1 = np.sqrt(abs(sol[0]))
    sign = 1.0 if sol[0] > 0 else -1.0
    out.append(np.array([b1, sign * sol[1] / b1, sign * sol[2] / b1, sign * sol[3] / b1]) if b1 > 0 else np.zeros(4))
    # betas ~ (b11, b12, b22)
    sol, *_ = np.linalg.lstsq(L[:, [0, 1, 2]], rho, rcond=None)
    if sol[0] < 0:
        b = np.array([np.sqrt(-sol[0]), np.sqrt(-sol[2]) if sol[2] < 0 else 0.0, 0.0, 0.0])
    else:
        b = np.array([np.sqrt(sol[0]), np.sqrt(sol[2]) if sol[2] > 0 else 0.0, 0.0, 0.0])
    if sol[1] < 0:
        b[0] = -b[0]
    out.append(b)
    # betas ~ (b11, b12, b22, b13, b23)
    sol, *_ = np.linalg.lstsq(L[:, [0, 1, 2, 3, 4]], rho, rcond=None)
    if sol[0] < 0:
        b = np.array([np.sqrt(-sol[0]), np.sqrt(-sol[2]) if sol[2] < 0 else 0.0, 0.0, 0.0])
    else:
        b = np.array([np.sqrt(sol[0]), np.sqrt(sol[2]) if sol[2] > 0 else 0.0, 0.0, 0.0])
    if sol[1] < 0:
        b[0] = -b[0]
    if abs(b[0]) > 1e-12:
        b[2] = sol[3] / b[0]
    out.append(b)
    return out


def _kabsch(world: np.ndarray, camera: np.ndarray):
    """Rigid transform mapping world points onto camera points."""
    cw = world.mean(axis=0)
    cc = camera.mean(axis=0)
    H = (camera - cc).T @ (world - cw)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    R = U @ D @ Vt
    return R, cc - R @ cw


def _reproject_errors(R, t, pts3d, pts2d, k):
    pc = pts3d @ R.T + t
    z = np.where(np.abs(pc[:, 2]) < 1e-12, 1e-12, pc[:, 2])
    u = k.f * pc[:, 0] / z + k.cx
    v = k.f * pc[:, 1] / z + k.cy
    err = np.stack([u, v], axis=1) - pts2d
    behind = pc[:, 2] <= 0
    norms = np.linalg.norm(err, axis=1)
    norms[behind] = np.inf
    return norms


def _candidate_from_ccs(ccs, alphas, pts3d, pts2d, k):
    pcs = alphas @ ccs
    if pcs[:, 2].sum() < 0:
        pcs = -pcs
    R, t = _kabsch(pts3d, pcs)
    err = _reproject_errors(R, t, pts3d, pts2d, k)
    mean_err = float(np.mean(err)) if np.isfinite(err).all() else np.inf
    return R, t, mean_err


def _refine_pose(R, t, pts3d, pts2d, k, iters: int):
    """Gauss-Newton on the reprojection residual over a left SE(3) increment."""
    R = R.copy()
    t = t.copy()
    for _ in range(iters):
        pc = pts3d @ R.T + t
        z = pc[:, 2]
        if np.any(z <= 1e-9):
            break
        u = k.f * pc[:, 0] / z + k.cx
        v = k.f * pc[:, 1] / z + k.cy
        resid = np.concatenate([u - pts2d[:, 0], v - pts2d[:, 1]])
        fz = k.f / z
        # d(u,v)/d(camera point)
        du = np.stack([fz, np.zeros_like(fz), -k.f * pc[:, 0] / z**2], axis=1)
        dv = np.stack([np.zeros_like(fz), fz, -k.f * pc[:, 1] / z**2], axis=1)
        n = pts3d.shape[0]
        J = np.zeros((2 * n, 6))
        # Left-increment chain rule: d(pc)/d(omega) = -hat(pc), d(pc)/d(dt) = I,
        # and a @ -hat(b) = cross(b, a).
        J[:n, :3] = np.cross(pc, du)
        J[:n, 3:] = du
        J[n:, :3] = np.cross(pc, dv)
        J[n:, 3:] = dv
        g = J.T @ resid
        H = J.T @ J + 1e-12 * np.eye(6)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        delta = se3_exp(step)
        newR = delta.rotation.as_matrix() @ R
        newt = delta.rotation.as_matrix() @ t + delta.translation
        new_resid = _reproject_errors(newR, newt, pts3d, pts2d, k)
        if not np.isfinite(new_resid).all():
            break
        R, t = newR, newt
        if np.linalg.norm(step) < 1e-14:
            break
    return R, t


def solve_pnp(
    points3d: np.ndarray,
    points2d: np.ndarray,
    k: CameraIntrinsics,
    refine_iters: int = 20,
) -> tuple[Pose, float]:
    """Camera-from-model pose for >= 4 correspondences, plus reprojection RMS."""
    pts3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    pts2d = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    if pts3d.shape[0] != pts2d.shape[0]:
        raise PnPError("correspondence count mismatch")
    if pts3d.shape[0] < 4:
        raise PnPError("need at least 4 correspondences")
    cps, planar = _control_points(pts3d)
    alphas = _barycentric(pts3d, cps)
    vecs = _solve_m_nullspace(alphas, pts2d, k)
    rho = _pairwise_sq(cps)

    candidates = []
    if planar:
        # One-parameter family: scale each trailing null vector to match the
        # control-point distances, keep every hypothesis.
        for col in range(2):
            vec = vecs[:, col]
            cc = vec.reshape(3, 3)
            d = _pairwise_sq(cc)
            denom = float(d @ d)
            if denom < 1e-20:
                continue
            beta = np.sqrt(max(float(d @ rho), 0.0) / denom)
            candidates.append(beta * cc)
    else:
        basis = vecs[:, :4].T  # rows ordered smallest eigenvalue first
        L = _build_l6x10(basis)
        for betas in _approx_betas(L, rho):
            betas = _gauss_newton_betas(L, rho, betas)
            ccs = np.tensordot(betas, basis.reshape(4, 4, 3), axes=1)
            candidates.append(ccs)

    best = None
    for ccs in candidates:
        R, t, err = _candidate_from_ccs(ccs, alphas, pts3d, pts2d, k)
        if not np.isfinite(err):
            continue
        R, t = _refine_pose(R, t, pts3d, pts2d, k, refine_iters)
        final = _reproject_errors(R, t, pts3d, pts2d, k)
        if not np.isfinite(final).all():
            continue
        rms = float(np.sqrt(np.mean(final**2)))
        if best is None or rms < best[2]:
            best = (R, t, rms)
    if best is None:
        raise PnPError("no valid pose candidate")
    R, t, rms = best
    return Pose(Rotation.from_matrix(R), t), rms


def ransac_pnp(
    points3d: np.ndarray,
    points2d: np.ndarray,
    k: CameraIntrinsics,
    inlier_threshold: float = 4.0,
    iterations: int = 200,
    seed: int = 0,
    refine_iters: int = 20,
) -> tuple[Pose, float, np.ndarray]:
    """Outlier-tolerant solve: minimal 4-point hypotheses, refit on inliers."""
    pts3d = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    pts2d = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    n = pts3d.shape[0]
    if n < 4:
        raise PnPError("need at least 4 correspondences")
    # If the all-point solution already explains every correspondence, the
    # consensus set is the full set and sampling cannot do better.
    try:
        pose, rms = solve_pnp(pts3d, pts2d, k, refine_iters=refine_iters)
        err = _reproject_errors(pose.rotation.as_matrix(), pose.translation, pts3d, pts2d, k)
        if np.all(err < inlier_threshold):
            return pose, rms, np.ones(n, dtype=bool)
    except PnPError:
        pass
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 3
    for _ in range(iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            pose, _ = solve_pnp(pts3d[idx], pts2d[idx], k, refine_iters=4)
        except PnPError:
            continue
        err = _reproject_errors(pose.rotation.as_matrix(), pose.translation, pts3d, pts2d, k)
        mask = err < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None:
        raise PnPError("ransac found no consensus set")
    pose, rms = solve_pnp(pts3d[best_mask], pts2d[best_mask], k, refine_iters=refine_iters)
    err = _reproject_errors(pose.rotation.as_matrix(), pose.translation, pts3d, pts2d, k)
    final_mask = err < inlier_threshold
    if final_mask.sum() >= 4 and final_mask.sum() > best_mask.sum():
        pose, rms = solve_pnp(pts3d[final_mask], pts2d[final_mask], k, refine_iters=refine_iters)
        best_mask = final_mask
    return pose, rms, best_mask
