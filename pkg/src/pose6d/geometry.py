"""Rigid-body math, camera model, rotation sampling and point utilities.

Conventions used throughout the package:
  * quaternions are stored as (w, x, y, z) with unit norm and w >= 0,
  * twists are 6-vectors ordered (rotational part, translational part),
  * camera frame is right-handed with +z in front of the camera,
  * pixel coordinates follow (u, v) = (f*x/z + cx, f*y/z + cy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

_EPS = 1e-12


class GeometryError(ValueError):
    """Raised for invalid geometric inputs (degenerate meshes, bad depths...)."""


def _hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion (w, x, y, z), canonicalized to w >= 0."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < _EPS:
            raise GeometryError("quaternion has zero or non-finite norm")
        q = q / n
        if q[0] < 0.0:
            q = -q
        object.__setattr__(self, "q", q)
        self.q.setflags(write=False)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        m = np.asarray(m, dtype=np.float64)
        # Shepperd's method: pick the dominant diagonal branch for stability.
        t = np.trace(m)
        if t > 0.0:
            s = np.sqrt(t + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
            )
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
        return Rotation(q)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def compose(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(
            np.array(
                [
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
                ]
            )
        )

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.as_matrix().T

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic distance on SO(3), radians in [0, pi]."""
        d = abs(float(np.dot(self.q, other.q)))
        return 2.0 * np.arccos(min(d, 1.0))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_out = R x + t, translation in meters."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("non-finite translation")
        object.__setattr__(self, "translation", t)
        self.translation.setflags(write=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with a single focal length in pixels."""

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.f > 0.0 and np.isfinite(self.f)):
            raise GeometryError("focal length must be positive and finite")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise GeometryError("principal point must be finite")


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh with an explicit meters-per-model-unit scale.

    Database meshes come in arbitrary units, so geometry in meters is always
    obtained through ``vertices_m`` rather than the raw vertex array.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.shape[0] < 1:
            raise GeometryError("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise GeometryError("mesh has non-finite vertices")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= v.shape[0]:
            raise GeometryError("triangle index out of range")
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise GeometryError("mesh scale must be positive")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        v.setflags(write=False)
        t.setflags(write=False)

    @property
    def vertices_m(self) -> np.ndarray:
        """Vertices in meters."""
        return self.vertices * self.scale

    def rescaled(self, scale: float) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, scale)

    def triangle_areas_m2(self) -> np.ndarray:
        v = self.vertices_m
        a, b, c = (v[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


# ---------------------------------------------------------------------------
# SO(3) / SE(3) exponential and logarithm


def so3_exp(omega) -> Rotation:
    """Rotation by angle |omega| about axis omega/|omega|."""
    w = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    if theta < 1e-9:
        # sin(t/2)/t ~ 1/2 - t^2/48
        s = 0.5 - theta * theta / 48.0
        return Rotation(np.array([np.cos(theta / 2.0), *(s * w)]))
    axis = w / theta
    return Rotation(np.array([np.cos(theta / 2.0), *(np.sin(theta / 2.0) * axis)]))


def so3_log(r: Rotation) -> np.ndarray:
    """Minimal axis-angle vector; |result| <= pi.

    The w >= 0 canonical form puts the angle in [0, pi]; at exactly pi the
    axis comes straight from the quaternion imaginary part, which stays well
    conditioned where the trace formula does not.
    """
    w, x, y, z = r.q
    v = np.array([x, y, z])
    s = np.linalg.norm(v)
    if s < 1e-9:
        return 2.0 * v / max(w, _EPS)
    return (2.0 * np.arctan2(s, w) / s) * v


def _so3_V(omega: np.ndarray) -> np.ndarray:
    """Integral of the rotation series: exp translation block."""
    theta = np.linalg.norm(omega)
    K = _hat(omega)
    if theta < 1e-6:
        a = 0.5 - theta**2 / 24.0
        b = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * K + b * (K @ K)


def _so3_V_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = _hat(omega)
    if theta < 1e-6:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = (1.0 - (theta * np.sin(theta)) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * K + c * (K @ K)


def se3_exp(xi) -> Pose:
    """Twist (omega, v) to rigid transform."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    omega, v = xi[:3], xi[3:]
    return Pose(so3_exp(omega), _so3_V(omega) @ v)


def se3_log(t: Pose) -> np.ndarray:
    """Rigid transform to twist (omega, v); inverse of se3_exp for angle < pi."""
    omega = so3_log(t.rotation)
    return np.concatenate([omega, _so3_V_inv(omega) @ t.translation])


def se3_left_jacobian_inverse(xi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SE(3) at twist xi, in (omega, v) block order.

    Satisfies log(exp(hat(eta)) @ exp(hat(xi))) ~ xi + Jl_inv(xi) @ eta for a
    small left increment eta; used to differentiate pose residuals.
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    phi, rho = xi[:3], xi[3:]
    theta = np.linalg.norm(phi)
    P = _hat(phi)
    R = _hat(rho)
    PP = P @ P
    if theta < 1e-4:
        c2 = 1.0 / 6.0 - theta**2 / 120.0
        c3 = 1.0 / 24.0 - theta**2 / 720.0
        c4 = -1.0 / 120.0 + theta**2 / 5040.0
    else:
        c2 = (theta - np.sin(theta)) / theta**3
        c3 = (1.0 - theta**2 / 2.0 - np.cos(theta)) / theta**4
        c4 = (theta - np.sin(theta) - theta**3 / 6.0) / theta**5
    Q = (
        0.5 * R
        + c2 * (P @ R + R @ P + P @ R @ P)
        - c3 * (PP @ R + R @ PP - 3.0 * P @ R @ P)
        - 0.5 * (c3 - 3.0 * c4) * (P @ R @ PP + PP @ R @ P)
    )
    # The SO(3) V-inverse doubles as the inverse left Jacobian of SO(3).
    Jinv = _so3_V_inv(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = Jinv
    out[3:, 3:] = Jinv
    out[3:, :3] = -Jinv @ Q @ Jinv
    return out


def se3_interpolate(a: Pose, b: Pose, alpha: float) -> Pose:
    """Point at fraction alpha along the geodesic from a to b."""
    return a.compose(se3_exp(alpha * se3_log(a.inverse().compose(b))))


# ---------------------------------------------------------------------------
# Rotation sampling

# Spiral constants from the super-Fibonacci construction: sqrt(2) and the
# real root of x^4 = x + 4 divided by 2.
_PHI = np.sqrt(2.0)
_PSI = 1.533751168755204288118041


def sample_so3(n: int) -> list[Rotation]:
    """Deterministic low-discrepancy sample of n rotations.

    Double-spiral construction on the unit 3-sphere; identical output for a
    given n on every platform.
    """
    if n < 1:
        raise GeometryError("need at least one sample")
    s = np.arange(n, dtype=np.float64) + 0.5
    r = np.sqrt(s / n)
    rr = np.sqrt(1.0 - s / n)
    alpha = 2.0 * np.pi * s / _PHI
    beta = 2.0 * np.pi * s / _PSI
    quats = np.stack(
        [rr * np.cos(beta), r * np.sin(alpha), r * np.cos(alpha), rr * np.sin(beta)], axis=1
    )
    return [Rotation(q) for q in quats]


def sample_so3_quats(n: int) -> np.ndarray:
    """Canonicalized (n, 4) quaternion array of sample_so3, for bulk math."""
    return np.stack([r.q for r in sample_so3(n)])


# ---------------------------------------------------------------------------
# Camera projection


def project(point, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a 3D point in the camera frame, in pixels."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if p[2] <= 0.0:
        raise GeometryError("point is behind camera")
    return np.array([k.f * p[0] / p[2] + k.cx, k.f * p[1] / p[2] + k.cy])


def project_many(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection; caller guarantees z > 0."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    return np.stack([k.f * pts[:, 0] / z + k.cx, k.f * pts[:, 1] / z + k.cy], axis=1)


def backproject(pixel, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Inverse of project at the given depth (meters)."""
    if depth <= 0.0:
        raise GeometryError("depth must be positive")
    u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
    return np.array([(u - k.cx) * depth / k.f, (v - k.cy) * depth / k.f, depth])


def backproject_many(pixels: np.ndarray, depths: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    if np.any(d <= 0.0):
        raise GeometryError("depth must be positive")
    return np.stack([(px[:, 0] - k.cx) * d / k.f, (px[:, 1] - k.cy) * d / k.f, d], axis=1)


# ---------------------------------------------------------------------------
# Mesh surface sampling and nearest-neighbor queries


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed: int) -> np.ndarray:
    """Area-weighted uniform surface samples, in meters, deterministic per seed."""
    if n < 1:
        raise GeometryError("need at least one sample")
    areas = mesh.triangle_areas_m2()
    total = areas.sum()
    if total <= 0.0:
        raise GeometryError("degenerate mesh: zero surface area")
    rng = np.random.default_rng(seed)
    tri_idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    # Reflect points that fall outside the triangle half of the parallelogram.
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    verts = mesh.vertices_m
    tris = mesh.triangles[tri_idx]
    a = verts[tris[:, 0]]
    b = verts[tris[:, 1]]
    c = verts[tris[:, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def nearest_distances(queries: np.ndarray, references: np.ndarray) -> np.ndarray:
    """Per-query Euclidean distance to the nearest reference point."""
    refs = np.asarray(references, dtype=np.float64)
    if refs.size == 0:
        raise GeometryError("empty reference set")
    tree = cKDTree(refs, leafsize=16)
    dist, _ = tree.query(np.asarray(queries, dtype=np.float64))
    return np.atleast_1d(dist)
