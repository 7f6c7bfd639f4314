import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose, random_rotation, uniform_quats
from pose6d.geometry import (
    CameraIntrinsics,
    GeometryError,
    Pose,
    Rotation,
    TriangleMesh,
    backproject,
    nearest_distances,
    project,
    sample_mesh_surface,
    sample_so3,
    sample_so3_quats,
    se3_exp,
    se3_interpolate,
    se3_log,
    so3_exp,
    so3_log,
)

unit_floats = st.floats(-1.0, 1.0, allow_nan=False)


class TestSo3:
    def test_exp_zero_is_identity(self):
        r = so3_exp([0.0, 0.0, 0.0])
        assert np.allclose(r.q, [1, 0, 0, 0])

    def test_exp_half_turn_about_x(self):
        r = so3_exp([np.pi, 0.0, 0.0])
        assert np.allclose(np.abs(r.q), [0, 1, 0, 0], atol=1e-12)

    def test_log_identity_is_zero(self):
        assert np.allclose(so3_log(Rotation.identity()), 0.0)

    def test_log_quarter_turn_about_z(self):
        r = so3_exp([0, 0, np.pi / 2])
        assert np.allclose(so3_log(r), [0, 0, np.pi / 2], atol=1e-12)

    def test_log_exp_round_trip(self, rng):
        for _ in range(300):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            w = axis * rng.uniform(0, np.pi - 1e-9)
            assert np.allclose(so3_log(so3_exp(w)), w, atol=1e-9)

    def test_log_angle_matches_trace_formula(self, rng):
        for _ in range(100):
            a, b = random_rotation(rng), random_rotation(rng)
            rel = a.compose(b.inverse())
            m = rel.as_matrix()
            trace_angle = np.arccos(np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0))
            assert abs(np.linalg.norm(so3_log(rel)) - trace_angle) < 1e-9

    def test_log_at_pi_uses_imaginary_axis(self):
        axis = np.array([1.0, 2.0, -0.5])
        axis /= np.linalg.norm(axis)
        w = so3_log(so3_exp(axis * np.pi))
        assert abs(np.linalg.norm(w) - np.pi) < 1e-12
        assert np.allclose(np.abs(w / np.pi), np.abs(axis), atol=1e-9)

    def test_matrix_round_trip(self, rng):
        for _ in range(100):
            r = random_rotation(rng)
            again = Rotation.from_matrix(r.as_matrix())
            assert r.angle_to(again) < 1e-9


class TestSe3:
    def test_identity_maps_to_zero_twist(self):
        assert np.allclose(se3_log(Pose.identity()), np.zeros(6))

    def test_pure_translation(self):
        xi = se3_log(Pose(Rotation.identity(), [0.1, 0.0, 0.0]))
        assert np.allclose(xi, [0, 0, 0, 0.1, 0, 0])

    def test_round_trip(self, rng):
        for _ in range(200):
            pose = random_pose(rng)
            xi = se3_log(pose)
            back = se3_exp(xi)
            assert pose.rotation.angle_to(back.rotation) < 1e-9
            assert np.allclose(pose.translation, back.translation, atol=1e-9)

    def test_group_laws(self, rng):
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = a.compose(b).compose(c).as_matrix()
            right = a.compose(b.compose(c)).as_matrix()
            assert np.allclose(left, right, atol=1e-9)
            ident = a.compose(a.inverse()).as_matrix()
            assert np.allclose(ident, np.eye(4), atol=1e-9)

    def test_interpolation_midpoint_on_geodesic(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        mid = se3_interpolate(a, b, 0.5)
        full = se3_log(a.inverse().compose(b))
        half = se3_log(a.inverse().compose(mid))
        assert np.allclose(half, 0.5 * full, atol=1e-9)


class TestSampler:
    def test_single_sample_is_valid(self):
        (r,) = sample_so3(1)
        assert abs(np.linalg.norm(r.q) - 1.0) < 1e-12

    def test_deterministic(self):
        a = sample_so3_quats(64)
        b = sample_so3_quats(64)
        assert np.array_equal(a, b)

    def test_rejects_nonpositive(self):
        with pytest.raises(GeometryError):
            sample_so3(0)

    def test_resolution_near_table_values(self):
        # Mean geodesic gap between each sample and its nearest neighbor:
        # ~25 deg at 600 samples, strictly finer at 1200.
        def separation(n):
            qs = sample_so3_quats(n)
            dots = np.abs(qs @ qs.T)
            np.fill_diagonal(dots, 0.0)
            return np.degrees(2 * np.arccos(np.clip(dots.max(axis=1), -1, 1))).mean()

        s600 = separation(600)
        s1200 = separation(1200)
        assert 20.0 <= s600 <= 30.0
        assert s1200 < s600

    def test_random_query_coverage_is_finer_than_resolution(self):
        qs = sample_so3_quats(600)
        queries = uniform_quats(2000, 7)
        nearest = np.degrees(2 * np.arccos(np.clip(np.abs(queries @ qs.T).max(axis=1), -1, 1)))
        assert nearest.mean() < 20.0  # well inside the resolution figure


class TestCamera:
    def test_optical_axis(self, camera):
        assert np.allclose(project([0, 0, 1], camera), [320, 240])

    def test_pinhole_hand_value(self, camera):
        assert np.allclose(project([0.1, 0, 1], camera), [370, 240])

    def test_behind_camera_rejected(self, camera):
        with pytest.raises(GeometryError):
            project([0, 0, 0.0], camera)

    def test_backproject_principal_point(self, camera):
        assert np.allclose(backproject([320, 240], 2.0, camera), [0, 0, 2])

    def test_backproject_zero_depth_rejected(self, camera):
        with pytest.raises(GeometryError):
            backproject([10, 10], 0.0, camera)

    def test_round_trip(self, camera, rng):
        for _ in range(200):
            px = rng.uniform([0, 0], [640, 480])
            d = rng.uniform(0.2, 5.0)
            assert np.allclose(project(backproject(px, d, camera), camera), px, atol=1e-9)

    @given(
        st.floats(10, 2000), st.floats(0.05, 50.0),
        st.floats(-3, 3), st.floats(-3, 3),
    )
    @settings(max_examples=50, deadline=None)
    def test_projection_consistency_property(self, f, depth, x, y):
        k = CameraIntrinsics(f=f, cx=11.0, cy=-4.0, width=640, height=480)
        px = project([x, y, depth], k)
        assert np.allclose(backproject(px, depth, k), [x, y, depth], atol=1e-9 * max(1.0, abs(x), abs(y)))


def unit_square_mesh():
    verts = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    return TriangleMesh(verts, [[0, 1, 2], [0, 2, 3]])


class TestMeshSampling:
    def test_mean_near_centroid(self):
        pts = sample_mesh_surface(unit_square_mesh(), 100_000, seed=3)
        assert np.allclose(pts.mean(axis=0), [0.5, 0.5, 0.0], atol=0.01)

    def test_single_triangle_barycentric_containment(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        (p,) = sample_mesh_surface(mesh, 1, seed=0)
        u, v = p[0], p[1]
        assert u >= 0 and v >= 0 and u + v <= 1.0 and p[2] == 0.0

    def test_area_weighting(self):
        # Two triangles with a 9:1 area ratio.
        verts = [[0, 0, 0], [3, 0, 0], [0, 6, 0], [10, 0, 0], [10, 1, 0], [10, 0, 2]]
        mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
        pts = sample_mesh_surface(mesh, 100_000, seed=5)
        big = (pts[:, 0] <= 3.0).sum()
        ratio = big / (len(pts) - big)
        assert abs(ratio - 9.0) / 9.0 < 0.05

    def test_zero_area_rejected(self):
        mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(GeometryError):
            sample_mesh_surface(mesh, 10, seed=0)

    def test_deterministic(self):
        a = sample_mesh_surface(unit_square_mesh(), 100, seed=9)
        b = sample_mesh_surface(unit_square_mesh(), 100, seed=9)
        assert np.array_equal(a, b)

    def test_scale_applies(self):
        mesh = unit_square_mesh().rescaled(2.5)
        pts = sample_mesh_surface(mesh, 1000, seed=1)
        assert pts[:, 0].max() <= 2.5 and pts[:, 0].max() > 1.2


class TestNearestDistances:
    def test_member_query_is_zero(self, rng):
        refs = rng.normal(size=(50, 3))
        d = nearest_distances(refs[[7]], refs)
        assert d[0] == 0.0

    def test_three_four_five(self):
        assert np.allclose(nearest_distances([[3.0, 4.0, 0.0]], [[0.0, 0.0, 0.0]]), [5.0])

    def test_empty_reference_rejected(self):
        with pytest.raises(GeometryError):
            nearest_distances([[0, 0, 0]], np.zeros((0, 3)))

    def test_matches_brute_force(self, rng):
        for n_q, n_r in [(100, 1000), (500, 2000), (37, 3)]:
            q = rng.normal(size=(n_q, 3))
            r = rng.normal(size=(n_r, 3))
            fast = nearest_distances(q, r)
            brute = np.sqrt(((q[:, None, :] - r[None, :, :]) ** 2).sum(-1)).min(axis=1)
            assert np.allclose(fast, brute, atol=1e-12)


class TestInvariants:
    def test_mesh_rejects_bad_indices(self):
        with pytest.raises(GeometryError):
            TriangleMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 5]])

    def test_mesh_rejects_nan(self):
        with pytest.raises(GeometryError):
            TriangleMesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])

    def test_quaternion_canonical_w_nonnegative(self, rng):
        for _ in range(50):
            q = rng.normal(size=4)
            assert Rotation(q).q[0] >= 0.0

    def test_intrinsics_require_positive_focal(self):
        with pytest.raises(GeometryError):
            CameraIntrinsics(f=0.0, cx=0, cy=0, width=10, height=10)
