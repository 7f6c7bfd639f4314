from pathlib import Path

import numpy as np
import pytest

from conftest import random_pose, random_rotation
from pose6d.geometry import Pose, Rotation, se3_left_jacobian_inverse, se3_log, so3_exp, so3_log
from pose6d.retarget import (
    Joint,
    KinematicChain,
    RetargetError,
    RetargetProblem,
    SolverOptions,
    body_jacobian,
    camera_to_robot,
    default_camera_to_robot,
    forward_kinematics,
    jacobian,
    load_chain,
    optimize_trajectory,
    relative_reference,
)

CHAIN_FILE = Path(__file__).parent.parent / "src" / "pose6d" / "data" / "panda_chain.json"
HOME = np.array([0.0, -0.7853981633974483, 0.0, -2.356194490192345, 0.0, 1.5707963267948966, 0.7853981633974483])


def panda():
    return load_chain(CHAIN_FILE)


def lever_chain():
    joint = Joint(
        axis=[0, 0, 1],
        parent_transform=Pose.identity(),
        limits=(-3.0, 3.0),
        velocity_limit=2.0,
        effort_limit=50.0,
        inertia=1.0,
    )
    tool = Pose(Rotation.identity(), [1.0, 0.0, 0.0])
    return KinematicChain([joint], tool, Pose.identity())


def fk_matrix_oracle(chain, q):
    t = np.eye(4)
    for joint, angle in zip(chain.joints, q):
        t = t @ joint.parent_transform.as_matrix()
        m = np.eye(4)
        m[:3, :3] = so3_exp(joint.axis * angle).as_matrix()
        t = t @ m
    return t @ chain.tool_transform.as_matrix() @ chain.grasp_transform.as_matrix()


class TestForwardKinematics:
    def test_zero_angle_lever(self):
        pose = forward_kinematics(lever_chain(), [0.0])
        assert np.allclose(pose.translation, [1, 0, 0])
        assert pose.rotation.angle_to(Rotation.identity()) < 1e-12

    def test_quarter_turn_lever(self):
        pose = forward_kinematics(lever_chain(), [np.pi / 2])
        assert np.allclose(pose.translation, [0, 1, 0], atol=1e-12)
        assert abs(pose.rotation.angle_to(Rotation.identity()) - np.pi / 2) < 1e-12

    def test_matrix_chain_oracle(self, rng):
        chain = panda()
        for _ in range(25):
            q = rng.uniform(-1.5, 1.5, 7)
            assert np.allclose(forward_kinematics(chain, q).as_matrix(), fk_matrix_oracle(chain, q), atol=1e-9)

    def test_wrong_joint_count_rejected(self):
        with pytest.raises(RetargetError):
            forward_kinematics(panda(), [0.0, 0.0])


class TestJacobian:
    def test_finite_difference_match(self, rng):
        chain = panda()
        eps = 1e-6
        for _ in range(5):
            q = rng.uniform(-1.2, 1.2, 7)
            J = jacobian(chain, q)
            for i in range(7):
                dq = np.zeros(7)
                dq[i] = eps
                plus = forward_kinematics(chain, q + dq)
                minus = forward_kinematics(chain, q - dq)
                v_num = (plus.translation - minus.translation) / (2 * eps)
                w_num = so3_log(plus.rotation.compose(minus.rotation.inverse())) / (2 * eps)
                assert np.allclose(J[3:, i], v_num, atol=1e-5)
                assert np.allclose(J[:3, i], w_num, atol=1e-5)

    def test_object_on_axis_has_zero_translation_column(self):
        joint = Joint([0, 0, 1], Pose.identity(), (-3, 3), 1, 1, 1.0)
        chain = KinematicChain([joint], Pose(Rotation.identity(), [0, 0, 0.5]), Pose.identity())
        J = jacobian(chain, [0.7])
        assert np.allclose(J[3:, 0], 0.0, atol=1e-12)
        assert np.allclose(J[:3, 0], [0, 0, 1], atol=1e-12)

    def test_zero_length_chain(self):
        joint = Joint([0, 1, 0], Pose.identity(), (-3, 3), 1, 1, 1.0)
        chain = KinematicChain([joint], Pose.identity(), Pose.identity())
        J = jacobian(chain, [0.3])
        assert np.allclose(J[:3, 0], [0, 1, 0])
        assert np.allclose(J[3:, 0], 0.0)


class TestFrameOps:
    def test_identity_mapping(self, rng):
        poses = [random_pose(rng) for _ in range(5)]
        out = camera_to_robot(poses, Pose.identity())
        for a, b in zip(out, poses):
            assert np.allclose(a.as_matrix(), b.as_matrix())

    def test_pure_rotation_preserves_relative_transforms(self, rng):
        poses = [random_pose(rng) for _ in range(4)]
        g = Pose(random_rotation(rng), np.zeros(3))
        out = camera_to_robot(poses, g)
        for i in range(3):
            rel_in = poses[i].inverse().compose(poses[i + 1])
            rel_out = out[i].inverse().compose(out[i + 1])
            assert np.allclose(rel_in.as_matrix(), rel_out.as_matrix(), atol=1e-9)

    def test_matrix_composition_oracle(self, rng):
        poses = [random_pose(rng) for _ in range(3)]
        g = random_pose(rng)
        out = camera_to_robot(poses, g)
        for a, b in zip(out, poses):
            assert np.allclose(a.as_matrix(), g.as_matrix() @ b.as_matrix(), atol=1e-12)

    def test_default_camera_pose_is_valid(self):
        t = default_camera_to_robot()
        R = t.rotation.as_matrix()
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        view_dir = R[:, 2]
        # Pitched 30 degrees below horizontal.
        assert abs(np.degrees(np.arcsin(-view_dir[2])) - 30.0) < 1e-9

    def test_relative_reference_anchors_exactly(self, rng):
        poses = [random_pose(rng) for _ in range(6)]
        start = random_pose(rng)
        out = relative_reference(poses, start)
        assert np.allclose(out[0].as_matrix(), start.as_matrix(), atol=1e-12)
        for i in range(5):
            rel_in = poses[i].inverse().compose(poses[i + 1])
            rel_out = out[i].inverse().compose(out[i + 1])
            assert np.allclose(rel_in.as_matrix(), rel_out.as_matrix(), atol=1e-9)

    def test_relative_reference_constant(self, rng):
        p = random_pose(rng)
        start = random_pose(rng)
        out = relative_reference([p, p, p], start)
        for o in out:
            assert np.allclose(o.as_matrix(), start.as_matrix(), atol=1e-12)

    def test_relative_reference_identity_anchor(self, rng):
        poses = [random_pose(rng) for _ in range(4)]
        out = relative_reference(poses, poses[0])
        for a, b in zip(out, poses):
            assert np.allclose(a.as_matrix(), b.as_matrix(), atol=1e-12)


def dls_ik(chain, q_init, target, iters=300, damping=1e-9):
    """Independent damped-least-squares inverse kinematics oracle."""
    q = np.asarray(q_init, dtype=float).copy()
    for _ in range(iters):
        pose = forward_kinematics(chain, q)
        r = se3_log(pose.inverse().compose(target))
        if np.linalg.norm(r) < 1e-14:
            break
        Jr = -se3_left_jacobian_inverse(r) @ body_jacobian(chain, q)
        step = np.linalg.solve(Jr.T @ Jr + damping * np.eye(len(q)), -Jr.T @ r)
        q = q + np.clip(step, -0.2, 0.2)
    return q


class TestOptimizeTrajectory:
    def test_fixed_point_costs_nothing(self):
        chain = panda()
        target = forward_kinematics(chain, HOME)
        problem = RetargetProblem(targets=[target] * 10, dt=0.05, q0=HOME)
        traj = optimize_trajectory(problem, chain)
        assert traj.cost_trace[-1] < 1e-12
        assert np.abs(traj.tau).max() < 1e-6
        assert traj.residual_norms.max() < 1e-9

    def test_static_target_matches_ik_oracle(self, rng):
        chain = panda()
        q_goal = HOME + rng.uniform(-0.25, 0.25, 7)
        target = forward_kinematics(chain, q_goal)
        problem = RetargetProblem(
            targets=[target] * 60, dt=0.05, q0=HOME,
            weights={"w_d": 100.0, "w_qd": 1e-8, "w_tau": 1e-10},
        )
        traj = optimize_trajectory(problem, chain)
        assert traj.residual_norms[-1] < 1e-3
        q_ik = dls_ik(chain, HOME, target)
        pose_ik = forward_kinematics(chain, q_ik)
        diff = se3_log(traj.object_poses[-1].inverse().compose(pose_ik))
        assert np.linalg.norm(diff) < 1e-3

    def test_cost_trace_monotone(self, rng):
        chain = panda()
        targets = [forward_kinematics(chain, HOME + rng.uniform(-0.3, 0.3, 7)) for _ in range(12)]
        problem = RetargetProblem(targets=targets, dt=0.05, q0=HOME)
        traj = optimize_trajectory(problem, chain)
        trace = traj.cost_trace
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))

    def test_velocity_weight_monotonicity(self, rng):
        chain = panda()
        q_goal = HOME + rng.uniform(-0.3, 0.3, 7)
        target = forward_kinematics(chain, q_goal)
        sums = []
        for w_qd in (1e-3, 1e-2):
            problem = RetargetProblem(
                targets=[target] * 30, dt=0.05, q0=HOME,
                weights={"w_d": 100.0, "w_qd": w_qd, "w_tau": 1e-6},
            )
            traj = optimize_trajectory(problem, chain)
            sums.append(float(np.sum(traj.qd**2)))
        assert sums[1] <= sums[0] * (1 + 1e-6)

    def test_gradient_matches_finite_differences(self, rng):
        from pose6d.retarget import _CostModel

        chain = panda()
        target = forward_kinematics(chain, HOME + rng.uniform(-0.3, 0.3, 7))
        problem = RetargetProblem(targets=[target] * 4, dt=0.05, q0=HOME)
        model = _CostModel(problem, chain)
        x = np.concatenate([HOME + rng.uniform(-0.2, 0.2, 7), rng.uniform(-0.5, 0.5, 7)])
        _, gx, _ = model.state_cost(x, target)
        eps = 1e-6
        for i in range(14):
            dx = np.zeros(14)
            dx[i] = eps
            fp = model.state_cost(x + dx, target)[0]
            fm = model.state_cost(x - dx, target)[0]
            fd = (fp - fm) / (2 * eps)
            assert abs(fd - gx[i]) <= 1e-4 * max(1.0, abs(fd))

    def test_equivariance_under_common_rigid_transform(self, rng):
        chain = panda()
        g = random_pose(rng, t_scale=0.5)
        targets = [forward_kinematics(chain, HOME + rng.uniform(-0.2, 0.2, 7)) for _ in range(8)]
        problem = RetargetProblem(targets=targets, dt=0.05, q0=HOME)
        traj1 = optimize_trajectory(problem, chain)

        moved_joints = list(chain.joints)
        moved_joints[0] = Joint(
            chain.joints[0].axis, g.compose(chain.joints[0].parent_transform),
            chain.joints[0].limits, chain.joints[0].velocity_limit,
            chain.joints[0].effort_limit, chain.joints[0].inertia,
        )
        chain2 = KinematicChain(moved_joints, chain.tool_transform, chain.grasp_transform)
        problem2 = RetargetProblem(targets=[g.compose(t) for t in targets], dt=0.05, q0=HOME)
        traj2 = optimize_trajectory(problem2, chain2)
        assert np.allclose(traj1.q, traj2.q, atol=1e-6)

    def test_infeasible_start_rejected(self):
        chain = panda()
        bad = HOME.copy()
        bad[0] = 99.0
        with pytest.raises(RetargetError, match="infeasible"):
            optimize_trajectory(RetargetProblem(targets=[Pose.identity()], dt=0.05, q0=bad), chain)

    def test_limit_projection_clamps(self):
        # A lever with a tight limit asked to rotate past it.
        joint = Joint([0, 0, 1], Pose.identity(), (-0.5, 0.5), 10.0, 100.0, 1.0)
        chain = KinematicChain([joint], Pose(Rotation.identity(), [1.0, 0.0, 0.0]), Pose.identity())
        target = forward_kinematics(chain, [1.2])
        problem = RetargetProblem(
            targets=[target] * 20, dt=0.1, q0=np.zeros(1),
            weights={"w_d": 100.0, "w_qd": 1e-8, "w_tau": 1e-8, "w_limit": 0.0},
        )
        free = optimize_trajectory(problem, chain, SolverOptions(project_limits=False))
        clamped = optimize_trajectory(problem, chain, SolverOptions(project_limits=True))
        assert np.all(clamped.q >= -0.5 - 1e-12) and np.all(clamped.q <= 0.5 + 1e-12)
        assert np.any(free.q > 0.5)

    def test_weights_validated(self):
        with pytest.raises(RetargetError):
            RetargetProblem(targets=[Pose.identity()], dt=0.05, q0=np.zeros(7), weights={"w_d": 0.0})


class TestChainFile:
    def test_bundled_profile_loads(self):
        chain = panda()
        assert chain.n_joints == 7
        assert all(j.limits[0] < j.limits[1] for j in chain.joints)

    def test_grasp_transform_applied(self, rng):
        chain = panda()
        grasp = random_pose(rng, t_scale=0.1)
        with_grasp = chain.with_grasp(grasp)
        q = rng.uniform(-1, 1, 7)
        a = forward_kinematics(chain, q).compose(grasp)
        b = forward_kinematics(with_grasp, q)
        assert np.allclose(a.as_matrix(), b.as_matrix(), atol=1e-12)
