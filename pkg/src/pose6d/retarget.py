"""Trajectory retargeting onto a serial-chain manipulator.

Camera-frame object poses are mapped into the robot base frame, re-anchored
as relative motion from a chosen start pose, and followed by minimizing

    sum_t  w_d ||log(T_t^-1 Ttilde_t)||^2 + w_qd ||qdot_t||^2 + w_tau ||tau_t||^2

over joint torques with decoupled double-integrator joint dynamics (per-joint
constant inertia, semi-implicit Euler).  The solver is iterative LQR with
analytic dynamics and cost derivatives; joint limits enter as a quadratic
penalty with an optional final projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Rotation, se3_left_jacobian_inverse, se3_log, so3_exp
from .tensorio import read_json, write_json

DEFAULT_WEIGHTS = {"w_d": 100.0, "w_qd": 1e-2, "w_tau": 1e-4, "w_limit": 100.0}


class RetargetError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray  # unit 3-vector, local frame
    parent_transform: Pose
    limits: tuple[float, float]
    velocity_limit: float
    effort_limit: float
    inertia: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = np.linalg.norm(a)
        if n < 1e-9:
            raise RetargetError("joint axis must be nonzero")
        object.__setattr__(self, "axis", a / n)
        if self.limits[0] >= self.limits[1]:
            raise RetargetError("joint limits must satisfy lo < hi")
        if self.inertia <= 0:
            raise RetargetError("joint inertia must be positive")


@dataclass(frozen=True)
class KinematicChain:
    joints: list[Joint]
    tool_transform: Pose
    grasp_transform: Pose

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def with_grasp(self, grasp: Pose) -> "KinematicChain":
        return KinematicChain(self.joints, self.tool_transform, grasp)


def _joint_pose(joint: Joint, angle: float) -> Pose:
    return joint.parent_transform.compose(Pose(so3_exp(joint.axis * angle), np.zeros(3)))


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """Pose of the held object in the base frame."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise RetargetError(f"expected {chain.n_joints} joint values, got {q.shape[0]}")
    t = Pose.identity()
    for joint, angle in zip(chain.joints, q):
        t = t.compose(_joint_pose(joint, angle))
    return t.compose(chain.tool_transform).compose(chain.grasp_transform)


def jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian of the object frame, rows (omega, v), base frame."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise RetargetError(f"expected {chain.n_joints} joint values, got {q.shape[0]}")
    t = Pose.identity()
    axes = []
    origins = []
    for joint, angle in zip(chain.joints, q):
        t = t.compose(joint.parent_transform)
        axes.append(t.rotation.apply(joint.axis))
        origins.append(t.translation)
        t = t.compose(Pose(so3_exp(joint.axis * angle), np.zeros(3)))
    obj = t.compose(chain.tool_transform).compose(chain.grasp_transform)
    p_obj = obj.translation
    J = np.zeros((6, chain.n_joints))
    for i in range(chain.n_joints):
        J[:3, i] = axes[i]
        J[3:, i] = np.cross(axes[i], p_obj - origins[i])
    return J


def body_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """Jacobian expressed in the object frame (used by the residual chain rule)."""
    J = jacobian(chain, q)
    Rt = forward_kinematics(chain, q).rotation.as_matrix().T
    Jb = np.zeros_like(J)
    Jb[:3] = Rt @ J[:3]
    Jb[3:] = Rt @ J[3:]
    return Jb


# ---------------------------------------------------------------------------
# Frame changes for reference trajectories


def camera_to_robot(poses: list[Pose], t_rc: Pose) -> list[Pose]:
    """Express camera-frame object poses in the robot base frame."""
    return [t_rc.compose(p) for p in poses]


def default_camera_to_robot() -> Pose:
    """Camera in front of the robot, optical axis pitched 30 degrees below
    horizontal, looking back at the workspace; base frame is z-up."""
    elev = np.deg2rad(30.0)
    z_cam = np.array([-np.cos(elev), 0.0, -np.sin(elev)])  # view direction
    x_cam = np.array([0.0, -1.0, 0.0])  # image right
    y_cam = np.cross(z_cam, x_cam)  # image down
    R = np.stack([x_cam, y_cam, z_cam], axis=1)
    position = np.array([1.2, 0.0, 0.4 + 1.2 * np.tan(elev)])
    return Pose(Rotation.from_matrix(R), position)


def relative_reference(poses: list[Pose], start: Pose) -> list[Pose]:
    """Re-anchor a trajectory so it begins exactly at `start`, preserving all
    inter-frame relative transforms."""
    if not poses:
        raise RetargetError("empty trajectory")
    anchor = start.compose(poses[0].inverse())
    return [anchor.compose(p) for p in poses]


# ---------------------------------------------------------------------------
# Trajectory optimization


@dataclass(frozen=True)
class RetargetProblem:
    targets: list[Pose]  # object poses in the base frame, one per step
    dt: float
    q0: np.ndarray
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self):
        if not self.targets:
            raise RetargetError("no target poses")
        if self.dt <= 0:
            raise RetargetError("dt must be positive")
        object.__setattr__(self, "q0", np.asarray(self.q0, dtype=np.float64).reshape(-1))
        w = dict(DEFAULT_WEIGHTS)
        w.update(self.weights)
        if w["w_d"] <= 0 or w["w_qd"] < 0 or w["w_tau"] < 0:
            raise RetargetError("weights must be w_d > 0 and others >= 0")
        object.__setattr__(self, "weights", w)

    @property
    def horizon(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class JointTrajectory:
    q: np.ndarray  # (N+1, n)
    qd: np.ndarray  # (N+1, n)
    tau: np.ndarray  # (N, n)
    object_poses: list[Pose]  # (N+1,) achieved poses
    residual_norms: np.ndarray  # (N,) SE(3) log norm vs each target
    cost_trace: list[float]
    converged: bool
    meta: dict


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    tolerance: float = 1e-8
    project_limits: bool = False


def _limit_penalty_terms(q: np.ndarray, chain: KinematicChain, w_limit: float):
    lo = np.array([j.limits[0] for j in chain.joints])
    hi = np.array([j.limits[1] for j in chain.joints])
    over = np.maximum(q - hi, 0.0)
    under = np.maximum(lo - q, 0.0)
    value = w_limit * float(np.sum(over**2 + under**2))
    grad = 2.0 * w_limit * (over - under)
    hess = 2.0 * w_limit * ((over > 0) | (under > 0)).astype(float)
    return value, grad, np.diag(hess)


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(axis, axis)


class _ChainEval:
    """Matrix-form kinematics with the fixed per-joint transforms precomputed;
    the optimizer evaluates these thousands of times per solve."""

    def __init__(self, chain: KinematicChain):
        self.chain = chain
        self.n = chain.n_joints
        self.parents = [
            (j.parent_transform.rotation.as_matrix(), j.parent_transform.translation) for j in chain.joints
        ]
        self.axes = [j.axis for j in chain.joints]
        tail = chain.tool_transform.compose(chain.grasp_transform)
        self.tail = (tail.rotation.as_matrix(), tail.translation)

    def fk(self, q: np.ndarray):
        R = np.eye(3)
        p = np.zeros(3)
        for (Rp, tp), axis, angle in zip(self.parents, self.axes, q):
            p = R @ tp + p
            R = R @ Rp @ _axis_angle_matrix(axis, angle)
        Rt, tt = self.tail
        return R @ Rt, R @ tt + p

    def fk_with_body_jacobian(self, q: np.ndarray):
        R = np.eye(3)
        p = np.zeros(3)
        axes_w = np.zeros((self.n, 3))
        origins = np.zeros((self.n, 3))
        for i, ((Rp, tp), axis, angle) in enumerate(zip(self.parents, self.axes, q)):
            p = R @ tp + p
            R = R @ Rp
            axes_w[i] = R @ axis
            origins[i] = p
            R = R @ _axis_angle_matrix(axis, angle)
        Rt, tt = self.tail
        R_obj = R @ Rt
        p_obj = R @ tt + p
        Jb = np.zeros((6, self.n))
        Jb[:3] = R_obj.T @ axes_w.T
        Jb[3:] = R_obj.T @ np.cross(axes_w, p_obj - origins).T
        return R_obj, p_obj, Jb


def _pose_residual(R_obj, p_obj, target: Pose):
    """Twist of target relative to the achieved pose, (omega, v)."""
    Rt = target.rotation.as_matrix()
    E = Pose(Rotation.from_matrix(R_obj.T @ Rt), R_obj.T @ (target.translation - p_obj))
    return se3_log(E)


class _CostModel:
    """Stage and terminal costs with analytic first derivatives and a
    Gauss-Newton Hessian for the pose-tracking term."""

    def __init__(self, problem: RetargetProblem, chain: KinematicChain):
        self.problem = problem
        self.chain = chain
        self.eval = _ChainEval(chain)
        self.n = chain.n_joints
        self.w = problem.weights

    def tracking(self, q: np.ndarray, target: Pose):
        R_obj, p_obj, Jb = self.eval.fk_with_body_jacobian(q)
        r = _pose_residual(R_obj, p_obj, target)
        Jr = -se3_left_jacobian_inverse(r) @ Jb
        value = self.w["w_d"] * float(r @ r)
        grad = 2.0 * self.w["w_d"] * (Jr.T @ r)
        hess = 2.0 * self.w["w_d"] * (Jr.T @ Jr)
        return value, grad, hess, float(np.linalg.norm(r)), (R_obj, p_obj)

    def tracking_value(self, q: np.ndarray, target: Pose) -> float:
        R_obj, p_obj = self.eval.fk(q)
        r = _pose_residual(R_obj, p_obj, target)
        return self.w["w_d"] * float(r @ r)

    def state_cost(self, x: np.ndarray, target: Pose | None):
        n = self.n
        q, qd = x[:n], x[n:]
        value = self.w["w_qd"] * float(qd @ qd)
        gx = np.zeros(2 * n)
        gx[n:] = 2.0 * self.w["w_qd"] * qd
        Hx = np.zeros((2 * n, 2 * n))
        Hx[n:, n:] = 2.0 * self.w["w_qd"] * np.eye(n)
        lv, lg, lh = _limit_penalty_terms(q, self.chain, self.w["w_limit"])
        value += lv
        gx[:n] += lg
        Hx[:n, :n] += lh
        if target is not None:
            tv, tg, th, _, _ = self.tracking(q, target)
            value += tv
            gx[:n] += tg
            Hx[:n, :n] += th
        return value, gx, Hx

    def state_cost_value(self, x: np.ndarray, target: Pose | None) -> float:
        n = self.n
        q, qd = x[:n], x[n:]
        value = self.w["w_qd"] * float(qd @ qd)
        value += _limit_penalty_terms(q, self.chain, self.w["w_limit"])[0]
        if target is not None:
            value += self.tracking_value(q, target)
        return value

    def control_cost(self, u: np.ndarray):
        value = self.w["w_tau"] * float(u @ u)
        gu = 2.0 * self.w["w_tau"] * u
        Hu = 2.0 * self.w["w_tau"] * np.eye(self.n)
        return value, gu, Hu


def _rollout(problem: RetargetProblem, chain: KinematicChain, us: np.ndarray):
    n = chain.n_joints
    inv_m = np.array([1.0 / j.inertia for j in chain.joints])
    dt = problem.dt
    xs = np.zeros((problem.horizon + 1, 2 * n))
    xs[0, :n] = problem.q0
    for t in range(problem.horizon):
        q, qd = xs[t, :n], xs[t, n:]
        qd_next = qd + dt * inv_m * us[t]
        xs[t + 1, :n] = q + dt * qd_next
        xs[t + 1, n:] = qd_next
    return xs


def _total_cost(model: _CostModel, xs: np.ndarray, us: np.ndarray) -> float:
    total = 0.0
    w_tau = model.w["w_tau"]
    for t in range(model.problem.horizon):
        total += w_tau * float(us[t] @ us[t])
        total += model.state_cost_value(xs[t + 1], model.problem.targets[t])
    return total


def optimize_trajectory(
    problem: RetargetProblem,
    chain: KinematicChain,
    options: SolverOptions = SolverOptions(),
) -> JointTrajectory:
    n = chain.n_joints
    if problem.q0.shape[0] != n:
        raise RetargetError("q0 length does not match chain")
    lo = np.array([j.limits[0] for j in chain.joints])
    hi = np.array([j.limits[1] for j in chain.joints])
    if np.any(problem.q0 < lo) or np.any(problem.q0 > hi):
        raise RetargetError("infeasible initial configuration: q0 outside joint limits")

    N = problem.horizon
    dt = problem.dt
    inv_m = np.array([1.0 / j.inertia for j in chain.joints])
    A = np.eye(2 * n)
    A[:n, n:] = dt * np.eye(n)
    B = np.zeros((2 * n, n))
    B[:n] = dt * dt * np.diag(inv_m)
    B[n:] = dt * np.diag(inv_m)

    model = _CostModel(problem, chain)
    us = np.zeros((N, n))
    xs = _rollout(problem, chain, us)
    cost = _total_cost(model, xs, us)
    if not np.isfinite(cost):
        raise RetargetError("divergence: non-finite initial cost")
    cost_trace = [cost]
    mu = 1e-6
    converged = False

    for _ in range(options.max_iterations):
        # Quadraticize along the current trajectory.
        lx = np.zeros((N + 1, 2 * n))
        lxx = np.zeros((N + 1, 2 * n, 2 * n))
        lu = np.zeros((N, n))
        luu = np.zeros((N, n, n))
        for t in range(N):
            _, lu[t], luu[t] = model.control_cost(us[t])
        for t in range(1, N + 1):
            _, lx[t], lxx[t] = model.state_cost(xs[t], problem.targets[t - 1])

        # Backward pass; bump regularization until the pass is well posed.
        while True:
            Vx = lx[N].copy()
            Vxx = lxx[N].copy()
            ks = np.zeros((N, n))
            Ks = np.zeros((N, n, 2 * n))
            ok = True
            for t in range(N - 1, -1, -1):
                Qx = (lx[t] if t > 0 else np.zeros(2 * n)) + A.T @ Vx
                Qu = lu[t] + B.T @ Vx
                Qxx = (lxx[t] if t > 0 else np.zeros((2 * n, 2 * n))) + A.T @ Vxx @ A
                Quu = luu[t] + B.T @ Vxx @ B + mu * np.eye(n)
                Qux = B.T @ Vxx @ A
                try:
                    chol = np.linalg.cholesky(Quu)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                rhs = np.concatenate([Qu[:, None], Qux], axis=1)
                sol = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
                ks[t] = -sol[:, 0]
                Ks[t] = -sol[:, 1:]
                Vx = Qx + Ks[t].T @ Quu @ ks[t] + Ks[t].T @ Qu + Qux.T @ ks[t]
                Vxx = Qxx + Ks[t].T @ Quu @ Ks[t] + Ks[t].T @ Qux + Qux.T @ Ks[t]
                Vxx = 0.5 * (Vxx + Vxx.T)
            if ok:
                break
            mu *= 10.0
            if mu > 1e10:
                raise RetargetError("divergence: backward pass failed at maximum regularization")

        # Forward pass with a simple backtracking line search.
        improved = False
        for alpha in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625):
            new_us = np.zeros_like(us)
            new_xs = np.zeros_like(xs)
            new_xs[0] = xs[0]
            for t in range(N):
                new_us[t] = us[t] + alpha * ks[t] + Ks[t] @ (new_xs[t] - xs[t])
                q, qd = new_xs[t, :n], new_xs[t, n:]
                qd_next = qd + dt * inv_m * new_us[t]
                new_xs[t + 1, :n] = q + dt * qd_next
                new_xs[t + 1, n:] = qd_next
            new_cost = _total_cost(model, new_xs, new_us)
            if not np.isfinite(new_cost):
                continue
            if new_cost < cost:
                us, xs, cost = new_us, new_xs, new_cost
                improved = True
                break
        if improved:
            cost_trace.append(cost)
            mu = max(mu * 0.5, 1e-9)
            if len(cost_trace) > 1 and abs(cost_trace[-2] - cost) < options.tolerance * max(1.0, abs(cost)):
                converged = True
                break
        else:
            mu *= 10.0
            if mu > 1e10:
                break

    qs = xs[:, :n].copy()
    if options.project_limits:
        qs = np.clip(qs, lo, hi)
    poses = [forward_kinematics(chain, qs[t]) for t in range(N + 1)]
    residuals = np.array(
        [np.linalg.norm(se3_log(poses[t + 1].inverse().compose(problem.targets[t]))) for t in range(N)]
    )
    return JointTrajectory(
        q=qs,
        qd=xs[:, n:].copy(),
        tau=us.copy(),
        object_poses=poses,
        residual_norms=residuals,
        cost_trace=cost_trace,
        converged=converged,
        meta={
            "weights": dict(problem.weights),
            "dt": problem.dt,
            "distance_term": "squared SE(3) log norm",
            "limit_handling": "quadratic penalty"
            + (" + projection" if options.project_limits else ""),
        },
    )


# ---------------------------------------------------------------------------
# Chain files


def _pose_from_json(obj: dict) -> Pose:
    return Pose(Rotation(np.array(obj["quat"], dtype=np.float64)), np.array(obj["t"], dtype=np.float64))


def load_chain(path, grasp: Pose | None = None) -> KinematicChain:
    raw = read_json(path)
    joints = [
        Joint(
            axis=np.array(j["axis"], dtype=np.float64),
            parent_transform=_pose_from_json(j["origin"]),
            limits=(float(j["limits"][0]), float(j["limits"][1])),
            velocity_limit=float(j.get("vel_limit", np.inf)),
            effort_limit=float(j.get("effort_limit", np.inf)),
            inertia=float(j.get("inertia", 1.0)),
        )
        for j in raw["joints"]
    ]
    tool = _pose_from_json(raw["tool"])
    return KinematicChain(joints, tool, grasp if grasp is not None else Pose.identity())


def save_joint_trajectory(path, traj: JointTrajectory) -> None:
    steps = []
    for t in range(traj.tau.shape[0]):
        steps.append(
            {
                "q": traj.q[t + 1].tolist(),
                "qd": traj.qd[t + 1].tolist(),
                "tau": traj.tau[t].tolist(),
                "obj_pose": {
                    "quat": [float(x) for x in traj.object_poses[t + 1].rotation.q],
                    "t": [float(x) for x in traj.object_poses[t + 1].translation],
                },
                "residual": float(traj.residual_norms[t]),
            }
        )
    write_json(
        path,
        {
            "dt": traj.meta.get("dt"),
            "q0": traj.q[0].tolist(),
            "steps": steps,
            "converged": traj.converged,
            "final_cost": traj.cost_trace[-1],
            "meta": traj.meta,
        },
    )
