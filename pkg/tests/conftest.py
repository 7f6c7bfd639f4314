from __future__ import annotations

import numpy as np
import pytest

from pose6d.geometry import CameraIntrinsics, Pose, Rotation, so3_exp


def random_rotation(rng, max_angle=np.pi * 0.95) -> Rotation:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def random_pose(rng, t_scale=1.0, z_range=None) -> Pose:
    t = rng.normal(size=3) * t_scale
    if z_range is not None:
        t[2] = rng.uniform(*z_range)
    return Pose(random_rotation(rng), t)


def uniform_quats(n, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return CameraIntrinsics(f=500.0, cx=320.0, cy=240.0, width=640, height=480)
