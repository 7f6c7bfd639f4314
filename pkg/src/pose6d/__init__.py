"""6D pose toolkit: model retrieval, alignment, scale grounding, tracking,
manipulator retargeting and evaluation, all over serialized inputs."""

from .geometry import (
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
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
)
from .tensorio import FormatError, load_obj, read_tensor, save_obj, write_tensor

__version__ = "0.1.0"
