import numpy as np
import pytest

from pose6d.geometry import Pose, Rotation
from pose6d.tensorio import (
    FormatError,
    canonical_json,
    load_obj,
    load_poses,
    read_tensor,
    save_obj,
    save_poses,
    write_tensor,
)


class TestTensorFiles:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64, np.uint8, np.int64])
    def test_round_trip(self, tmp_path, rng, dtype):
        arr = (rng.normal(size=(4, 5, 6)) * 10).astype(dtype)
        path = tmp_path / "t.tnsr"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.dtype == np.dtype(dtype).newbyteorder("=") or back.dtype == dtype
        assert np.array_equal(back, arr)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.tnsr"
        path.write_bytes(b"NOPE" + b"{}" + b"\n")
        with pytest.raises(FormatError, match="bad.tnsr"):
            read_tensor(path)

    def test_truncated_payload_rejected(self, tmp_path, rng):
        path = tmp_path / "t.tnsr"
        write_tensor(path, rng.normal(size=(3, 3)).astype(np.float32))
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_deterministic_bytes(self, tmp_path, rng):
        arr = rng.normal(size=(8, 3)).astype(np.float32)
        p1, p2 = tmp_path / "a.tnsr", tmp_path / "b.tnsr"
        write_tensor(p1, arr)
        write_tensor(p2, arr)
        assert p1.read_bytes() == p2.read_bytes()


class TestObj:
    def test_round_trip(self, tmp_path):
        mesh_path = tmp_path / "m.obj"
        mesh_path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_obj(mesh_path)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.triangles.shape == (1, 3)

    def test_polygon_rejected(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(FormatError, match="triangle"):
            load_obj(p)

    def test_slash_indices_accepted(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n")
        mesh = load_obj(p)
        assert np.array_equal(mesh.triangles, [[0, 1, 2]])

    def test_save_load(self, tmp_path, rng):
        from pose6d.geometry import TriangleMesh

        mesh = TriangleMesh(rng.normal(size=(5, 3)), [[0, 1, 2], [2, 3, 4]], scale=0.5)
        save_obj(tmp_path / "m.obj", mesh)
        back = load_obj(tmp_path / "m.obj", scale=0.5)
        assert np.allclose(back.vertices, mesh.vertices, atol=1e-7)
        assert back.scale == 0.5


class TestPoseFiles:
    def test_round_trip(self, tmp_path, rng):
        from conftest import random_pose

        poses = [random_pose(rng) for _ in range(5)]
        save_poses(tmp_path / "p.json", poses, frames=[2, 3, 5, 8, 13])
        back = load_poses(tmp_path / "p.json")
        assert [f for f, _ in back] == [2, 3, 5, 8, 13]
        for (_, b), p in zip(back, poses):
            assert b.rotation.angle_to(p.rotation) < 1e-8
            assert np.allclose(b.translation, p.translation, atol=1e-8)

    def test_canonicalized_quaternion_on_disk(self, tmp_path):
        pose = Pose(Rotation([-1.0, 0.0, 0.0, 0.0]), [0, 0, 0])
        save_poses(tmp_path / "p.json", [pose])
        (_, back), = load_poses(tmp_path / "p.json")
        assert back.rotation.q[0] >= 0


class TestCanonicalJson:
    def test_sorted_keys_and_digits(self):
        out = canonical_json({"b": 1.0 / 3.0, "a": [1, 2.5]})
        assert out == '{"a":[1,2.5],"b":0.333333333}'

    def test_nine_significant_digits(self):
        assert canonical_json(123456789.123) == "123456789.0"
        assert canonical_json(0.000123456789123) == "0.000123456789"
        assert canonical_json(np.pi) == "3.14159265"

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            canonical_json({"x": float("nan")})

    def test_numpy_values_accepted(self):
        out = canonical_json({"v": np.float64(2.0), "n": np.int32(3), "a": np.arange(2)})
        assert out == '{"a":[0,1],"n":3,"v":2.0}'
