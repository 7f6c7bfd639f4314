import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from p6d_export import cli
from p6d_export.depth import StubDepthBackend, export_depth
from p6d_export.features import GRID, StubBackend, export_query_features, prepare_input
from p6d_export.manifest import sha256_of, verify_manifest
from p6d_export.masks import StubMaskBackend, export_mask
from p6d_export.tnsr import read_tensor
from p6d_export.tracks import export_tracks, load_tracker_dump

REPO = Path(__file__).resolve().parents[2]
DUMP = REPO / "export" / "cached" / "tracker" / "dump_small.npz"


def synthetic_image(seed=0, size=420):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size]
    img = np.stack(
        [
            128 + 100 * np.sin(x / 37.0 + seed),
            128 + 100 * np.cos(y / 23.0),
            64 + 50 * np.sin((x + y) / 53.0),
        ],
        axis=2,
    )
    img += rng.normal(0, 6, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


class TestFeatures:
    def test_grid_shape_at_default_dim(self, tmp_path):
        backend = StubBackend()
        grid, cls = backend.extract(synthetic_image())
        assert grid.shape == (30, 30, 1024)
        assert cls.shape == (1024,)

    def test_deterministic_rerun_checksums(self, tmp_path):
        img = tmp_path / "crop.png"
        Image.fromarray(synthetic_image(3)).save(img)
        backend = StubBackend(dim=64)
        a = export_query_features(img, tmp_path / "a", backend)
        b = export_query_features(img, tmp_path / "b", backend)
        for pa, pb in zip(a, b):
            assert sha256_of(pa) == sha256_of(pb)

    def test_wrong_resolution_resized_with_warning(self):
        backend = StubBackend(dim=32)
        small = synthetic_image(1, size=200)
        with pytest.warns(UserWarning, match="resizing"):
            grid, _ = backend.extract(small)
        assert grid.shape == (30, 30, 32)

    def test_native_resolution_no_warning(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            prepare_input(synthetic_image(0, size=420))

    def test_unit_norm_tokens(self):
        grid, cls = StubBackend(dim=48).extract(synthetic_image(4))
        norms = np.linalg.norm(grid.reshape(-1, 48), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)
        assert np.allclose(np.linalg.norm(cls), 1.0, atol=1e-5)


class TestDepthAndMasks:
    def test_depth_shape_matches_frame(self, tmp_path):
        img = synthetic_image(5, size=240)
        path = export_depth(img, tmp_path / "d.tnsr", StubDepthBackend())
        depth = read_tensor(path)
        assert depth.shape == (240, 240)
        assert depth.dtype == np.float32
        assert np.all(depth > 0)

    def test_mask_tensor_and_preview(self, tmp_path):
        mask = StubMaskBackend().segment(synthetic_image(6, size=120))
        written = export_mask(mask, tmp_path / "m.tnsr")
        stored = read_tensor(written[0])
        assert stored.dtype == np.uint8
        assert set(np.unique(stored)) <= {0, 1}
        assert written[1].suffix == ".png" and written[1].exists()


class TestTracks:
    def test_cached_dump_round_trip(self, tmp_path):
        tracks, vis = load_tracker_dump(DUMP)
        out = export_tracks(tracks, vis, tmp_path / "tracks.json", n_video_frames=tracks.shape[0])
        doc = json.loads(out.read_text())
        assert doc["n_points"] == tracks.shape[1]
        assert len(doc["frames"]) == tracks.shape[0]
        flags = {p[2] for f in doc["frames"] for p in f["pts"]}
        assert flags <= {0.0, 1.0}

    def test_frame_count_mismatch_rejected(self, tmp_path):
        tracks, vis = load_tracker_dump(DUMP)
        with pytest.raises(ValueError, match="frames"):
            export_tracks(tracks, vis, tmp_path / "t.json", n_video_frames=tracks.shape[0] + 2)


class TestCli:
    def test_features_command_with_manifest(self, tmp_path):
        img = tmp_path / "crop.png"
        Image.fromarray(synthetic_image(7)).save(img)
        rc = cli.main([
            "export-features", "--images", str(img), "--out", str(tmp_path / "feat"),
            "--backend", "stub", "--dim", "32",
        ])
        assert rc == 0
        assert verify_manifest(tmp_path / "feat" / "manifest.json")

    def test_tracks_command(self, tmp_path):
        rc = cli.main(["export-tracks", "--dump", str(DUMP), "--out", str(tmp_path / "tr")])
        assert rc == 0
        assert verify_manifest(tmp_path / "tr" / "manifest.json")

    def test_missing_input_fails(self, tmp_path):
        rc = cli.main(["export-tracks", "--dump", str(tmp_path / "nope.npz"), "--out", str(tmp_path / "x")])
        assert rc == 1
