import json
from pathlib import Path

import numpy as np
import pytest

from p6d_export.manifest import verify_manifest
from p6d_export.scale_db import ParseStats, generate_scale_db, parse_response_file, text_embedding

REPO = Path(__file__).resolve().parents[2]
CACHED = REPO / "export" / "cached" / "llm_responses"
SHIPPED = REPO / "data" / "scale_db"


class TestParsing:
    def test_median_merging(self, tmp_path):
        f = tmp_path / "r.txt"
        f.write_text("a coffee mug: 0.1\na coffee mug: 0.12\na coffee mug: 0.2\n")
        out = generate_scale_db([f], tmp_path / "db")
        assert out["entries"] == 1
        row = json.loads((tmp_path / "db" / "scale_db.jsonl").read_text().strip())
        assert row == {"scale_m": 0.12, "text": "a coffee mug"}

    def test_malformed_lines_skipped_and_counted(self, tmp_path):
        f = tmp_path / "r.txt"
        f.write_text("a mug: 0.1\nnot a line\na bad one: banana\na negative: -2\n: 0.3\n")
        out = generate_scale_db([f], tmp_path / "db")
        assert out["entries"] == 1
        assert out["malformed_lines"] == 4

    def test_empty_response_rejected(self, tmp_path):
        f = tmp_path / "r.txt"
        f.write_text("completely malformed\n")
        with pytest.raises(ValueError):
            generate_scale_db([f], tmp_path / "db")

    def test_no_files_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_scale_db([], tmp_path / "db")

    def test_stats_accumulate(self, tmp_path):
        f = tmp_path / "r.txt"
        f.write_text("a mug: 0.1\na pan: 0.3\n")
        stats = ParseStats()
        acc: dict = {}
        parse_response_file(f, acc, stats)
        assert stats.parsed == 2 and stats.malformed == 0


class TestEmbeddings:
    def test_unit_norm_and_deterministic(self):
        a = text_embedding("a coffee mug")
        b = text_embedding("a coffee mug")
        c = text_embedding("a tea cup")
        assert np.allclose(np.linalg.norm(a), 1.0)
        assert np.array_equal(a, b)
        assert not np.allclose(a, c)


class TestShippedDatabase:
    def test_regenerates_identically_from_cached_responses(self, tmp_path):
        paths = sorted(CACHED.glob("round_*.txt"))
        assert paths, "cached responses missing"
        generate_scale_db(paths, tmp_path / "db")
        assert (tmp_path / "db" / "scale_db.jsonl").read_bytes() == (SHIPPED / "scale_db.jsonl").read_bytes()
        assert (tmp_path / "db" / "embeddings.tnsr").read_bytes() == (SHIPPED / "embeddings.tnsr").read_bytes()

    def test_schema(self):
        lines = (SHIPPED / "scale_db.jsonl").read_text().splitlines()
        assert len(lines) == 2200
        for line in lines:
            row = json.loads(line)
            assert set(row) == {"text", "scale_m"}
            assert isinstance(row["text"], str) and row["text"]
            assert isinstance(row["scale_m"], float) and row["scale_m"] > 0

    def test_distribution(self):
        scales = np.array([json.loads(l)["scale_m"] for l in (SHIPPED / "scale_db.jsonl").read_text().splitlines()])
        under = (scales < 2.0).mean()
        assert abs(under - 0.90) <= 0.02
        assert scales.min() == pytest.approx(0.01)
        assert scales.max() == pytest.approx(300.0)

    def test_manifest_checksums(self):
        assert verify_manifest(SHIPPED / "manifest.json")

    def test_prompt_template_shipped(self):
        prompt = (REPO / "export" / "prompts" / "scale_db_prompt.txt").read_text()
        assert "250 keywords" in prompt
        assert "meters" in prompt
