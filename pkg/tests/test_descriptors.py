import numpy as np
import pytest

from pose6d.descriptors import (
    DescriptorError,
    DescriptorIndex,
    ObjectEntry,
    PatchGrid,
    ViewRecord,
    build_index,
    cls_aggregate,
    ffa_aggregate,
    load_index,
    load_object_bundle,
    retrieve,
    save_index,
    save_object_bundle,
)
from pose6d.geometry import Rotation


def grid_from_tokens(tokens, fg=None):
    tokens = np.asarray(tokens, dtype=np.float32)
    fg = np.ones(tokens.shape[:2], dtype=bool) if fg is None else fg
    return PatchGrid(tokens, fg)


def naive_ffa(grids):
    per_view = []
    for g in grids:
        acc = []
        for r in range(g.rows):
            for c in range(g.cols):
                if g.foreground[r, c]:
                    acc.append(np.asarray(g.data[r, c], dtype=np.float64))
        per_view.append(sum(acc) / len(acc))
    total = sum(per_view) / len(per_view)
    return total / np.linalg.norm(total)


class TestFfa:
    def test_single_foreground_patch_is_normalized_token(self, rng):
        v = rng.normal(size=8).astype(np.float32)
        fg = np.zeros((2, 2), dtype=bool)
        fg[0, 0] = True
        tokens = np.zeros((2, 2, 8), dtype=np.float32)
        tokens[0, 0] = v
        out = ffa_aggregate([grid_from_tokens(tokens, fg)])
        assert np.allclose(out, v / np.linalg.norm(v), atol=1e-6)

    def test_two_views_unrolled_definition(self, rng):
        a = rng.normal(size=(3, 3, 4))
        b = rng.normal(size=(3, 3, 4))
        out = ffa_aggregate([grid_from_tokens(a), grid_from_tokens(b)])
        mean = (a.reshape(-1, 4).mean(0) + b.reshape(-1, 4).mean(0)) / 2
        assert np.allclose(out, mean / np.linalg.norm(mean), atol=1e-6)

    def test_many_views_match_naive_loop(self, rng):
        grids = []
        for _ in range(600):
            fg = rng.random((4, 4)) > 0.3
            fg[0, 0] = True
            grids.append(grid_from_tokens(rng.normal(size=(4, 4, 16)), fg))
        assert np.allclose(ffa_aggregate(grids), naive_ffa(grids), atol=1e-6)

    def test_empty_foreground_rejected(self, rng):
        grid = grid_from_tokens(rng.normal(size=(2, 2, 4)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(DescriptorError, match="empty foreground"):
            ffa_aggregate([grid])

    def test_view_and_patch_permutation_invariance(self, rng):
        grids = [grid_from_tokens(rng.normal(size=(3, 3, 8))) for _ in range(10)]
        base = ffa_aggregate(grids)
        shuffled_views = ffa_aggregate(grids[::-1])
        assert np.allclose(base, shuffled_views, atol=1e-9)
        # Permute patches inside one view, mask permuted identically.
        g = grids[0]
        perm = rng.permutation(9)
        tokens = g.data.reshape(9, 8)[perm].reshape(3, 3, 8)
        grids2 = [grid_from_tokens(tokens)] + grids[1:]
        assert np.allclose(base, ffa_aggregate(grids2), atol=1e-9)


class TestCls:
    def test_single_token(self, rng):
        v = rng.normal(size=16)
        assert np.allclose(cls_aggregate([v]), v / np.linalg.norm(v), atol=1e-6)

    def test_cancellation_rejected(self, rng):
        v = rng.normal(size=16)
        with pytest.raises(DescriptorError, match="zero-norm"):
            cls_aggregate([v, -v])

    def test_matches_naive_mean(self, rng):
        tokens = [rng.normal(size=32) for _ in range(50)]
        mean = np.mean(tokens, axis=0)
        assert np.allclose(cls_aggregate(tokens), mean / np.linalg.norm(mean), atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(DescriptorError):
            cls_aggregate([])


def make_entry(object_id, rng, dim=16, n_views=3):
    views = []
    for v in range(n_views):
        grid = grid_from_tokens(rng.normal(size=(2, 2, dim)))
        views.append(
            ViewRecord(Rotation([1, 0, 0, 0]), grid, rng.normal(size=dim).astype(np.float32), [0.1, 0.2, 0.3])
        )
    return ObjectEntry(
        object_id=object_id,
        views=views,
        ffa_descriptor=ffa_aggregate([v.grid for v in views]),
        cls_descriptor=cls_aggregate([v.cls_token for v in views]),
        mesh_ref="none.obj",
    )


class TestIndex:
    def test_empty_index_valid(self):
        index = build_index([], mode="ffa")
        assert len(index) == 0

    def test_ids_sorted(self, rng):
        entries = [make_entry(n, rng) for n in ["zeta", "alpha", "mid"]]
        index = build_index(entries)
        assert index.ids == ["alpha", "mid", "zeta"]

    def test_rebuild_byte_identical(self, tmp_path, rng):
        entries = [make_entry(f"obj{i}", rng) for i in range(4)]
        p1, p2 = tmp_path / "a.p6dx", tmp_path / "b.p6dx"
        save_index(p1, build_index(entries))
        save_index(p2, build_index(entries))
        assert p1.read_bytes() == p2.read_bytes()

    def test_file_round_trip(self, tmp_path, rng):
        index = build_index([make_entry(f"obj{i}", rng) for i in range(5)])
        save_index(tmp_path / "x.p6dx", index)
        back = load_index(tmp_path / "x.p6dx")
        assert back.ids == index.ids
        assert np.array_equal(back.rows, index.rows)

    def test_dim_mismatch_rejected(self, rng):
        entries = [make_entry("a", rng, dim=8), make_entry("b", rng, dim=16)]
        with pytest.raises(DescriptorError, match="dimension mismatch"):
            build_index(entries)


class TestRetrieve:
    def test_self_retrieval_scores_one(self, rng):
        entries = [make_entry(f"obj{i}", rng) for i in range(10)]
        index = build_index(entries)
        for e in entries:
            (top_id, top_score), *_ = retrieve(e.ffa_descriptor, index, k=1)
            assert top_id == e.object_id
            assert abs(top_score - 1.0) < 1e-6

    def test_k_larger_than_index(self, rng):
        index = build_index([make_entry(f"o{i}", rng) for i in range(3)])
        assert len(retrieve(rng.normal(size=16), index, k=50)) == 3

    def test_empty_index_rejected(self, rng):
        with pytest.raises(DescriptorError, match="empty"):
            retrieve(rng.normal(size=4), DescriptorIndex([], np.zeros((0, 4), np.float32)), k=1)

    def test_matches_full_scan_order(self, rng):
        rows = rng.normal(size=(500, 32)).astype(np.float32)
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        ids = [f"obj{i:04d}" for i in range(500)]
        index = DescriptorIndex(ids, rows)
        q = rng.normal(size=32)
        got = [i for i, _ in retrieve(q, index, k=500)]
        qn = (q / np.linalg.norm(q)).astype(np.float32)
        scored = sorted(((float(r @ qn), i) for i, r in zip(ids, rows)), key=lambda t: (-t[0], t[1]))
        assert got == [i for _, i in scored]

    def test_scale_invariance_of_query(self, rng):
        index = build_index([make_entry(f"o{i}", rng) for i in range(6)])
        q = rng.normal(size=16)
        a = retrieve(q, index, k=6)
        b = retrieve(1000.0 * q, index, k=6)
        assert [i for i, _ in a] == [i for i, _ in b]
        assert np.allclose([s for _, s in a], [s for _, s in b], atol=1e-6)

    def test_tie_break_by_id(self):
        rows = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        index = DescriptorIndex(["bbb", "aaa", "ccc"], rows)  # ids deliberately unsorted
        # build_index sorts; here the raw index preserves given order, and the
        # stable sort keeps earlier rows first on ties.
        got = retrieve(np.array([1.0, 0.0]), index, k=3)
        assert got[0][0] == "bbb" and got[1][0] == "aaa"
        sorted_index = DescriptorIndex(["aaa", "bbb", "ccc"], rows)
        got = retrieve(np.array([1.0, 0.0]), sorted_index, k=3)
        assert [i for i, _ in got[:2]] == ["aaa", "bbb"]


class TestBundles:
    def test_round_trip(self, tmp_path, rng):
        views = []
        for v in range(4):
            grid = grid_from_tokens(rng.normal(size=(3, 3, 8)), rng.random((3, 3)) > 0.2)
            views.append(ViewRecord(Rotation(rng.normal(size=4)), grid, rng.normal(size=8).astype(np.float32), [0.2, 0.1, 0.3]))
        save_object_bundle(tmp_path / "obj", "obj", views, mesh_ref="meshes/obj.obj", native_scale=2.0)
        entry = load_object_bundle(tmp_path / "obj")
        assert entry.object_id == "obj"
        assert entry.native_scale == 2.0
        assert len(entry.views) == 4
        assert np.allclose(entry.views[2].grid.data, views[2].grid.data)
        assert np.array_equal(entry.views[2].grid.foreground, views[2].grid.foreground)
        assert abs(np.linalg.norm(entry.ffa_descriptor) - 1.0) < 1e-6
