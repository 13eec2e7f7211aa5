import numpy as np
import pytest

from routetree.errors import (
    LevelOutOfRange,
    MetricMismatch,
    MissingGt,
    UnsupportedVersion,
)
from routetree.index import (
    LevelIndex,
    RankedResult,
    brute_force_search,
    build_index,
    evaluate,
    load_index,
    measure_latency,
    ndcg_at_k,
    rank_scores,
    recall_at_k,
    save_index,
    search,
    write_results_jsonl,
)

from conftest import tiny_model, vector_store


def random_index(rng, n=50, width=8, metric="ntvd"):
    rows = rng.dirichlet(np.ones(width), size=n).astype(np.float32)
    return LevelIndex(3, metric, np.arange(n), rows)


class TestRanking:
    def test_descending_with_id_tie_break(self):
        scores = np.array([0.5, 0.9, 0.5, 0.1])
        ids = np.array([7, 3, 2, 9])
        got = rank_scores(scores, ids, 4)
        assert got.ids.tolist() == [3, 2, 7, 9]

    def test_k_clipped(self):
        got = rank_scores(np.array([1.0, 2.0]), np.array([0, 1]), 10)
        assert len(got.ids) == 2


class TestSearchExactness:
    @pytest.mark.parametrize("metric", ["ntvd", "cosine"])
    def test_matches_brute_force(self, rng, metric):
        index = random_index(rng, metric=metric)
        # plant exact duplicates so ties are exercised
        index.rows[10] = index.rows[4]
        index.rows[23] = index.rows[4]
        for qi in range(5):
            q = index.rows[qi].astype(np.float64)
            fast = search(index, q, 10)
            slow = brute_force_search(index, q, 10)
            assert fast.ids.tolist() == slow.ids.tolist()
            np.testing.assert_allclose(fast.scores, slow.scores, atol=1e-9)

    def test_metric_mismatch(self, rng):
        index = random_index(rng)
        with pytest.raises(MetricMismatch):
            search(index, index.rows[0], 3, metric="cosine")

    def test_bad_k(self, rng):
        with pytest.raises(ValueError):
            search(random_index(rng), np.ones(8) / 8, 0)


class TestBuildIndex:
    def test_level_bounds(self, rng):
        model = tiny_model("linear", "product", depth=3)
        store = vector_store(10, 8)
        index = build_index(model, store, 2)
        assert index.width == 4 and index.count == 10
        np.testing.assert_allclose(index.rows.sum(axis=1), 1.0, atol=1e-5)
        with pytest.raises(LevelOutOfRange):
            build_index(model, store, 4)

    def test_duplicate_ids_rejected(self, rng):
        with pytest.raises(ValueError):
            LevelIndex(1, "ntvd", np.array([0, 0]),
                       np.ones((2, 2), dtype=np.float32) / 2)


class TestMetrics:
    def make_results(self, ranked_ids):
        return {0: RankedResult(np.asarray(ranked_ids),
                                np.linspace(1, 0, len(ranked_ids)))}

    def test_ndcg_rank3_is_half(self):
        results = self.make_results([5, 6, 9, 1])
        assert ndcg_at_k(results, {0: 9}, 10) == pytest.approx(0.5)

    def test_recall_hit_and_miss(self):
        results = self.make_results([5, 6, 9])
        assert recall_at_k(results, {0: 9}, 3) == 1.0
        assert recall_at_k(results, {0: 9}, 2) == 0.0

    def test_monotone_in_k(self, rng):
        results = {}
        gt = {}
        for qid in range(30):
            ids = rng.permutation(20)
            results[qid] = RankedResult(ids, np.linspace(1, 0, 20))
            gt[qid] = int(rng.integers(0, 20))
        prev_r, prev_n = 0.0, 0.0
        for k in (1, 2, 5, 10, 20):
            r = recall_at_k(results, gt, k)
            n = ndcg_at_k(results, gt, k)
            assert r >= prev_r and n >= prev_n - 1e-12
            prev_r, prev_n = r, n

    def test_missing_gt(self):
        with pytest.raises(MissingGt):
            recall_at_k(self.make_results([1]), {}, 1)
        with pytest.raises(MissingGt):
            ndcg_at_k({}, {}, 1)


class TestPersistence:
    def test_round_trip(self, rng, tmp_path):
        index = random_index(rng)
        path = tmp_path / "idx.rtrv"
        save_index(index, path)
        back = load_index(path)
        assert back.level == index.level and back.metric == index.metric
        np.testing.assert_array_equal(back.ids, index.ids)
        np.testing.assert_array_equal(back.rows, index.rows)

    def test_store_reader_rejects_index_files(self, rng, tmp_path):
        from routetree.io import read_store

        path = tmp_path / "idx.rtrv"
        save_index(random_index(rng), path)
        with pytest.raises(UnsupportedVersion):
            read_store(path)

    def test_plain_store_rejected_by_index_loader(self, tmp_path):
        from routetree.io import write_store

        path = tmp_path / "s.rtrv"
        write_store(vector_store(3, 4), path)
        with pytest.raises(UnsupportedVersion):
            load_index(path)


def test_evaluate_and_results_jsonl(rng, tmp_path):
    index = random_index(rng, n=20)
    gt = {i: i for i in range(5)}
    rows = index.rows[:5].astype(np.float64)
    report, results = evaluate(index, rows, range(5), gt, ks=(1, 5))
    assert report["recall"]["1"] == 1.0     # query equals its own row
    path = tmp_path / "results.jsonl"
    write_results_jsonl(results, path)
    import json

    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert [x["query_id"] for x in lines] == list(range(5))
    assert lines[0]["ranked"][0]["id"] == 0


def test_measure_latency_reports(rng):
    index = random_index(rng, n=200)
    queries = rng.dirichlet(np.ones(8), size=3)
    out = measure_latency(index, queries, k=5, repetitions=3)
    assert out["queries"] == 3
    assert out["mean_ms"] > 0
    assert out["p95_ms"] >= out["p50_ms"] >= 0
    with pytest.raises(ValueError):
        measure_latency(index, queries, 5, repetitions=2)
