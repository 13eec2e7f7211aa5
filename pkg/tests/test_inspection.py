import json

import numpy as np
import pytest

from routetree.errors import EmptySubtree, NoNodeEmbeddings
from routetree.inspect_tree import (
    argmax_leaves,
    bucket_trend,
    export_tree,
    keyness_scores,
    lca_context_similarity,
    node_embedding_similarity,
    node_keywords,
    subtree_leaf_range,
    tokenize,
    trend_pvalue,
)
from routetree.io import Manifest, ManifestRow
from routetree.tree import Topology

from conftest import tiny_model, vector_store


class TestNodeEmbeddingSimilarity:
    def test_requires_node_embeddings(self):
        with pytest.raises(NoNodeEmbeddings):
            node_embedding_similarity(tiny_model("linear"))

    def test_bucket_structure(self):
        model = tiny_model("cross_attention", depth=3)
        report = node_embedding_similarity(model, "all_pairs")
        # split nodes reach depth D-1, so distances run 1 .. 2(D-1)
        assert set(report["buckets"]) <= set(range(1, 5))
        total = sum(b["pairs"] for b in report["buckets"].values())
        assert total == report["pairs"] == 7 * 6 // 2
        assert 0 not in report["buckets"]

    def test_ancestor_descendant_mode(self):
        model = tiny_model("cross_attention", depth=3)
        report = node_embedding_similarity(model, "ancestor_descendant")
        # ancestor chains only: distances 1 .. D-1
        assert set(report["buckets"]) <= {1, 2}

    def test_random_model_has_no_trend(self):
        model = tiny_model("cross_attention", depth=4, seed=11)
        report = node_embedding_similarity(model, "all_pairs")
        assert trend_pvalue(report, n_perm=300, seed=0) > 0.05


class TestLcaSimilarity:
    def test_buckets_and_baseline(self):
        model = tiny_model("linear", "product", depth=3)
        store = vector_store(40, 8)
        report = lca_context_similarity(model, store, sample_size=2000,
                                        seed=0)
        assert set(report["buckets"]) <= set(range(0, 4))
        assert -1.0 <= report["random_pair_mean_cosine"] <= 1.0

    def test_argmax_leaves_are_leaf_ids(self):
        model = tiny_model("linear", "product", depth=3)
        store = vector_store(10, 8)
        leaves = argmax_leaves(model, store)
        assert np.all((leaves >= 8) & (leaves < 16))


class TestKeyness:
    def test_tokenize_lowercases_and_filters(self):
        assert tokenize("The Cat, the HAT!") == ["cat", "hat"]

    def test_subtree_only_term_dominates(self):
        sub = ["publishing house prints publishing works"]
        bg = sub + ["tv network airs tv shows", "tv guide"]
        scores = keyness_scores(sub, bg)
        assert scores["publishing"] > 0
        # a term spread evenly over the corpus scores below the planted one
        assert scores["publishing"] > scores.get("works", 0.0)

    def test_empty_corpus(self):
        with pytest.raises(EmptySubtree):
            keyness_scores([""], [""])

    def test_duplication_invariance(self):
        sub = ["alpha beta alpha"]
        bg = sub + ["beta gamma", "gamma delta"]
        a = keyness_scores(sub, bg)["alpha"]
        b = keyness_scores(sub * 2, bg * 2)["alpha"]
        assert a == pytest.approx(b, rel=1e-12)


class TestSubtreeRange:
    def test_leaf_ranges(self):
        topo = Topology(3)
        assert list(subtree_leaf_range(topo, 1)) == list(range(8, 16))
        assert list(subtree_leaf_range(topo, 2)) == list(range(8, 12))
        assert list(subtree_leaf_range(topo, 7)) == [14, 15]
        assert list(subtree_leaf_range(topo, 9)) == [9]


class TestNodeKeywords:
    def make_manifest(self, n, word_of):
        rows = [ManifestRow(i, f"c-{i}", "context",
                            f"{word_of(i)} filler text {word_of(i)}")
                for i in range(n)]
        return Manifest(rows)

    def test_planted_vocabulary_fixture(self):
        model = tiny_model("linear", "product", depth=2)
        store = vector_store(20, 8)
        leaves = argmax_leaves(model, store)
        # plant one vocabulary per depth-1 subtree of the *actual* routing
        word_of = lambda i: "publishing" if leaves[i] < 6 else "tv"
        manifest = self.make_manifest(20, word_of)
        if len({word_of(i) for i in range(20)}) < 2:
            pytest.skip("all contexts routed to one half")
        report = node_keywords(model, store, manifest, k=3)
        for node in (2, 3):
            entry = report["nodes"][node]
            if entry["context_count"] == 0:
                continue
            planted = "publishing" if node == 2 else "tv"
            assert entry["keywords"][0]["term"] == planted

    def test_counts_partition_corpus(self):
        model = tiny_model("linear", "learned", depth=2)
        store = vector_store(15, 8)
        manifest = self.make_manifest(15, lambda i: f"word{i % 3}")
        report = node_keywords(model, store, manifest, k=2)
        leaf_total = sum(report["nodes"][t]["context_count"]
                         for t in range(4, 8))
        assert leaf_total == 15
        assert report["nodes"][1]["context_count"] == 15

    def test_empty_manifest(self):
        model = tiny_model("linear", "product", depth=2)
        store = vector_store(5, 8)
        manifest = Manifest([ManifestRow(i, f"c-{i}", "context", "")
                             for i in range(5)])
        with pytest.raises(EmptySubtree):
            node_keywords(model, store, manifest)


class TestExportTree:
    def test_json_round_trips(self):
        model = tiny_model("linear", "product", depth=2)
        doc = json.loads(export_tree(model, None, "json"))
        assert doc["depth"] == 2
        assert len(doc["nodes"]) == 7

    def test_dot_edge_count(self):
        model = tiny_model("linear", "product", depth=2)
        dot = export_tree(model, None, "dot")
        assert dot.startswith("digraph")
        assert dot.count("->") == 6

    def test_keywords_embedded(self):
        model = tiny_model("linear", "product", depth=2)
        store = vector_store(12, 8)
        manifest = Manifest([ManifestRow(i, f"c-{i}", "context",
                                         "apple banana")
                             for i in range(12)])
        kw = node_keywords(model, store, manifest, k=2)
        doc = json.loads(export_tree(model, kw, "json"))
        counts = [n.get("context_count", 0) for n in doc["nodes"]
                  if n["is_leaf"]]
        assert sum(counts) == 12


def test_bucket_trend_sign():
    report = {"buckets": {1: {"mean_cosine": 0.9, "pairs": 3},
                          2: {"mean_cosine": 0.5, "pairs": 3},
                          3: {"mean_cosine": 0.1, "pairs": 3}}}
    assert bucket_trend(report) == pytest.approx(-1.0)
