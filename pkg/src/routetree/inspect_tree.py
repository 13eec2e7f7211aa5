"""Tree-congruence analyses and human-readable tree exports.

Three read-only views of a trained model:

* node-embedding similarity bucketed by tree distance (cross-attention only),
* raw context-embedding similarity bucketed by the depth of the lowest
  common ancestor of the contexts' argmax leaves,
* per-node keywords scored by log-likelihood keyness against the corpus.

Plus JSON/dot exports of the annotated tree.
"""

from __future__ import annotations

import json
import re

import numpy as np
from scipy import stats

from .errors import EmptySubtree, NoNodeEmbeddings
from .io import EmbeddingStore, Manifest
from .model import TreeModel
from .stopwords import STOPWORDS
from .tree import Topology

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


# ---------------------------------------------------------------------------
# congruence: node embeddings vs tree distance


def _pooled_node_embeddings(model: TreeModel) -> np.ndarray:
    """Split-node embeddings with the per-node n_e axis mean-pooled."""
    if model.config.split.variant != "cross_attention":
        raise NoNodeEmbeddings(
            f"{model.config.split.variant} models carry no node embeddings")
    return model.split.params["node_emb"].data.mean(axis=1)


def _bucket_means(distances: np.ndarray, sims: np.ndarray) -> dict:
    buckets = {}
    for d in np.unique(distances):
        sel = sims[distances == d]
        buckets[int(d)] = {"mean_cosine": float(sel.mean()),
                           "pairs": int(sel.size)}
    return buckets


def node_embedding_similarity(model: TreeModel,
                              mode: str = "all_pairs") -> dict:
    """Mean pairwise node-embedding cosine per tree distance (self excluded)."""
    if mode not in ("all_pairs", "ancestor_descendant"):
        raise ValueError(f"unknown mode {mode!r}")
    emb = _pooled_node_embeddings(model)
    topo = model.topology
    nodes = np.arange(1, topo.num_splits + 1)
    norm = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    cos = norm @ norm.T
    dists, sims = [], []
    for i, t in enumerate(nodes):
        for j in range(i + 1, len(nodes)):
            u = int(nodes[j])
            if mode == "ancestor_descendant" and \
                    t not in topo.ancestors(u) and u not in topo.ancestors(t):
                continue
            dists.append(topo.tree_distance(int(t), u))
            sims.append(cos[i, j])
    dists = np.asarray(dists)
    sims = np.asarray(sims, dtype=np.float64)
    return {
        "mode": mode,
        "buckets": _bucket_means(dists, sims),
        "global_mean_cosine": float(sims.mean()),
        "pairs": int(sims.size),
    }


# ---------------------------------------------------------------------------
# congruence: raw context similarity vs LCA depth of argmax leaves


def argmax_leaves(model: TreeModel, store: EmbeddingStore,
                  batch: int = 512) -> np.ndarray:
    """Heap id of the most probable leaf for every item in the store."""
    depth = model.topology.depth
    probs = model.assignments(store, range(store.count), depth, batch=batch)
    return probs.argmax(axis=1) + 2**depth


def lca_context_similarity(model: TreeModel, store: EmbeddingStore,
                           sample_size: int = 100_000, seed: int = 0) -> dict:
    """Mean raw-embedding cosine of sampled context pairs per LCA depth."""
    leaves = argmax_leaves(model, store)
    vecs = store.sentence_vectors.astype(np.float64)
    vecs = vecs / np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True),
                             1e-30)
    rng = np.random.default_rng(seed)
    n = store.count
    i = rng.integers(0, n, size=sample_size)
    j = rng.integers(0, n, size=sample_size)
    keep = i != j
    i, j = i[keep], j[keep]
    sims = np.einsum("ij,ij->i", vecs[i], vecs[j])
    topo = model.topology
    depths = np.asarray([topo.lca_depth(int(a), int(b))
                         for a, b in zip(leaves[i], leaves[j])])
    return {
        "buckets": _bucket_means(depths, sims),
        "random_pair_mean_cosine": float(sims.mean()),
        "pairs": int(sims.size),
    }


def bucket_trend(report: dict) -> float:
    """Spearman correlation of bucket mean cosine against bucket distance."""
    items = sorted(report["buckets"].items())
    xs = [d for d, _ in items]
    ys = [b["mean_cosine"] for _, b in items]
    return float(stats.spearmanr(xs, ys).statistic)


def trend_pvalue(report: dict, n_perm: int = 500, seed: int = 0) -> float:
    """Two-sided permutation p-value for the bucket-mean trend."""
    items = sorted(report["buckets"].items())
    xs = np.asarray([d for d, _ in items], dtype=np.float64)
    ys = np.asarray([b["mean_cosine"] for _, b in items])
    obs = abs(stats.spearmanr(xs, ys).statistic)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        rho = stats.spearmanr(xs, rng.permutation(ys)).statistic
        if abs(rho) >= obs - 1e-12:
            hits += 1
    return (hits + 1) / (n_perm + 1)


# ---------------------------------------------------------------------------
# keywords: log-likelihood keyness of subtree texts vs the full corpus


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower())
            if t and t not in STOPWORDS]


def _count_terms(texts) -> dict[str, int]:
    counts: dict[str, int] = {}
    for text in texts:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    return counts


def keyness_scores(subtree_texts, background_texts) -> dict[str, float]:
    """Signed log-likelihood keyness per term, normalized by corpus size.

    Positive for terms over-represented in the subtree. The normalization
    by total token count makes the score invariant to duplicating both
    corpora jointly.
    """
    sub = _count_terms(subtree_texts)
    bg = _count_terms(background_texts)
    n1 = sum(sub.values())
    n2 = sum(bg.values())
    if n1 == 0 or n2 == 0:
        raise EmptySubtree("no tokens to compare")
    scores = {}
    for term, a in sub.items():
        b = bg.get(term, 0)
        e1 = n1 * (a + b) / (n1 + n2)
        e2 = n2 * (a + b) / (n1 + n2)
        g2 = 2.0 * (a * np.log(a / e1) + (b * np.log(b / e2) if b else 0.0))
        sign = 1.0 if a / n1 >= b / n2 else -1.0
        scores[term] = sign * g2 * (10_000.0 / (n1 + n2))
    return scores


def subtree_leaf_range(topology: Topology, node: int) -> range:
    """Heap ids of the leaves under `node` (inclusive of node if leaf)."""
    shift = topology.depth - topology.node_depth(node)
    return range(node << shift, (node + 1) << shift)


def node_keywords(model: TreeModel, store: EmbeddingStore,
                  manifest: Manifest, k: int = 5) -> dict:
    """Top-k keyness keywords per node over argmax-leaf-assigned contexts."""
    texts = {row.id: row.text for row in manifest.rows}
    if not any(texts.values()):
        raise EmptySubtree("manifest carries no text")
    leaves = argmax_leaves(model, store)
    topo = model.topology
    background = [texts.get(i, "") for i in range(store.count)]
    # leaf-level soft entropy, reported alongside the hard assignment
    probs = model.assignments(store, range(store.count), topo.depth)
    ent = -np.sum(np.where(probs > 0, probs * np.log(probs), 0.0), axis=1)
    nodes = {}
    for t in range(1, topo.num_nodes + 1):
        lo, hi = subtree_leaf_range(topo, t)[0], subtree_leaf_range(topo, t)[-1]
        members = np.flatnonzero((leaves >= lo) & (leaves <= hi))
        entry = {"depth": topo.node_depth(t), "context_count": int(members.size),
                 "keywords": [],
                 "mean_leaf_entropy": float(ent[members].mean())
                 if members.size else 0.0}
        if members.size:
            scores = keyness_scores([background[i] for i in members],
                                    background)
            top = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
            entry["keywords"] = [{"term": term, "keyness": float(s)}
                                 for term, s in top]
        nodes[t] = entry
    return {"depth": topo.depth, "nodes": nodes}


# ---------------------------------------------------------------------------
# exports


def export_tree(model: TreeModel, keywords: dict | None = None,
                fmt: str = "json") -> str:
    """Annotated tree as a JSON document or a graphviz digraph."""
    if fmt not in ("json", "dot"):
        raise ValueError(f"unknown format {fmt!r}")
    topo = model.topology
    info = (keywords or {}).get("nodes", {})
    nodes = []
    for t in range(1, topo.num_nodes + 1):
        entry = {"id": t, "depth": topo.node_depth(t),
                 "is_leaf": topo.node_depth(t) == topo.depth}
        meta = info.get(t)
        if meta:
            entry["context_count"] = meta["context_count"]
            entry["keywords"] = [kw["term"] for kw in meta["keywords"]]
            entry["mean_leaf_entropy"] = meta["mean_leaf_entropy"]
        nodes.append(entry)
    if fmt == "json":
        return json.dumps({"depth": topo.depth, "nodes": nodes}, indent=2)
    lines = ["digraph tree {"]
    for entry in nodes:
        label = str(entry["id"])
        if entry.get("keywords"):
            label += r"\n" + " ".join(entry["keywords"][:3])
        lines.append(f'  n{entry["id"]} [label="{label}"];')
    for t in range(1, topo.num_splits + 1):
        lines.append(f"  n{t} -> n{2 * t};")
        lines.append(f"  n{t} -> n{2 * t + 1};")
    lines.append("}")
    return "\n".join(lines)
