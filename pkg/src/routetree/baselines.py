"""Hierarchical clustering baselines and flat ablations.

* ClusterTree: top-down 2-way k-means or diagonal-covariance GMM bisections
  to the same depth as the routing tree, with global tree search (all split
  models scored, products propagated, best leaf reranked by cosine).
* NoTreeModel: the routing model with tree structure and propagation removed;
  2^D independent scoring heads softmaxed into one flat distribution.
* CosineAdapter: a square linear map trained with cosine InfoNCE, with an
  optional nested-prefix loss summed over prefix widths 2^1 .. 2^D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad, softmax
from .errors import DimMismatch, TooFewContexts, WrongKind
from .index import RankedResult, rank_scores
from .objective import info_nce, ntvd_pair_matrix
from .splits import SplitConfig, make_split, _uniform
from .tree import Topology

_LOG2PI = np.log(2.0 * np.pi)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


# ---------------------------------------------------------------------------
# 2-way cluster models


def _kmeans2(points: np.ndarray, rng, max_iter=100, tol=1e-4):
    """Two-centroid Lloyd iteration with k-means++ seeding."""
    n = points.shape[0]
    first = int(rng.integers(n))
    d2 = ((points - points[first]) ** 2).sum(axis=1)
    if d2.sum() == 0:
        return None  # all points identical
    second = int(rng.choice(n, p=d2 / d2.sum()))
    centroids = points[[first, second]].astype(np.float64)
    for _ in range(max_iter):
        d = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        labels = np.argmin(d, axis=1)
        new = centroids.copy()
        for c in (0, 1):
            mask = labels == c
            if mask.any():
                new[c] = points[mask].mean(axis=0)
            else:
                far = int(np.argmax(d[:, 1 - c]))
                new[c] = points[far]
        move = np.linalg.norm(new - centroids, axis=1).max()
        centroids = new
        if move < tol:
            break
    d = ((points[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return centroids, np.argmin(d, axis=1)


def _gmm2_loglik(points, means, variances, weights):
    # (n, 2) per-component log densities, diagonal covariance
    lp = np.empty((points.shape[0], 2))
    for c in (0, 1):
        diff = points - means[c]
        lp[:, c] = (np.log(weights[c])
                    - 0.5 * (np.log(variances[c]).sum()
                             + (diff**2 / variances[c]).sum(axis=1)
                             + points.shape[1] * _LOG2PI))
    return lp


def _gmm2(points: np.ndarray, rng, max_iter=100, tol=1e-6, var_floor=1e-6):
    """Two-component diagonal-covariance EM, seeded from the k-means split."""
    km = _kmeans2(points, rng)
    if km is None:
        return None
    centroids, labels = km
    dim = points.shape[1]
    means = centroids.copy()
    variances = np.empty((2, dim))
    weights = np.empty(2)
    for c in (0, 1):
        mask = labels == c
        weights[c] = max(mask.mean(), 1e-6)
        variances[c] = (points[mask].var(axis=0) if mask.any()
                        else points.var(axis=0))
    variances = np.maximum(variances, var_floor)
    weights /= weights.sum()
    prev = -np.inf
    for _ in range(max_iter):
        lp = _gmm2_loglik(points, means, variances, weights)
        shift = lp.max(axis=1, keepdims=True)
        post = np.exp(lp - shift)
        norm = post.sum(axis=1, keepdims=True)
        post /= norm
        loglik = float((np.log(norm[:, 0]) + shift[:, 0]).mean())
        if loglik - prev < tol and loglik >= prev:
            prev = loglik
            break
        prev = loglik
        nk = post.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        for c in (0, 1):
            means[c] = (post[:, c:c + 1] * points).sum(axis=0) / nk[c]
            diff = points - means[c]
            variances[c] = (post[:, c:c + 1] * diff**2).sum(axis=0) / nk[c]
        variances = np.maximum(variances, var_floor)
        weights = nk / nk.sum()
    return means, variances, weights, np.argmax(post, axis=1)


@dataclass
class ClusterNode:
    degenerate: bool = False
    centroids: np.ndarray | None = None     # kmeans
    means: np.ndarray | None = None         # gmm
    variances: np.ndarray | None = None
    weights: np.ndarray | None = None

    def left_prob(self, x: np.ndarray) -> float:
        if self.degenerate:
            return 1.0
        if self.centroids is not None:
            d = np.linalg.norm(self.centroids - x, axis=1)
            z = -d
            z -= z.max()
            e = np.exp(z)
            return float(e[0] / e.sum())
        lp = _gmm2_loglik(x[None, :], self.means, self.variances,
                          self.weights)[0]
        lp -= lp.max()
        e = np.exp(lp)
        return float(e[0] / e.sum())


@dataclass
class ClusterTree:
    depth: int
    kind: str                                   # "kmeans" | "gmm"
    nodes: dict[int, ClusterNode] = field(default_factory=dict)
    leaf_members: dict[int, list[int]] = field(default_factory=dict)
    context_unit: np.ndarray | None = None      # normalized context vectors


def fit_cluster_tree(contexts: np.ndarray, depth: int, kind: str,
                     seed: int) -> ClusterTree:
    """Recursive top-down bisection of the (L2-normalized) context set."""
    if kind not in ("kmeans", "gmm"):
        raise ValueError(f"unknown cluster kind {kind!r}")
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.shape[0] < 2:
        raise TooFewContexts("need at least 2 contexts")
    unit = _normalize_rows(contexts)
    tree = ClusterTree(depth, kind, context_unit=unit)
    rng = np.random.default_rng(seed)
    topo = Topology(depth)

    def fit_node(node_id: int, member_ids: np.ndarray):
        if topo.node_depth(node_id) == depth:
            tree.leaf_members[node_id] = sorted(member_ids.tolist())
            return
        pts = unit[member_ids]
        fitted = None
        if len(member_ids) >= 2:
            if kind == "kmeans":
                km = _kmeans2(pts, rng)
                if km is not None:
                    fitted = ClusterNode(centroids=km[0])
                    labels = km[1]
            else:
                gm = _gmm2(pts, rng)
                if gm is not None:
                    fitted = ClusterNode(means=gm[0], variances=gm[1],
                                         weights=gm[2])
                    labels = gm[3]
        if fitted is None:
            # empty/singleton/identical subset: route everything left
            tree.nodes[node_id] = ClusterNode(degenerate=True)
            fit_node(2 * node_id, member_ids)
            fit_node(2 * node_id + 1, member_ids[:0])
            return
        tree.nodes[node_id] = fitted
        fit_node(2 * node_id, member_ids[labels == 0])
        fit_node(2 * node_id + 1, member_ids[labels == 1])

    fit_node(1, np.arange(contexts.shape[0]))
    return tree


def _leaf_scores(tree: ClusterTree, vector: np.ndarray) -> np.ndarray:
    """Product-propagated per-leaf probabilities for one input vector."""
    topo = Topology(tree.depth)
    probs = {1: 1.0}
    for t in range(1, topo.num_leaves):
        lp = tree.nodes[t].left_prob(vector)
        probs[2 * t] = probs[t] * lp
        probs[2 * t + 1] = probs[t] * (1.0 - lp)
    return np.array([probs[t] for t in topo.level_nodes(tree.depth)])


def tree_search(tree: ClusterTree, query: np.ndarray, k: int,
                context_vectors: np.ndarray) -> RankedResult:
    """Global search: best-scoring leaf, members reranked by raw cosine."""
    query = np.asarray(query, dtype=np.float64)
    qn = query / max(np.linalg.norm(query), 1e-30)
    leaf_probs = _leaf_scores(tree, qn)
    topo = Topology(tree.depth)
    leaves = list(topo.level_nodes(tree.depth))
    best_leaf = leaves[int(np.argmax(leaf_probs))]
    members = np.asarray(tree.leaf_members[best_leaf], dtype=np.int64)
    if members.size == 0:
        return RankedResult(members, np.empty(0))
    rows = _normalize_rows(np.asarray(context_vectors, dtype=np.float64))
    scores = rows[members] @ qn
    return rank_scores(scores, members, k)


def gmm_leaf_distribution(tree: ClusterTree, vector: np.ndarray) -> np.ndarray:
    """Responsibility products over all leaves; a valid level-D distribution."""
    if tree.kind != "gmm":
        raise WrongKind("leaf distributions need a GMM tree")
    v = np.asarray(vector, dtype=np.float64)
    v = v / max(np.linalg.norm(v), 1e-30)
    return _leaf_scores(tree, v)


def cluster_tree_to_json(tree: ClusterTree) -> dict:
    nodes = {}
    for t, node in tree.nodes.items():
        if node.degenerate:
            nodes[str(t)] = {"degenerate": True}
        elif tree.kind == "kmeans":
            nodes[str(t)] = {"centroids": node.centroids.tolist()}
        else:
            nodes[str(t)] = {
                "means": node.means.tolist(),
                "variances": node.variances.tolist(),
                "weights": node.weights.tolist(),
            }
    return {
        "depth": tree.depth,
        "kind": tree.kind,
        "nodes": nodes,
        "leaf_members": {str(t): m for t, m in tree.leaf_members.items()},
    }


def cluster_tree_from_json(doc: dict) -> ClusterTree:
    tree = ClusterTree(doc["depth"], doc["kind"])
    for t, nd in doc["nodes"].items():
        if nd.get("degenerate"):
            tree.nodes[int(t)] = ClusterNode(degenerate=True)
        elif tree.kind == "kmeans":
            tree.nodes[int(t)] = ClusterNode(
                centroids=np.asarray(nd["centroids"]))
        else:
            tree.nodes[int(t)] = ClusterNode(
                means=np.asarray(nd["means"]),
                variances=np.asarray(nd["variances"]),
                weights=np.asarray(nd["weights"]))
    tree.leaf_members = {int(t): m for t, m in doc["leaf_members"].items()}
    return tree


# ---------------------------------------------------------------------------
# flat ablations


class _FlatTopology:
    """Topology shim: a bank of independent heads with no tree structure."""

    def __init__(self, n_heads: int):
        self.depth = 0
        self.num_splits = n_heads


class NoTreeModel:
    """Routing model with tree structure and propagation removed.

    The configured split family runs as 2^D independent scoring heads whose
    scores are softmaxed into one flat distribution, compared by nTVD and
    trained with the same contrastive objective as the tree model.
    """

    def __init__(self, depth: int, split_config: SplitConfig, rng):
        self.depth = depth
        self.num_heads = 2**depth
        self.split = make_split(split_config, _FlatTopology(self.num_heads),
                                rng)
        self.config = split_config

    @property
    def params(self):
        return self.split.params

    def forward(self, inputs, train_mode=False, rng=None) -> Tensor:
        if not isinstance(inputs, list):
            inputs = Tensor(np.asarray(inputs, dtype=np.float64))
        scores = self.split.scores(inputs, train_mode, rng)
        return softmax(scores, axis=-1)

    def representations(self, store, ids, batch=256) -> np.ndarray:
        ids = list(ids)
        out = np.empty((len(ids), self.num_heads), dtype=np.float32)
        with no_grad():
            for start in range(0, len(ids), batch):
                chunk = ids[start:start + batch]
                if self.config.variant == "cross_attention":
                    x = [store.token_matrices[i].astype(np.float64)
                         for i in chunk]
                else:
                    x = store.sentence_vectors[chunk].astype(np.float64)
                out[start:start + len(chunk)] = self.forward(x).data
        return out


class CosineAdapter:
    """Square linear adapter over frozen embeddings, cosine-compared."""

    def __init__(self, dim: int, rng, nested_depth: int = 0):
        self.dim = dim
        self.nested_depth = nested_depth  # 0 = plain loss, else prefix sum
        self.params = {"w": _uniform(rng, (dim, dim), dim)}

    def forward(self, x, train_mode=False, rng=None) -> Tensor:
        x = Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"input width {x.shape[-1]} != {self.dim}")
        y = x @ self.params["w"].transpose(1, 0)
        return _l2_normalize(y)

    def representations(self, store, ids) -> np.ndarray:
        with no_grad():
            return self.forward(
                store.sentence_vectors[list(ids)].astype(np.float64)
            ).data.astype(np.float32)

    def loss(self, qx, cx, train_mode=False, rng=None) -> Tensor:
        q = self.forward(qx, train_mode, rng)
        c = self.forward(cx, train_mode, rng)
        if not self.nested_depth:
            return cosine_info_nce(q, c)
        total = None
        for h in range(1, self.nested_depth + 1):
            width = 2**h
            term = cosine_info_nce(_l2_normalize(q[:, :width]),
                                   _l2_normalize(c[:, :width]))
            total = term if total is None else total + term
        return total


def _l2_normalize(x: Tensor) -> Tensor:
    norm = (x * x).sum(axis=-1, keepdims=True).sqrt()
    return x / (norm + 1e-30)


def cosine_info_nce(q: Tensor, c: Tensor) -> Tensor:
    """Symmetric InfoNCE where similarity is the dot of unit vectors."""
    from .autodiff import logsumexp
    bsz = q.shape[0]
    sims = q @ c.transpose(1, 0)
    diag = sims[np.arange(bsz), np.arange(bsz)]
    row = logsumexp(sims, axis=1)
    col = logsumexp(sims, axis=0)
    return ((row - diag) + (col - diag)).sum() * (1.0 / (2.0 * bsz))


def flat_forward(model, x):
    """Single-input representation for either flat variant."""
    if isinstance(model, NoTreeModel):
        if model.config.variant == "cross_attention":
            return model.forward([np.asarray(x, dtype=np.float64)]).data[0]
        return model.forward(np.asarray(x)[None, :]).data[0]
    return model.forward(np.asarray(x)[None, :]).data[0]


def ntvd_loss(model: NoTreeModel, qx, cx, train_mode=False, rng=None) -> Tensor:
    return info_nce(model.forward(qx, train_mode, rng),
                    model.forward(cx, train_mode, rng))
