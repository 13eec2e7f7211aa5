"""Deterministic synthetic corpus generator for desk-scale runs.

Cluster means are drawn on a sphere of radius `separation`; contexts add
unit Gaussian noise around their mean, and each query perturbs its positive
context with `query_noise`-scaled Gaussian noise. Context texts plant one
keyword per cluster so the inspection tooling has a known answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecInvalid
from .io import EmbeddingStore, Manifest, ManifestRow, Pair, PairDataset

_FILLER = (
    "the a of and to in for on with from about over under "
    "item note text piece entry record snippet passage"
).split()


@dataclass
class SynthSpec:
    clusters: int = 32
    dim: int = 16
    contexts_per_cluster: int = 100
    query_noise: float = 0.1
    separation: float = 10.0
    seed: int = 0
    with_tokens: bool = False
    token_noise: float = 0.1

    def validate(self) -> None:
        if self.clusters < 2:
            raise SpecInvalid("need at least 2 clusters")
        if self.query_noise >= self.separation:
            raise SpecInvalid("query noise must stay below separation")
        if self.dim < 1 or self.contexts_per_cluster < 1:
            raise SpecInvalid("dim and contexts_per_cluster must be positive")


def cluster_keyword(cluster: int) -> str:
    return f"topicword{cluster}"


def generate(spec: SynthSpec):
    """Returns (context_store, query_store, pairs, context_manifest)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.clusters * spec.contexts_per_cluster

    means = rng.normal(size=(spec.clusters, spec.dim))
    means = means / np.linalg.norm(means, axis=1, keepdims=True)
    means *= spec.separation

    cluster_of = np.repeat(np.arange(spec.clusters), spec.contexts_per_cluster)
    contexts = means[cluster_of] + rng.normal(size=(n, spec.dim))
    queries = contexts + spec.query_noise * rng.normal(size=(n, spec.dim))

    def tokens_for(vectors):
        out = []
        for v in vectors:
            n_tok = int(rng.integers(4, 17))
            out.append((v[None, :] + spec.token_noise
                        * rng.normal(size=(n_tok, spec.dim))).astype(np.float32))
        return out

    ctx_tokens = tokens_for(contexts) if spec.with_tokens else None
    qry_tokens = tokens_for(queries) if spec.with_tokens else None

    context_store = EmbeddingStore(contexts.astype(np.float32), ctx_tokens)
    query_store = EmbeddingStore(queries.astype(np.float32), qry_tokens)

    rows = []
    for i in range(n):
        kw = cluster_keyword(int(cluster_of[i]))
        filler = rng.choice(_FILLER, size=6)
        text = " ".join([kw, *filler, kw])
        rows.append(ManifestRow(i, f"ctx-{i}", "context", text))
    manifest = Manifest(rows)

    # 80/10/10 split over a seeded permutation of the pair list
    order = rng.permutation(n)
    n_train = int(0.8 * n)
    n_val = int(0.1 * n)
    pairs = []
    for rank, i in enumerate(order):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"
        pairs.append(Pair(int(i), int(i), split))
    pairs.sort(key=lambda p: p.query_id)
    return context_store, query_store, PairDataset(pairs), manifest


def cluster_labels(spec: SynthSpec) -> np.ndarray:
    return np.repeat(np.arange(spec.clusters), spec.contexts_per_cluster)
