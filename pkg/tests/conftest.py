import numpy as np
import pytest

from routetree.io import EmbeddingStore, Pair, PairDataset
from routetree.model import ModelConfig, TreeModel
from routetree.propagation import PropagationConfig
from routetree.splits import SplitConfig


def tiny_model(variant="linear", propagation="product", depth=3, dim=8,
               aggregator="tree_structured", seed=0, **kw) -> TreeModel:
    split = SplitConfig(variant=variant, dim=dim, token_dim=dim, hidden=6,
                        n_e=2, n_heads=2, d_head=3, node_emb_dim=5,
                        aggregator=aggregator, agg_hidden=4)
    cfg = ModelConfig(depth=depth, split=split,
                      propagation=PropagationConfig(propagation, hidden=5),
                      **kw)
    return TreeModel(cfg, np.random.default_rng(seed))


def vector_store(n=20, dim=8, seed=0, tokens=False) -> EmbeddingStore:
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(n, dim)).astype(np.float32)
    toks = None
    if tokens:
        toks = [rng.normal(size=(int(rng.integers(2, 6)), dim))
                .astype(np.float32) for _ in range(n)]
    return EmbeddingStore(vecs, toks)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def pair_dataset():
    pairs = [Pair(i, i, "train" if i < 16 else "test") for i in range(20)]
    return PairDataset(pairs)
