"""Per-node routing scorers and the cross-attention score aggregators.

Three split families produce one raw score per split node:

* linear      -- a separate hyperplane per node, score = <theta_t, x>
* perceptron  -- one shared 2-layer ReLU perceptron emitting all node scores
* cross_attention -- learnable node embeddings attend over the input's token
  matrix; the attended embeddings are reduced to a score by an aggregator
  (mean_linear, per_node_linear, or tree_structured).

Scores are turned into left/right routing probabilities by a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concatenate, softmax
from .errors import DimMismatch, NonFinite, ShapeMismatch
from .tree import Topology

SPLIT_VARIANTS = ("linear", "perceptron", "cross_attention")
AGGREGATORS = ("mean_linear", "per_node_linear", "tree_structured")


def _uniform(rng, shape, fan_in):
    scale = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class SplitConfig:
    variant: str = "cross_attention"
    dim: int = 1024
    token_dim: int = 1024
    hidden: int = 128          # perceptron hidden width
    dropout: float = 0.0       # perceptron hidden dropout
    n_e: int = 1               # node embeddings per node
    n_heads: int = 8
    d_head: int = 64
    node_emb_dim: int = 0      # 0 -> defaults to d_k
    aggregator: str = "tree_structured"
    agg_hidden: int = 16       # tree-structured refiner hidden width

    @property
    def d_k(self) -> int:
        return self.n_heads * self.d_head

    def __post_init__(self):
        if self.variant not in SPLIT_VARIANTS:
            raise ValueError(f"unknown split variant {self.variant!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.n_e < 1:
            raise ValueError("n_e must be >= 1")
        if self.node_emb_dim == 0:
            self.node_emb_dim = self.d_k


class LinearSplit:
    """One hyperplane per split node over the sentence vector."""

    def __init__(self, config: SplitConfig, topology: Topology, rng):
        self.config = config
        self.topology = topology
        self.params = {
            "theta": _uniform(rng, (topology.num_splits, config.dim),
                              config.dim),
        }

    def scores(self, x: Tensor, train_mode: bool = False, rng=None) -> Tensor:
        if x.shape[-1] != self.config.dim:
            raise DimMismatch(f"input width {x.shape[-1]} != {self.config.dim}")
        return x @ self.params["theta"].transpose(1, 0)


class PerceptronSplit:
    """Shared 2-layer ReLU perceptron emitting one score per split node."""

    def __init__(self, config: SplitConfig, topology: Topology, rng):
        self.config = config
        self.topology = topology
        h = config.hidden
        self.params = {
            "w1": _uniform(rng, (h, config.dim), config.dim),
            "b1": _zeros((h,)),
            "w2": _uniform(rng, (topology.num_splits, h), h),
            "b2": _zeros((topology.num_splits,)),
        }

    def scores(self, x: Tensor, train_mode: bool = False, rng=None) -> Tensor:
        if x.shape[-1] != self.config.dim:
            raise DimMismatch(f"input width {x.shape[-1]} != {self.config.dim}")
        h = (x @ self.params["w1"].transpose(1, 0) + self.params["b1"]).relu()
        h = dropout(h, self.config.dropout, train_mode, rng)
        return h @ self.params["w2"].transpose(1, 0) + self.params["b2"]


class CrossAttentionSplit:
    """Node embeddings attend over token matrices; aggregator emits scores."""

    def __init__(self, config: SplitConfig, topology: Topology, rng):
        self.config = config
        self.topology = topology
        c = config
        s = topology.num_splits
        self.params = {
            "node_emb": _uniform(rng, (s, c.n_e, c.node_emb_dim),
                                 c.node_emb_dim),
            "wq": _uniform(rng, (c.d_k, c.node_emb_dim), c.node_emb_dim),
            "wk": _uniform(rng, (c.d_k, c.token_dim), c.token_dim),
            "wv": _uniform(rng, (c.d_k, c.token_dim), c.token_dim),
        }
        if c.aggregator == "mean_linear":
            self.params["agg_w"] = _uniform(rng, (c.d_k,), c.d_k)
            self.params["agg_b"] = _zeros(())
        else:
            self.params["agg_w"] = _uniform(rng, (s, c.d_k), c.d_k)
            self.params["agg_b"] = _zeros((s,))
        if c.aggregator == "tree_structured":
            # one tiny refiner per node, grouped by depth (input width d+1)
            for d in range(topology.depth):
                n = 2**d
                self.params[f"ref_w1_{d}"] = _uniform(
                    rng, (n, c.agg_hidden, d + 1), d + 1)
                self.params[f"ref_b1_{d}"] = _zeros((n, c.agg_hidden))
                self.params[f"ref_w2_{d}"] = _uniform(
                    rng, (n, c.agg_hidden), c.agg_hidden)
                self.params[f"ref_b2_{d}"] = _zeros((n,))
        # ancestor index table per depth group, root first then self (0-based)
        self._anc_idx = []
        for d in range(topology.depth):
            rows = []
            for t in topology.level_nodes(d):
                rows.append([a - 1 for a in topology.ancestors(t)] + [t - 1])
            self._anc_idx.append(np.asarray(rows, dtype=np.int64))

    def attend(self, tokens: list[np.ndarray]) -> Tensor:
        """Batched cross-attention: ragged token matrices -> (B, S, n_e, d_k)."""
        c = self.config
        if any(m.shape[1] != c.token_dim for m in tokens):
            raise DimMismatch("token matrix width mismatch")
        bsz = len(tokens)
        n_max = max(m.shape[0] for m in tokens)
        x = np.zeros((bsz, n_max, c.token_dim))
        mask = np.zeros((bsz, n_max), dtype=bool)
        for i, m in enumerate(tokens):
            x[i, : m.shape[0]] = m
            mask[i, : m.shape[0]] = True
        xt = Tensor(x)
        s = self.topology.num_splits
        sq = s * c.n_e
        q = self.params["node_emb"].reshape(sq, c.node_emb_dim) \
            @ self.params["wq"].transpose(1, 0)           # (S*n_e, d_k)
        k = xt @ self.params["wk"].transpose(1, 0)         # (B, n, d_k)
        v = xt @ self.params["wv"].transpose(1, 0)
        nh, dh = c.n_heads, c.d_head
        qh = q.reshape(sq, nh, dh).transpose(1, 0, 2)      # (nh, S*n_e, dh)
        kh = k.reshape(bsz, n_max, nh, dh).transpose(0, 2, 3, 1)  # (B,nh,dh,n)
        vh = v.reshape(bsz, n_max, nh, dh).transpose(0, 2, 1, 3)  # (B,nh,n,dh)
        logits = (qh @ kh) * (1.0 / np.sqrt(c.d_k))        # (B, nh, S*n_e, n)
        att = softmax(logits, axis=-1, mask=mask[:, None, None, :])
        out = att @ vh                                     # (B, nh, S*n_e, dh)
        out = out.transpose(0, 2, 1, 3).reshape(bsz, s, c.n_e, c.d_k)
        return out

    def aggregate(self, attended: Tensor) -> Tensor:
        c = self.config
        s = self.topology.num_splits
        if attended.shape[1:] != (s, c.n_e, c.d_k):
            raise ShapeMismatch(
                f"attended shape {attended.shape[1:]} != {(s, c.n_e, c.d_k)}")
        if c.aggregator == "mean_linear":
            pooled = attended.mean(axis=2)                 # (B, S, d_k)
            return (pooled * self.params["agg_w"]).sum(axis=-1) \
                + self.params["agg_b"]
        # per-node linear maps, then mean over the n_e per-embedding scores
        w = self.params["agg_w"].reshape(1, s, 1, c.d_k)
        raw = (attended * w).sum(axis=-1).mean(axis=2) \
            + self.params["agg_b"]                         # (B, S)
        if c.aggregator == "per_node_linear" or self.topology.depth == 0:
            # depth 0 only occurs for the flat head bank: no ancestors exist,
            # so the tree_structured refiner reduces to the per-node linear
            return raw
        # tree_structured: per-node refiner over [ancestor scores..., own]
        groups = []
        for d in range(self.topology.depth):
            inp = raw.gather_axis1(self._anc_idx[d])       # (B, 2^d, d+1)
            inp = inp.transpose(1, 0, 2)                   # (2^d, B, d+1)
            w1 = self.params[f"ref_w1_{d}"]                # (2^d, H, d+1)
            h = (inp @ w1.transpose(0, 2, 1)
                 + self.params[f"ref_b1_{d}"].reshape(2**d, 1, c.agg_hidden))
            h = h.relu()
            out = (h * self.params[f"ref_w2_{d}"].reshape(
                2**d, 1, c.agg_hidden)).sum(axis=-1) \
                + self.params[f"ref_b2_{d}"].reshape(2**d, 1)
            groups.append(out.transpose(1, 0))             # (B, 2^d)
        return concatenate(groups, axis=1)

    def scores(self, tokens: list[np.ndarray], train_mode: bool = False,
               rng=None) -> Tensor:
        return self.aggregate(self.attend(tokens))


def make_split(config: SplitConfig, topology: Topology, rng):
    cls = {
        "linear": LinearSplit,
        "perceptron": PerceptronSplit,
        "cross_attention": CrossAttentionSplit,
    }[config.variant]
    return cls(config, topology, rng)


# ---------------------------------------------------------------------------
# spec-level single-input entry points


def score_linear(split: LinearSplit, x: np.ndarray) -> np.ndarray:
    return split.scores(Tensor(np.asarray(x)[None, :])).data[0]


def score_perceptron(split: PerceptronSplit, x: np.ndarray,
                     train_mode: bool = False, rng=None) -> np.ndarray:
    return split.scores(Tensor(np.asarray(x)[None, :]), train_mode, rng).data[0]


def cross_attend(split: CrossAttentionSplit, x_tok: np.ndarray) -> np.ndarray:
    return split.attend([np.asarray(x_tok)]).data[0]


def aggregate_scores(split: CrossAttentionSplit,
                     attended: np.ndarray) -> np.ndarray:
    return split.aggregate(Tensor(np.asarray(attended)[None])).data[0]


def dropout(x: Tensor, rate: float, train_mode: bool, rng) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate)."""
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def score_dropout(scores: Tensor, rate: float, train_mode: bool,
                  rng) -> Tensor:
    return dropout(scores, rate, train_mode, rng)


def route_probs(scores: Tensor) -> tuple[Tensor, Tensor]:
    """Left/right routing probabilities, z_left = sigmoid(score)."""
    if not np.all(np.isfinite(scores.data)):
        raise NonFinite("non-finite split score")
    z_left = scores.sigmoid()
    return z_left, 1.0 - z_left
