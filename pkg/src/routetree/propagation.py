"""Turning per-node routing probabilities into level-wise assignments.

Product propagation multiplies routing probabilities along each root-to-leaf
path, which keeps every level a valid distribution by construction. Learned
propagation feeds each leaf's path of left-routing probabilities (root first)
through a shared 2-layer ReLU perceptron plus a per-leaf bias, softmaxes the
leaf logits, and fills the inner levels bottom-up by summing child pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, softmax, stack
from .splits import dropout, _uniform, _zeros
from .tree import Topology

PROPAGATION_VARIANTS = ("product", "learned")


@dataclass
class PropagationConfig:
    variant: str = "learned"
    hidden: int = 16
    dropout: float = 0.0

    def __post_init__(self):
        if self.variant not in PROPAGATION_VARIANTS:
            raise ValueError(f"unknown propagation {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


class ProductPropagation:
    def __init__(self, config: PropagationConfig, topology: Topology, rng=None):
        self.config = config
        self.topology = topology
        self.params: dict[str, Tensor] = {}

    def levels(self, z_left: Tensor, train_mode: bool = False,
               rng=None) -> list[Tensor]:
        bsz = z_left.shape[0]
        out = [Tensor(np.ones((bsz, 1)))]
        for h in range(1, self.topology.depth + 1):
            lo, hi = 2 ** (h - 1) - 1, 2**h - 1
            zl = z_left[:, lo:hi]
            left = out[-1] * zl
            right = out[-1] * (1.0 - zl)
            # interleave children: node 2t left, 2t+1 right
            out.append(stack([left, right], axis=-1).reshape(bsz, 2**h))
        return out


class LearnedPropagation:
    def __init__(self, config: PropagationConfig, topology: Topology, rng):
        self.config = config
        self.topology = topology
        d, h = topology.depth, config.hidden
        self.params = {
            "w1": _uniform(rng, (h, d), d),
            "b1": _zeros((h,)),
            "w2": _uniform(rng, (h,), h),
            "b2": _zeros(()),
            "leaf_bias": _zeros((topology.num_leaves,)),
        }
        self._anc_idx = topology.leaf_ancestor_splits()
        self._goes_left = topology.leaf_goes_left()

    def levels(self, z_left: Tensor, train_mode: bool = False,
               rng=None) -> list[Tensor]:
        bsz = z_left.shape[0]
        d = self.topology.depth
        gathered = z_left.gather_axis1(self._anc_idx)     # (B, L, D)
        gl = Tensor(self._goes_left)
        path = gathered * gl + (1.0 - gathered) * (1.0 - gl)
        h = (path @ self.params["w1"].transpose(1, 0)
             + self.params["b1"]).relu()                  # (B, L, H)
        h = dropout(h, self.config.dropout, train_mode, rng)
        logits = (h * self.params["w2"]).sum(axis=-1) \
            + self.params["b2"] + self.params["leaf_bias"]  # (B, L)
        leaves = softmax(logits, axis=-1)
        out = [leaves]
        for lvl in range(d - 1, -1, -1):
            # parent probability = sum of its two children
            out.append(out[-1].reshape(bsz, 2**lvl, 2).sum(axis=-1))
        out.reverse()
        return out


def make_propagation(config: PropagationConfig, topology: Topology, rng):
    if config.variant == "product":
        return ProductPropagation(config, topology, rng)
    return LearnedPropagation(config, topology, rng)


def propagate_product(z_left: np.ndarray, topology: Topology) -> list[np.ndarray]:
    """Single-input product propagation; returns per-level numpy vectors."""
    prop = ProductPropagation(PropagationConfig("product"), topology)
    levels = prop.levels(Tensor(np.asarray(z_left)[None, :]))
    return [lvl.data[0] for lvl in levels]


def propagate_learned(prop: LearnedPropagation,
                      z_left: np.ndarray) -> list[np.ndarray]:
    levels = prop.levels(Tensor(np.asarray(z_left)[None, :]))
    return [lvl.data[0] for lvl in levels]


def sequential_leaf_probs(z_left: np.ndarray, topology: Topology) -> np.ndarray:
    """Explicit root-to-leaf sequential routing; oracle for product mode."""
    probs = np.empty(topology.num_leaves)
    for i, leaf in enumerate(topology.level_nodes(topology.depth)):
        p = 1.0
        node = leaf
        while node > 1:
            parent = node // 2
            zl = z_left[parent - 1]
            p *= zl if node == 2 * parent else (1.0 - zl)
            node = parent
        probs[i] = p
    return probs
