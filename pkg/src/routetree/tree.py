"""Tree topology, node addressing, assignments and the nTVD similarity.

Nodes use heap addressing: root = 1, children of t are 2t and 2t+1. With
depth D, split nodes are 1 .. 2^D - 1 and leaves 2^D .. 2^(D+1) - 1; the
nodes at level h are 2^h .. 2^(h+1) - 1. Everything here is pure integer
arithmetic, no pointers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LevelMismatch, OutOfRange

ASSIGNMENT_TOL = 1e-5


@dataclass(frozen=True)
class Topology:
    depth: int

    def __post_init__(self):
        if self.depth < 1:
            raise OutOfRange(f"depth must be positive, got {self.depth}")

    @property
    def num_nodes(self) -> int:
        return 2 ** (self.depth + 1) - 1

    @property
    def num_splits(self) -> int:
        return 2**self.depth - 1

    @property
    def num_leaves(self) -> int:
        return 2**self.depth

    def is_valid_node(self, t: int) -> bool:
        return 1 <= t <= self.num_nodes

    def level_nodes(self, h: int) -> range:
        if not 0 <= h <= self.depth:
            raise OutOfRange(f"level {h} outside 0..{self.depth}")
        return range(2**h, 2 ** (h + 1))

    def node_depth(self, t: int) -> int:
        if not self.is_valid_node(t):
            raise OutOfRange(f"node {t} outside 1..{self.num_nodes}")
        return t.bit_length() - 1

    def ancestors(self, t: int) -> list[int]:
        """Split nodes on the root-to-t path, root first, excluding t."""
        if not self.is_valid_node(t):
            raise OutOfRange(f"node {t} outside 1..{self.num_nodes}")
        path = []
        while t > 1:
            t //= 2
            path.append(t)
        path.reverse()
        return path

    def lca_depth(self, u: int, v: int) -> int:
        if not (self.is_valid_node(u) and self.is_valid_node(v)):
            raise OutOfRange(f"nodes ({u}, {v}) outside 1..{self.num_nodes}")
        du, dv = self.node_depth(u), self.node_depth(v)
        while du > dv:
            u //= 2
            du -= 1
        while dv > du:
            v //= 2
            dv -= 1
        while u != v:
            u //= 2
            v //= 2
            du -= 1
        return du

    def tree_distance(self, u: int, v: int) -> int:
        return (
            self.node_depth(u) + self.node_depth(v) - 2 * self.lca_depth(u, v)
        )

    def leaf_ancestor_splits(self) -> np.ndarray:
        """(num_leaves, depth) split indices (0-based) on each leaf's path."""
        out = np.empty((self.num_leaves, self.depth), dtype=np.int64)
        for i, leaf in enumerate(self.level_nodes(self.depth)):
            out[i] = [a - 1 for a in self.ancestors(leaf)]
        return out

    def leaf_goes_left(self) -> np.ndarray:
        """(num_leaves, depth) flags: 1 where the path turns left."""
        out = np.empty((self.num_leaves, self.depth), dtype=np.float64)
        for i, leaf in enumerate(self.level_nodes(self.depth)):
            path = self.ancestors(leaf) + [leaf]
            for j in range(self.depth):
                out[i, j] = 1.0 if path[j + 1] == 2 * path[j] else 0.0
        return out


@dataclass
class Assignment:
    """Probability vector over the 2^h nodes at one tree level."""

    level: int
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.shape != (2**self.level,):
            raise LevelMismatch(
                f"level {self.level} needs {2 ** self.level} entries, "
                f"got {self.probs.shape}"
            )

    def validate(self) -> None:
        p = self.probs.astype(np.float64)
        if np.any(p < 0):
            raise ValueError("negative assignment probability")
        if abs(p.sum() - 1.0) > ASSIGNMENT_TOL:
            raise ValueError(f"assignment sums to {p.sum()}, expected 1")


def ntvd_sim(a: Assignment, b: Assignment) -> float:
    """Negative total variation distance, -0.5 * sum |a_l - b_l|, in [-1, 0]."""
    if a.level != b.level:
        raise LevelMismatch(f"levels differ: {a.level} vs {b.level}")
    pa = a.probs.astype(np.float64)
    pb = b.probs.astype(np.float64)
    return float(-0.5 * np.abs(pa - pb).sum())
