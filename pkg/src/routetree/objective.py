"""Symmetric InfoNCE over assignment similarity, nested variant, and L1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, custom, logsumexp
from .errors import BatchTooSmall, LevelMismatch, MissingLevel


@dataclass
class LossConfig:
    level_mode: str = "single"  # "single" | "sum_all_levels"
    level: int = 0              # used by single mode; 0 -> deepest
    l1_weight: float = 0.0

    def __post_init__(self):
        if self.level_mode not in ("single", "sum_all_levels"):
            raise ValueError(f"unknown level_mode {self.level_mode!r}")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be >= 0")


def ntvd_pair_matrix(q: Tensor, c: Tensor) -> Tensor:
    """All-pairs nTVD similarity matrix with custom gradients (hot kernel)."""
    sims = kernels.ntvd_matrix(q.data, c.data)
    qd, cd = q.data, c.data

    def back_q(g):
        return kernels.ntvd_matrix_grads(qd, cd, g)[0]

    def back_c(g):
        return kernels.ntvd_matrix_grads(qd, cd, g)[1]

    return custom(sims, [(q, back_q), (c, back_c)])


def info_nce(q_assign: Tensor, c_assign: Tensor) -> Tensor:
    """Symmetric two-term contrastive loss with in-batch negatives.

    Pair i is positive (q_i, c_i); all j != i act as negatives in both the
    query-to-context and context-to-query softmax terms.
    """
    if q_assign.shape != c_assign.shape:
        raise LevelMismatch(
            f"assignment shapes differ: {q_assign.shape} vs {c_assign.shape}")
    bsz = q_assign.shape[0]
    if bsz < 2:
        raise BatchTooSmall("need at least 2 pairs for in-batch negatives")
    sims = ntvd_pair_matrix(q_assign, c_assign)     # sims[i, j] = sim(q_i, c_j)
    diag = sims[np.arange(bsz), np.arange(bsz)]
    row = logsumexp(sims, axis=1)                   # query -> contexts
    col = logsumexp(sims, axis=0)                   # context -> queries
    return ((row - diag) + (col - diag)).sum() * (1.0 / (2.0 * bsz))


def level_losses(q_levels: list[Tensor], c_levels: list[Tensor],
                 mode: str, level: int = 0) -> Tensor:
    """Contrastive loss at one level or summed over levels 1..D (unweighted)."""
    depth = len(q_levels) - 1
    if mode == "single":
        h = level if level else depth
        if not 1 <= h <= depth:
            raise MissingLevel(f"level {h} outside 1..{depth}")
        return info_nce(q_levels[h], c_levels[h])
    if mode == "sum_all_levels":
        total = info_nce(q_levels[1], c_levels[1])
        for h in range(2, depth + 1):
            total = total + info_nce(q_levels[h], c_levels[h])
        return total
    raise ValueError(f"unknown mode {mode!r}")


def l1_penalty(assignments: Tensor, weight: float) -> Tensor:
    """weight * batch-mean of the L1 norm of each assignment vector."""
    if weight == 0.0:
        return Tensor(0.0)
    return assignments.abs().sum(axis=-1).mean() * weight
