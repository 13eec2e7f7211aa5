"""The routing-tree model: split function + propagation over a topology."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .io import EmbeddingStore
from .propagation import PropagationConfig, make_propagation
from .splits import SplitConfig, make_split, route_probs, score_dropout
from .tree import Topology


@dataclass
class ModelConfig:
    depth: int = 10
    split: SplitConfig = field(default_factory=SplitConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    score_dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.score_dropout < 1.0:
            raise ValueError("score_dropout must be in [0, 1)")


class TreeModel:
    def __init__(self, config: ModelConfig, rng):
        self.config = config
        self.topology = Topology(config.depth)
        self.split = make_split(config.split, self.topology, rng)
        self.propagation = make_propagation(
            config.propagation, self.topology, rng)

    @property
    def params(self) -> dict[str, Tensor]:
        out = {f"split.{k}": v for k, v in self.split.params.items()}
        out.update({f"prop.{k}": v for k, v in self.propagation.params.items()})
        return out

    def get_param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params
        if set(arrays) != set(params):
            raise ValueError("parameter name mismatch")
        for k, v in arrays.items():
            if params[k].data.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}")
            params[k].data = np.asarray(v, dtype=np.float64).copy()

    def batch_inputs(self, store: EmbeddingStore, ids):
        """Pick the input representation the split family consumes."""
        if self.config.split.variant == "cross_attention":
            if store.token_matrices is None:
                raise ValueError("cross_attention needs token matrices")
            return [store.token_matrices[i].astype(np.float64) for i in ids]
        return store.sentence_vectors[list(ids)].astype(np.float64)

    def forward(self, inputs, train_mode: bool = False, rng=None) -> list[Tensor]:
        """Assignments at every level 0..D for a batch of inputs."""
        if isinstance(inputs, list):
            x = inputs
        else:
            x = Tensor(np.asarray(inputs, dtype=np.float64))
        scores = self.split.scores(x, train_mode, rng)
        scores = score_dropout(
            scores, self.config.score_dropout, train_mode, rng)
        z_left, _ = route_probs(scores)
        return self.propagation.levels(z_left, train_mode, rng)

    def assignments(self, store: EmbeddingStore, ids, level: int,
                    batch: int = 256) -> np.ndarray:
        """Inference-mode assignment matrix (n, 2^level), float32 rows."""
        ids = list(ids)
        rows = np.empty((len(ids), 2**level), dtype=np.float32)
        with no_grad():
            for start in range(0, len(ids), batch):
                chunk = ids[start:start + batch]
                levels = self.forward(self.batch_inputs(store, chunk))
                rows[start:start + len(chunk)] = levels[level].data
        return rows
