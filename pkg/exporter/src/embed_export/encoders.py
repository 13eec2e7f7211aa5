"""Frozen text encoders.

Two families are supported:

* ``hash-<dim>`` -- a fully offline, deterministic hashing encoder: every
  whitespace token is embedded by a Gaussian vector seeded from its BLAKE2
  digest, and the sentence vector is the mean of its token vectors
  (mean pooling). Useful for tests and plumbing validation; it has no
  semantics beyond exact token overlap.
* any other id -- treated as a Hugging Face model name and loaded through
  ``transformers`` when that optional dependency is installed.
"""

from __future__ import annotations

import hashlib

import numpy as np


class EncoderLoadError(Exception):
    """The requested encoder cannot be constructed in this environment."""


class HashingEncoder:
    """Deterministic, dependency-free token-hash encoder."""

    pooling = "mean"

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderLoadError(f"hash encoder dim must be >= 1: {dim}")
        self.dim = dim
        self.name = f"hash-{dim}"

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8)
        seed = int.from_bytes(digest.digest(), "little")
        rng = np.random.default_rng(seed)
        return rng.normal(size=self.dim).astype(np.float32)

    def encode(self, text: str, max_len: int):
        """Returns (sentence_vector, token_matrix, truncated)."""
        tokens = text.split() or [""]
        truncated = len(tokens) > max_len
        tokens = tokens[:max_len]
        matrix = np.stack([self._token_vector(t) for t in tokens])
        return matrix.mean(axis=0), matrix, truncated


class TransformersEncoder:
    """Mean-pooled hidden states of a frozen Hugging Face model."""

    pooling = "mean"

    def __init__(self, name: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderLoadError(
                f"encoder {name!r} needs the transformers extra") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(name)
            self.model = AutoModel.from_pretrained(name)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load encoder {name!r}: {exc}") \
                from exc
        self.model.eval()
        self._torch = torch
        self.name = name
        self.dim = self.model.config.hidden_size

    def encode(self, text: str, max_len: int):
        torch = self._torch
        enc = self.tokenizer(text, return_tensors="pt", truncation=True,
                             max_length=max_len)
        truncated = enc["input_ids"].shape[1] >= max_len
        with torch.no_grad():
            hidden = self.model(**enc).last_hidden_state[0]
        matrix = hidden.numpy().astype(np.float32)
        return matrix.mean(axis=0), matrix, truncated


def load_encoder(name: str):
    if name.startswith("hash-"):
        try:
            dim = int(name.split("-", 1)[1])
        except ValueError as exc:
            raise EncoderLoadError(f"bad hash encoder id {name!r}") from exc
        return HashingEncoder(dim)
    return TransformersEncoder(name)
