"""Binary embedding stores, JSONL manifests/pairs, and deterministic batching.

On-disk embedding format (little-endian):

    magic   4 bytes  "RTRV"
    u8      version = 1
    u8      dtype   = 0 (f32)
    u8      flags     bit0 = token section present, bit1 = index extension
    u8      reserved = 0
    u64     count
    u32     dim
    u32     token_dim
    count * dim f32, row-major sentence vectors
    if flags bit0: per record u32 n_tokens then n_tokens * token_dim f32

The index extension (flags bit1, written by routetree.index) inserts, right
after the 24-byte header: u32 level, u8 metric (0 = ntvd, 1 = cosine),
3 reserved bytes, then count u64 context ids, then the payload as above.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    EmptySplit,
    TruncatedPayload,
    UnsupportedVersion,
)

MAGIC = b"RTRV"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBQII")

FLAG_TOKENS = 1
FLAG_INDEX = 2


@dataclass
class EmbeddingStore:
    """Id-addressed sentence vectors plus optional ragged token matrices."""

    sentence_vectors: np.ndarray
    token_matrices: list[np.ndarray] | None = None

    def __post_init__(self):
        self.sentence_vectors = np.asarray(
            self.sentence_vectors, dtype=np.float32
        )
        if self.sentence_vectors.ndim != 2:
            raise ValueError("sentence_vectors must be 2-D")
        if self.token_matrices is not None:
            self.token_matrices = [
                np.asarray(m, dtype=np.float32) for m in self.token_matrices
            ]

    @property
    def count(self) -> int:
        return self.sentence_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.sentence_vectors.shape[1]

    @property
    def token_dim(self) -> int:
        if not self.token_matrices:
            return 0
        return self.token_matrices[0].shape[1]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.sentence_vectors)):
            raise ValueError("non-finite sentence vector")
        if self.token_matrices is not None:
            if len(self.token_matrices) != self.count:
                raise ValueError("token matrix count mismatch")
            td = self.token_dim
            for i, m in enumerate(self.token_matrices):
                if m.ndim != 2 or m.shape[1] != td:
                    raise ValueError(f"token matrix {i} has bad shape {m.shape}")
                if m.shape[0] < 1:
                    raise ValueError(f"token matrix {i} is empty")
                if not np.all(np.isfinite(m)):
                    raise ValueError(f"non-finite tokens in record {i}")


@dataclass
class ManifestRow:
    id: int
    external_id: str
    role: str  # "query" | "context"
    text: str = ""


@dataclass
class Manifest:
    rows: list[ManifestRow] = field(default_factory=list)

    def validate(self) -> None:
        for i, row in enumerate(self.rows):
            if row.id != i:
                raise ValueError(f"manifest row {i} carries id {row.id}")
            if row.role not in ("query", "context"):
                raise ValueError(f"bad role {row.role!r} at id {i}")


@dataclass
class Pair:
    query_id: int
    context_id: int
    split: str  # train | val | test


@dataclass
class PairDataset:
    pairs: list[Pair] = field(default_factory=list)

    def split_pairs(self, split: str) -> list[Pair]:
        return [p for p in self.pairs if p.split == split]


# ---------------------------------------------------------------------------
# binary store io


def write_store(store: EmbeddingStore, path) -> None:
    store.validate()
    flags = FLAG_TOKENS if store.token_matrices is not None else 0
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MAGIC, VERSION, 0, flags, 0,
                store.count, store.dim, store.token_dim,
            )
        )
        fh.write(np.ascontiguousarray(store.sentence_vectors).tobytes())
        if store.token_matrices is not None:
            for m in store.token_matrices:
                fh.write(struct.pack("<I", m.shape[0]))
                fh.write(np.ascontiguousarray(m).tobytes())


def _read_header(fh, path):
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: header truncated")
    magic, version, dtype, flags, _, count, dim, token_dim = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if dtype != 0:
        raise UnsupportedVersion(f"{path}: dtype {dtype}")
    return flags, count, dim, token_dim


def _read_exact(fh, nbytes, path):
    raw = fh.read(nbytes)
    if len(raw) < nbytes:
        raise TruncatedPayload(f"{path}: expected {nbytes} more bytes")
    return raw


def read_store(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        flags, count, dim, token_dim = _read_header(fh, path)
        if flags & FLAG_INDEX:
            raise UnsupportedVersion(
                f"{path}: index file, use routetree.index.load_index"
            )
        vecs = np.frombuffer(
            _read_exact(fh, count * dim * 4, path), dtype="<f4"
        ).reshape(count, dim).copy()
        tokens = None
        if flags & FLAG_TOKENS:
            tokens = []
            for _ in range(count):
                (n,) = struct.unpack("<I", _read_exact(fh, 4, path))
                mat = np.frombuffer(
                    _read_exact(fh, n * token_dim * 4, path), dtype="<f4"
                ).reshape(n, token_dim).copy()
                tokens.append(mat)
        if fh.read(1):
            raise TruncatedPayload(f"{path}: trailing bytes after payload")
    store = EmbeddingStore(vecs, tokens)
    store.validate()
    return store


# ---------------------------------------------------------------------------
# jsonl manifests and pairs


def write_manifest(manifest: Manifest, path) -> None:
    manifest.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for row in manifest.rows:
            fh.write(json.dumps({
                "id": row.id,
                "external_id": row.external_id,
                "role": row.role,
                "text": row.text,
            }) + "\n")


def read_manifest(path) -> Manifest:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            rows.append(ManifestRow(
                id=obj["id"],
                external_id=obj["external_id"],
                role=obj["role"],
                text=obj.get("text", ""),
            ))
    manifest = Manifest(rows)
    manifest.validate()
    return manifest


def write_pairs(pairs: PairDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs.pairs:
            fh.write(json.dumps({
                "query_id": p.query_id,
                "context_id": p.context_id,
                "split": p.split,
            }) + "\n")


def read_pairs(path) -> PairDataset:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj["split"] not in ("train", "val", "test"):
                raise ValueError(f"bad split {obj['split']!r}")
            pairs.append(Pair(obj["query_id"], obj["context_id"], obj["split"]))
    return PairDataset(pairs)


# ---------------------------------------------------------------------------
# batching


def make_batches(
    pairs: PairDataset, split: str, batch_size: int, seed: int
) -> list[list[tuple[int, int]]]:
    """One epoch of shuffled (query_id, context_id) batches.

    The epoch is a seeded permutation of the split; the final short batch is
    dropped so every batch carries the same number of in-batch negatives.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2 for in-batch negatives")
    subset = pairs.split_pairs(split)
    if not subset:
        raise EmptySplit(f"no pairs in split {split!r}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subset))
    batches = []
    for start in range(0, len(subset) - batch_size + 1, batch_size):
        idx = order[start:start + batch_size]
        batches.append([(subset[i].query_id, subset[i].context_id) for i in idx])
    return batches
