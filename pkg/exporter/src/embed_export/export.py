"""Run an export job: corpus JSONL in, embedding-io files out.

The corpus is JSON lines of {"query": str, "context": str, "split": str}.
Outputs in the target directory:

* queries.rtrv / contexts.rtrv -- binary embedding stores
* manifest.jsonl               -- ids, external ids, roles, raw text
* pairs.jsonl                  -- query/context id pairs with splits
* meta.json                    -- encoder name, pooling, dims, max length
* checksums.sha256             -- one line per emitted file
* warnings.jsonl               -- truncation and other per-item warnings
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from routetree.io import (
    EmbeddingStore,
    Manifest,
    ManifestRow,
    Pair,
    PairDataset,
    write_manifest,
    write_pairs,
    write_store,
)

from .encoders import load_encoder

_SPLITS = ("train", "val", "test")


class CorpusParseError(Exception):
    """The input corpus does not parse as query/context/split JSON lines."""


@dataclass
class ExportJob:
    encoder: str
    corpus: str
    out_dir: str
    with_tokens: bool = False
    max_len: int = 512
    normalize: bool = False
    batch_size: int = 32

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def _read_corpus(path: str) -> list[dict]:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusParseError(
                        f"{path}:{lineno}: {exc}") from exc
                for key in ("query", "context", "split"):
                    if key not in obj:
                        raise CorpusParseError(
                            f"{path}:{lineno}: missing key {key!r}")
                if obj["split"] not in _SPLITS:
                    raise CorpusParseError(
                        f"{path}:{lineno}: bad split {obj['split']!r}")
                rows.append(obj)
    except OSError as exc:
        raise CorpusParseError(f"cannot read corpus {path}: {exc}") from exc
    if not rows:
        raise CorpusParseError(f"{path}: empty corpus")
    return rows


def _checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def export(job: ExportJob) -> dict:
    """Encode the corpus and write every artifact; returns a summary."""
    encoder = load_encoder(job.encoder)
    rows = _read_corpus(job.corpus)
    os.makedirs(job.out_dir, exist_ok=True)
    warnings = []

    def encode_side(texts, role):
        vectors = np.empty((len(texts), encoder.dim), dtype=np.float32)
        tokens = [] if job.with_tokens else None
        for i, text in enumerate(texts):
            vec, matrix, truncated = encoder.encode(text, job.max_len)
            if job.normalize:
                vec = vec / max(float(np.linalg.norm(vec)), 1e-30)
            vectors[i] = vec
            if tokens is not None:
                tokens.append(matrix)
            if truncated:
                warnings.append({"role": role, "id": i,
                                 "warning": f"truncated to {job.max_len} tokens"})
        return EmbeddingStore(vectors, tokens)

    query_store = encode_side([r["query"] for r in rows], "query")
    context_store = encode_side([r["context"] for r in rows], "context")

    manifest = Manifest([
        ManifestRow(i, f"ctx-{i}", "context", r["context"])
        for i, r in enumerate(rows)
    ])
    pairs = PairDataset([Pair(i, i, r["split"])
                         for i, r in enumerate(rows)])

    paths = {
        "queries": os.path.join(job.out_dir, "queries.rtrv"),
        "contexts": os.path.join(job.out_dir, "contexts.rtrv"),
        "manifest": os.path.join(job.out_dir, "manifest.jsonl"),
        "pairs": os.path.join(job.out_dir, "pairs.jsonl"),
        "meta": os.path.join(job.out_dir, "meta.json"),
    }
    write_store(query_store, paths["queries"])
    write_store(context_store, paths["contexts"])
    write_manifest(manifest, paths["manifest"])
    write_pairs(pairs, paths["pairs"])
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump({
            "encoder": encoder.name,
            "pooling": encoder.pooling,
            "dim": encoder.dim,
            "max_len": job.max_len,
            "normalized": job.normalize,
            "count": len(rows),
            "with_tokens": job.with_tokens,
        }, fh, indent=2)

    with open(os.path.join(job.out_dir, "warnings.jsonl"), "w",
              encoding="utf-8") as fh:
        for w in warnings:
            fh.write(json.dumps(w) + "\n")

    with open(os.path.join(job.out_dir, "checksums.sha256"), "w",
              encoding="utf-8") as fh:
        for name in sorted(paths):
            fh.write(f"{_checksum(paths[name])}  {os.path.basename(paths[name])}\n")

    return {"count": len(rows), "dim": encoder.dim,
            "warnings": len(warnings), "out_dir": job.out_dir}
