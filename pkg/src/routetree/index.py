"""Level indexes over context assignments: exact top-k search and metrics."""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    BadMagic,
    LevelOutOfRange,
    MetricMismatch,
    MissingGt,
    TruncatedPayload,
    UnsupportedVersion,
)
from .io import FLAG_INDEX, MAGIC, VERSION, _HEADER, EmbeddingStore
from .model import TreeModel

METRICS = ("ntvd", "cosine")


@dataclass
class LevelIndex:
    level: int
    metric: str
    ids: np.ndarray        # (N,) int64 context ids
    rows: np.ndarray       # (N, width) float32

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ValueError("duplicate context ids in index")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]


@dataclass
class RankedResult:
    ids: np.ndarray
    scores: np.ndarray

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.scores.tolist()))


def build_index(model: TreeModel, store: EmbeddingStore, level: int,
                metric: str = "ntvd") -> LevelIndex:
    """Route every context through the tree and keep its level-h assignment."""
    if not 0 <= level <= model.topology.depth:
        raise LevelOutOfRange(
            f"level {level} outside 0..{model.topology.depth}")
    rows = model.assignments(store, range(store.count), level)
    return LevelIndex(level, metric, np.arange(store.count), rows)


def rank_scores(scores: np.ndarray, ids: np.ndarray, k: int) -> RankedResult:
    """Top-k by descending score; ties broken by ascending context id."""
    k = min(k, len(ids))
    # lexsort is stable: last key dominates, so order by -score then id
    order = np.lexsort((ids, -scores))[:k]
    return RankedResult(ids[order], scores[order])


def search(index: LevelIndex, query: np.ndarray, k: int,
           metric: str | None = None) -> RankedResult:
    """Exact exhaustive top-k against every indexed row."""
    if metric is not None and metric != index.metric:
        raise MetricMismatch(f"index metric {index.metric}, asked {metric}")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.width,):
        raise MetricMismatch(
            f"query width {q.shape} != index width {index.width}")
    if index.metric == "ntvd":
        scores = kernels.ntvd_scores(index.rows, q)
    else:
        rows = index.rows.astype(np.float64)
        norms = np.linalg.norm(rows, axis=1) * max(np.linalg.norm(q), 1e-30)
        norms = np.where(norms == 0, 1e-30, norms)
        scores = rows @ q / norms
    return rank_scores(scores, index.ids, k)


def brute_force_search(index: LevelIndex, query: np.ndarray,
                       k: int) -> RankedResult:
    """Independent quadratic re-implementation; oracle for search()."""
    q = np.asarray(query, dtype=np.float64)
    scores = np.empty(index.count)
    for i in range(index.count):
        row = index.rows[i].astype(np.float64)
        if index.metric == "ntvd":
            s = 0.0
            for a, b in zip(row, q):
                s += abs(a - b)
            scores[i] = -0.5 * s
        else:
            num = float(row @ q)
            den = float(np.sqrt((row**2).sum()) * np.sqrt((q**2).sum()))
            scores[i] = num / den if den > 0 else 0.0
    pairs = sorted(zip(index.ids.tolist(), scores.tolist()),
                   key=lambda t: (-t[1], t[0]))[:min(k, index.count)]
    return RankedResult(np.array([p[0] for p in pairs], dtype=np.int64),
                        np.array([p[1] for p in pairs]))


# ---------------------------------------------------------------------------
# retrieval metrics (binary relevance, one ground-truth context per query)


def recall_at_k(results: dict[int, RankedResult],
                ground_truth: dict[int, int], k: int) -> float:
    if not results:
        raise MissingGt("no queries")
    hits = 0
    for qid, res in results.items():
        if qid not in ground_truth:
            raise MissingGt(f"query {qid} has no ground truth")
        if ground_truth[qid] in res.ids[:k]:
            hits += 1
    return hits / len(results)


def ndcg_at_k(results: dict[int, RankedResult],
              ground_truth: dict[int, int], k: int) -> float:
    if not results:
        raise MissingGt("no queries")
    total = 0.0
    for qid, res in results.items():
        if qid not in ground_truth:
            raise MissingGt(f"query {qid} has no ground truth")
        top = res.ids[:k].tolist()
        if ground_truth[qid] in top:
            rank = top.index(ground_truth[qid]) + 1
            total += 1.0 / np.log2(rank + 1)
    return total / len(results)


def measure_latency(index: LevelIndex, queries: np.ndarray, k: int,
                    repetitions: int = 3) -> dict:
    """Wall-clock per-query search time; one discarded warmup pass."""
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    queries = np.asarray(queries, dtype=np.float64)
    if queries.size == 0:
        return {"mean_ms": 0.0, "p50_ms": 0.0, "p95_ms": 0.0, "queries": 0}
    for q in queries[: min(2, len(queries))]:
        search(index, q, k)
    times = []
    for _ in range(repetitions):
        for q in queries:
            t0 = time.perf_counter()
            search(index, q, k)
            times.append((time.perf_counter() - t0) * 1e3)
    times = np.asarray(times)
    return {
        "mean_ms": float(times.mean()),
        "p50_ms": float(np.percentile(times, 50)),
        "p95_ms": float(np.percentile(times, 95)),
        "queries": int(len(queries)),
    }


# ---------------------------------------------------------------------------
# persistence: embedding-io binary layout with the index extension (bit1)

_EXT = struct.Struct("<IB3x")


def save_index(index: LevelIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, 0, FLAG_INDEX, 0,
                              index.count, index.width, 0))
        fh.write(_EXT.pack(index.level, METRICS.index(index.metric)))
        fh.write(np.ascontiguousarray(index.ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(index.rows, dtype="<f4").tobytes())


def load_index(path) -> LevelIndex:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise TruncatedPayload(f"{path}: header truncated")
        magic, version, dtype, flags, _, count, dim, _td = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise BadMagic(f"{path}: magic {magic!r}")
        if version != VERSION or dtype != 0:
            raise UnsupportedVersion(f"{path}: version {version}")
        if not flags & FLAG_INDEX:
            raise UnsupportedVersion(f"{path}: not an index file")
        ext = fh.read(_EXT.size)
        if len(ext) < _EXT.size:
            raise TruncatedPayload(f"{path}: extension truncated")
        level, metric_code = _EXT.unpack(ext)
        ids = np.frombuffer(fh.read(count * 8), dtype="<i8")
        if ids.size != count:
            raise TruncatedPayload(f"{path}: ids truncated")
        rows = np.frombuffer(fh.read(count * dim * 4), dtype="<f4")
        if rows.size != count * dim:
            raise TruncatedPayload(f"{path}: rows truncated")
    return LevelIndex(level, METRICS[metric_code], ids.copy(),
                      rows.reshape(count, dim).copy())


def write_results_jsonl(results: dict[int, RankedResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(results):
            fh.write(json.dumps({
                "query_id": qid,
                "ranked": [{"id": i, "score": s} for i, s in results[qid]],
            }) + "\n")


def evaluate(index: LevelIndex, query_rows: np.ndarray, query_ids,
             ground_truth: dict[int, int], ks=(1, 10, 100)) -> dict:
    """Search every query and report recall/ndcg at each cutoff."""
    kmax = max(ks)
    results = {}
    for qid, row in zip(query_ids, query_rows):
        results[qid] = search(index, row, kmax)
    report = {
        "recall": {str(k): recall_at_k(results, ground_truth, k) for k in ks},
        "ndcg": {str(k): ndcg_at_k(results, ground_truth, k) for k in ks},
    }
    return report, results
