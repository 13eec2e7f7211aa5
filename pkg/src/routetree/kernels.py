"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Set ROUTETREE_NO_NUMBA=1 to force the numpy path (useful for debugging and
for the benchmark in benchmarks/bench_kernels.py). The active path is
reported by BACKEND.
"""

from __future__ import annotations

import os

import numpy as np

_want_numba = os.environ.get("ROUTETREE_NO_NUMBA", "0") != "1"

if _want_numba:
    try:
        from numba import njit, prange

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False
else:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure-numpy reference implementations


def _ntvd_matrix_np(a, b):
    # (n, d) x (m, d) -> (n, m); memory O(n*m*d), fine at batch scale
    diff = np.abs(a[:, None, :] - b[None, :, :])
    return -0.5 * diff.sum(axis=2)


def _ntvd_matrix_grads_np(a, b, g):
    sign = np.sign(a[:, None, :] - b[None, :, :])
    da = (-0.5) * np.einsum("nm,nml->nl", g, sign)
    db = 0.5 * np.einsum("nm,nml->ml", g, sign)
    return da, db


def _ntvd_scores_np(rows, q):
    return -0.5 * np.abs(rows - q[None, :]).sum(axis=1)


# ---------------------------------------------------------------------------
# numba fast paths

if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _ntvd_matrix_nb(a, b):
        n, d = a.shape
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in prange(n):
            for j in range(m):
                acc = 0.0
                for l in range(d):
                    acc += abs(a[i, l] - b[j, l])
                out[i, j] = -0.5 * acc
        return out

    @njit(cache=True, parallel=True)
    def _ntvd_matrix_grads_nb(a, b, g):
        n, d = a.shape
        m = b.shape[0]
        da = np.zeros((n, d), dtype=np.float64)
        db = np.zeros((m, d), dtype=np.float64)
        for i in prange(n):
            for j in range(m):
                gij = g[i, j]
                for l in range(d):
                    diff = a[i, l] - b[j, l]
                    if diff > 0.0:
                        s = 1.0
                    elif diff < 0.0:
                        s = -1.0
                    else:
                        s = 0.0
                    da[i, l] += -0.5 * gij * s
        for j in prange(m):
            for i in range(n):
                gij = g[i, j]
                for l in range(d):
                    diff = a[i, l] - b[j, l]
                    if diff > 0.0:
                        s = 1.0
                    elif diff < 0.0:
                        s = -1.0
                    else:
                        s = 0.0
                    db[j, l] += 0.5 * gij * s
        return da, db

    @njit(cache=True, parallel=True)
    def _ntvd_scores_nb(rows, q):
        n, d = rows.shape
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            acc = 0.0
            for l in range(d):
                acc += abs(rows[i, l] - q[l])
            out[i] = -0.5 * acc
        return out


def ntvd_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise negative total-variation distance, -0.5 * sum |a_i - b_j|."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if HAS_NUMBA:
        return _ntvd_matrix_nb(a, b)
    return _ntvd_matrix_np(a, b)


def ntvd_matrix_grads(a, b, g):
    """Gradients of sum(g * ntvd_matrix(a, b)) w.r.t. a and b."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if HAS_NUMBA:
        return _ntvd_matrix_grads_nb(a, b, g)
    return _ntvd_matrix_grads_np(a, b, g)


def ntvd_scores(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """nTVD of one query distribution against every indexed row."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if HAS_NUMBA:
        return _ntvd_scores_nb(rows, q)
    return _ntvd_scores_np(rows, q)


def warmup() -> None:
    """Trigger JIT compilation so timing runs exclude compile cost."""
    a = np.random.rand(2, 3)
    b = np.random.rand(2, 3)
    ntvd_matrix(a, b)
    ntvd_matrix_grads(a, b, np.ones((2, 2)))
    ntvd_scores(a, b[0])
