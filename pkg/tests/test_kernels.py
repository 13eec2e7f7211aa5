import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from routetree import kernels
from routetree.kernels import (
    _ntvd_matrix_grads_np,
    _ntvd_matrix_np,
    _ntvd_scores_np,
    ntvd_matrix,
    ntvd_matrix_grads,
    ntvd_scores,
    warmup,
)


def test_backend_reported():
    assert kernels.BACKEND in ("numba", "numpy")
    warmup()


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, ROUTETREE_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c",
         "from routetree import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_matrix_against_definition(rng):
    a = rng.dirichlet(np.ones(6), size=4)
    b = rng.dirichlet(np.ones(6), size=5)
    got = ntvd_matrix(a, b)
    for i in range(4):
        for j in range(5):
            expected = -0.5 * np.abs(a[i] - b[j]).sum()
            assert got[i, j] == pytest_approx(expected)


def pytest_approx(x, tol=1e-12):
    import pytest

    return pytest.approx(x, abs=tol)


def test_active_path_matches_numpy_reference(rng):
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(4, 5))
    g = rng.normal(size=(7, 4))
    np.testing.assert_allclose(ntvd_matrix(a, b), _ntvd_matrix_np(a, b),
                               atol=1e-12)
    da, db = ntvd_matrix_grads(a, b, g)
    ra, rb = _ntvd_matrix_grads_np(a, b, g)
    np.testing.assert_allclose(da, ra, atol=1e-12)
    np.testing.assert_allclose(db, rb, atol=1e-12)
    np.testing.assert_allclose(ntvd_scores(a, b[0]), _ntvd_scores_np(a, b[0]),
                               atol=1e-12)


def test_grads_against_finite_differences(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(2, 4))
    g = rng.normal(size=(3, 2))
    da, db = ntvd_matrix_grads(a, b, g)
    eps = 1e-6
    for arr, grad in ((a, da), (b, db)):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = (g * ntvd_matrix(a, b)).sum()
            flat[i] = orig - eps
            fm = (g * ntvd_matrix(a, b)).sum()
            flat[i] = orig
            assert gflat[i] == pytest_approx((fp - fm) / (2 * eps), 1e-6)


def test_scores_match_matrix_row(rng):
    rows = rng.dirichlet(np.ones(8), size=10)
    q = rng.dirichlet(np.ones(8))
    np.testing.assert_allclose(ntvd_scores(rows, q),
                               ntvd_matrix(q[None], rows)[0], atol=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_similarity_bounds_on_distributions(seed):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(5), size=3)
    b = rng.dirichlet(np.ones(5), size=3)
    sims = ntvd_matrix(a, b)
    assert np.all(sims <= 1e-12)
    assert np.all(sims >= -1.0 - 1e-12)
    np.testing.assert_allclose(np.diag(ntvd_matrix(a, a)), 0.0, atol=1e-12)
