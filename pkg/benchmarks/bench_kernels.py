"""Benchmark the numba fast path against the pure-numpy fallback.

Run with: python3 benchmarks/bench_kernels.py [--sizes 64,256,1024]
The numpy reference is always available; the numba path is skipped when
ROUTETREE_NO_NUMBA=1 or numba is not installed.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from routetree import kernels


def bench(fn, *args, repeats=5):
    fn(*args)  # warmup / JIT
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="64,256,1024",
                        help="comma-separated batch sizes")
    parser.add_argument("--dim", type=int, default=1024)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"active backend: {kernels.BACKEND}")
    rng = np.random.default_rng(0)
    header = f'{"op":<18} {"n":>6} {"numpy ms":>10}'
    if kernels.HAS_NUMBA:
        header += f' {"numba ms":>10} {"speedup":>8}'
    print(header)
    for n in sizes:
        a = rng.dirichlet(np.ones(args.dim), size=n)
        b = rng.dirichlet(np.ones(args.dim), size=n)
        g = rng.normal(size=(n, n))
        cases = [
            ("ntvd_matrix", kernels._ntvd_matrix_np, (a, b)),
            ("ntvd_matrix_grads", kernels._ntvd_matrix_grads_np, (a, b, g)),
            ("ntvd_scores", kernels._ntvd_scores_np, (a, b[0])),
        ]
        for name, np_fn, fargs in cases:
            t_np = bench(np_fn, *fargs)
            line = f"{name:<18} {n:>6} {t_np:>10.3f}"
            if kernels.HAS_NUMBA:
                nb_fn = {
                    "ntvd_matrix": kernels._ntvd_matrix_nb,
                    "ntvd_matrix_grads": kernels._ntvd_matrix_grads_nb,
                    "ntvd_scores": kernels._ntvd_scores_nb,
                }[name]
                t_nb = bench(nb_fn, *fargs)
                line += f" {t_nb:>10.3f} {t_np / t_nb:>7.1f}x"
            print(line)


if __name__ == "__main__":
    main()
