"""Time the numba kernels against their numpy counterparts.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Compilation is
triggered once before timing, so the numba figures exclude JIT cost.
"""

import argparse
import time

import numpy as np

from drdb import _kernels
from drdb.nuisance import LAMBDA_GRID, _design, _penalty_mask


def _workload(n, p, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    design = _design(x, "linear")
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-x[:, 0]))).astype(np.float64)
    y = design @ rng.standard_normal(p + 1) + rng.standard_normal(n)
    penalty = np.r_[1e-4, np.ones(p)]
    folds = np.arange(n) % 5
    return design, labels, y, penalty, folds


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--n", type=int, default=800)
    parser.add_argument("--p", type=int, default=10)
    args = parser.parse_args(argv)
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    design, labels, y, penalty, folds = _workload(args.n, args.p)
    mask = _penalty_mask(design.shape[1])
    values = y.copy()
    cases = {
        "mean_and_ssd": lambda k: k(values),
        "logistic_newton": lambda k: k(design, labels, penalty, 1e-8, 100),
        "ridge_cv_errors": lambda k: k(design, y, mask, LAMBDA_GRID, folds, 5),
    }
    print(f"n={args.n} p={args.p} repeat={args.repeat} (best time, ms)")
    print(f"{'kernel':<18}{'numpy':>10}{'numba':>10}{'speedup':>10}")
    for name, call in cases.items():
        np_fn = getattr(_kernels, f"{name}_np")
        nb_fn = getattr(_kernels, f"{name}_nb")
        call(nb_fn)  # compile
        t_np = _best_of(lambda: call(np_fn), args.repeat)
        t_nb = _best_of(lambda: call(nb_fn), args.repeat)
        print(f"{name:<18}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
