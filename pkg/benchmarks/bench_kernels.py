"""Benchmark the compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from riskrank import kernels
from riskrank.kernels import _purepy


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_knn(impl, n_query, n_train, C, k, repeat):
    rng = np.random.Generator(np.random.PCG64(0))
    sims = rng.normal(size=(n_query, n_train))
    labels = rng.integers(C, size=n_train).astype(np.int64)
    rank = rng.permutation(n_train).astype(np.int64)
    exclude = np.full(n_query, -1, dtype=np.int64)
    return timeit(lambda: impl.knn_class_counts(sims, labels, rank, exclude, k, C),
                  repeat)


def bench_vote(impl, n, C, repeat):
    rng = np.random.Generator(np.random.PCG64(1))
    gamma = rng.random((n, C))
    return timeit(lambda: impl.vote_wins(gamma), repeat)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    native = getattr(kernels, "_native", None)
    impls = [("purepy", _purepy)]
    if native is not None:
        impls.append(("native", native))
    else:
        print("compiled backend not built; benchmarking fallback only")

    print("%-28s" % "kernel" + "".join("%12s" % name for name, _ in impls)
          + ("%10s" % "speedup" if native is not None else ""))
    cases = [
        ("knn k=7 2800x2000 C=7",
         lambda impl: bench_knn(impl, 2800, 2000, 7, 7, args.repeat)),
        ("knn k=5 500x2000 C=7",
         lambda impl: bench_knn(impl, 500, 2000, 7, 5, args.repeat)),
        ("vote_wins n=500 C=7",
         lambda impl: bench_vote(impl, 500, 7, args.repeat)),
        ("vote_wins n=2000 C=7",
         lambda impl: bench_vote(impl, 2000, 7, args.repeat)),
    ]
    for label, runner in cases:
        times = [runner(impl) for _, impl in impls]
        row = "%-28s" % label + "".join("%10.1fms" % (t * 1e3) for t in times)
        if len(times) == 2:
            row += "%9.1fx" % (times[0] / times[1])
        print(row)

    # cross-check: both backends must agree bit-for-bit
    if native is not None:
        rng = np.random.Generator(np.random.PCG64(2))
        sims = np.round(rng.normal(size=(64, 128)), 1)
        labels = rng.integers(5, size=128).astype(np.int64)
        rank = rng.permutation(128).astype(np.int64)
        exclude = rng.integers(-1, 128, size=64).astype(np.int64)
        a = native.knn_class_counts(sims, labels, rank, exclude, 7, 5)
        b = _purepy.knn_class_counts(sims, labels, rank, exclude, 7, 5)
        gamma = np.round(rng.random((100, 5)), 1)
        assert np.array_equal(a, b)
        assert np.array_equal(native.vote_wins(gamma), _purepy.vote_wins(gamma))
        print("parity check: backends agree")


if __name__ == "__main__":
    main()
