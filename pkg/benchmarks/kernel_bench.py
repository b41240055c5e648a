#!/usr/bin/env python3
"""Benchmark the hot kernels: numba-compiled vs pure-numpy implementations.

Usage:
    python3 benchmarks/kernel_bench.py [--repeats 200]

Runs each kernel at several batch sizes on both backends, reports the mean
wall time per call and the maximum absolute deviation between the two
implementations. Compilation happens during warmup and is excluded.
"""

import argparse
import time

import numpy as np

from marginforge import kernels
from marginforge.seeding import named_rng


def bench(fn, args, repeats):
    fn(*args)  # warmup (and JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        out = fn(*args)
    elapsed = (time.perf_counter() - start) / repeats
    return elapsed, out


def max_dev(a, b):
    if isinstance(a, tuple):
        return max(max_dev(x, y) for x, y in zip(a, b))
    if a.dtype.kind == "i":
        return float(np.max(np.abs(a - b)))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def make_case(rng, b, dim=32, levels=5):
    X = rng.standard_normal((b, dim))
    Y = rng.standard_normal((b, dim))
    S = kernels._pairwise_cosine_np(X, Y)
    M = np.concatenate([np.full((1, b, b), 0.05), rng.uniform(-0.1, 0.2, size=(levels - 1, b, b))])
    w = np.array([1.0, 0.3, 0.3, 0.7, 0.7])
    dS = rng.standard_normal((b, b))
    return X, Y, S, M, w, dS


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if not kernels.NUMBA_AVAILABLE:
        print("numba backend unavailable (disabled or not installed); nothing to compare")
        print("re-run with MARGINFORGE_NUMBA=auto and numba installed")
        return

    rng = named_rng(0, "bench")
    print(f"{'kernel':<18} {'B':>4} {'numpy us':>10} {'numba us':>10} {'speedup':>8} {'max dev':>10}")
    for b in (16, 64, 256):
        X, Y, S, M, w, dS = make_case(rng, b)
        cases = [
            ("pairwise_cosine", kernels._pairwise_cosine_np, kernels._pairwise_cosine_nb, (X, Y)),
            (
                "triplet_terms",
                kernels._triplet_terms_np,
                kernels._triplet_terms_nb,
                (S, M, w, False, False),
            ),
            (
                "cosine_backward",
                kernels._cosine_backward_np,
                kernels._cosine_backward_nb,
                (dS, X, Y, S),
            ),
        ]
        for name, f_np, f_nb, fargs in cases:
            t_np, out_np = bench(f_np, fargs, args.repeats)
            t_nb, out_nb = bench(f_nb, fargs, args.repeats)
            dev = max_dev(out_np, out_nb)
            print(
                f"{name:<18} {b:>4} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} "
                f"{t_np / t_nb:>7.1f}x {dev:>10.2e}"
            )


if __name__ == "__main__":
    main()
