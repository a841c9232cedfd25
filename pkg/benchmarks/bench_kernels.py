"""Benchmark the numba-compiled kernels against the plain numpy path.

Run: python benchmarks/bench_kernels.py [--lcs-len 300] [--assign-n 64]
Both paths execute the same function bodies; the numba path is the
@njit-compiled copy (compilation happens outside the timed region).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ie_forge.kernels import _assignment_impl, _lcs_length_impl

try:
    from numba import njit
except ImportError:
    njit = None


def timeit(fn, args_list, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for args in args_list:
            fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--lcs-len", type=int, default=300)
    parser.add_argument("--lcs-cases", type=int, default=40)
    parser.add_argument("--assign-n", type=int, default=64)
    parser.add_argument("--assign-cases", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(7)
    lcs_cases = [
        (
            rng.integers(0, 50, size=args.lcs_len).astype(np.int64),
            rng.integers(0, 50, size=args.lcs_len).astype(np.int64),
        )
        for _ in range(args.lcs_cases)
    ]
    assign_cases = [
        (rng.random((args.assign_n, args.assign_n)),) for _ in range(args.assign_cases)
    ]

    rows = []
    for name, plain, cases in (
        (f"lcs_length ({args.lcs_cases}x len {args.lcs_len})", _lcs_length_impl, lcs_cases),
        (f"assignment ({args.assign_cases}x {args.assign_n}^2)", _assignment_impl, assign_cases),
    ):
        t_plain = timeit(plain, cases)
        if njit is None:
            rows.append((name, t_plain, None))
            continue
        jitted = njit(cache=True)(plain)
        jitted(*cases[0])  # compile outside the timed region
        t_jit = timeit(jitted, cases)
        rows.append((name, t_plain, t_jit))

    print(f"{'kernel':<34} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, t_plain, t_jit in rows:
        if t_jit is None:
            print(f"{name:<34} {t_plain:>9.3f}s {'n/a':>10} {'n/a':>9}")
        else:
            print(
                f"{name:<34} {t_plain:>9.3f}s {t_jit:>9.3f}s {t_plain / t_jit:>8.1f}x"
            )


if __name__ == "__main__":
    main()
