"""Hot numeric kernels: LCS length and maximum-weight assignment.

Both kernels are compiled with numba when it is importable; set
IE_FORGE_NO_NUMBA=1 to force the plain numpy path (same function bodies,
uncompiled). ``KERNEL_BACKEND`` reports which path is active, and
``benchmarks/bench_kernels.py`` compares the two.
"""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np

_DISABLE_VALUES = {"1", "true", "yes", "on"}


def numba_requested() -> bool:
    return os.environ.get("IE_FORGE_NO_NUMBA", "").strip().lower() not in _DISABLE_VALUES


def _lcs_length_impl(a, b):
    """Length of the longest common subsequence of two int64 arrays.

    Rolling two-row dynamic program, O(len(a) * len(b)) time, O(len(b)) space.
    """
    n = a.shape[0]
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                up = prev[j + 1]
                left = cur[j]
                cur[j + 1] = up if up >= left else left
        prev, cur = cur, prev
    return prev[m]


def _assignment_impl(weights):
    """Column assignment maximizing total weight, for n_rows <= n_cols.

    Potential-based shortest-augmenting-path method on cost = -weight,
    O(n^2 * m). Returns an int64 array mapping each row to its column.
    Matching every row of the smaller side is equivalent to padding the
    matrix square with zero-weight dummy rows/columns.
    """
    n = weights.shape[0]
    m = weights.shape[1]
    u = np.zeros(n + 1, dtype=np.float64)
    v = np.zeros(m + 1, dtype=np.float64)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf, dtype=np.float64)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = -weights[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            row_to_col[p[j] - 1] = j - 1
    return row_to_col


if numba_requested():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None
    if njit is not None:
        lcs_length = njit(cache=True)(_lcs_length_impl)
        assignment_columns = njit(cache=True)(_assignment_impl)
        KERNEL_BACKEND = "numba"
    else:  # pragma: no cover
        lcs_length = _lcs_length_impl
        assignment_columns = _assignment_impl
        KERNEL_BACKEND = "numpy"
else:
    lcs_length = _lcs_length_impl
    assignment_columns = _assignment_impl
    KERNEL_BACKEND = "numpy"


def lcs_tokens(a: Sequence[str], b: Sequence[str]) -> int:
    """LCS length over two token sequences."""
    if not a or not b:
        return 0
    vocab: dict[str, int] = {}

    def encode(tokens: Sequence[str]) -> np.ndarray:
        return np.array(
            [vocab.setdefault(t, len(vocab)) for t in tokens], dtype=np.int64
        )

    return int(lcs_length(encode(a), encode(b)))


def max_weight_assignment(
    weights: np.ndarray,
) -> tuple[float, list[tuple[int, int]]]:
    """Optimal one-to-one assignment maximizing total weight.

    Accepts a rectangular matrix; min(n_rows, n_cols) pairs are returned,
    sorted by row index, together with their total weight. Equivalent to
    brute-force maximization over all injective row-to-column mappings of
    the smaller side.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weights must be a 2-D matrix")
    if w.shape[0] == 0 or w.shape[1] == 0:
        return 0.0, []
    transposed = w.shape[0] > w.shape[1]
    if transposed:
        w = np.ascontiguousarray(w.T)
    cols = assignment_columns(w)
    if transposed:
        pairs = [(int(c), r) for r, c in enumerate(cols)]
    else:
        pairs = [(r, int(c)) for r, c in enumerate(cols)]
    pairs.sort()
    value = float(sum(weights[r, c] for r, c in pairs))
    return value, pairs
