"""Maximum-similarity rectangular assignment with deterministic ties.

Thin wrapper over a standard O(n^3) assignment kernel (costs negated for
maximization). Degenerate matrices with many equally good assignments are
common with short answer texts, so among optimal assignments the
lexicographically smallest pair set is selected. The tie-break refinement
is quadratic in solver calls; past ``_REFINE_LIMIT`` matched pairs it is
skipped and the kernel's own (deterministic) optimum is returned sorted,
which keeps adversarially long answer lists from stalling a batch run.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

_FEASIBLE_RTOL = 1e-9
_REFINE_LIMIT = 12


def _as_matrix(sim) -> np.ndarray:
    m = np.asarray(sim, dtype=np.float64)
    if m.ndim == 1:
        # An empty python list arrives as shape (0,); treat as 0x0.
        if m.size == 0:
            return m.reshape(0, 0)
        raise ValueError("similarity matrix must be two-dimensional")
    if m.ndim != 2:
        raise ValueError("similarity matrix must be two-dimensional")
    return m


def _max_total(m: np.ndarray) -> float:
    if m.shape[0] == 0 or m.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(-m)
    return float(m[rows, cols].sum())


def hungarian_max(sim) -> list[tuple[int, int]]:
    """Row/column pairs of a maximum-similarity assignment.

    Returns min(r, t) pairs sorted by (row, col); the empty matrix yields
    an empty list. Among equal-total optima the lexicographically
    smallest sorted pair list is returned, so repeated calls and
    platforms agree on degenerate inputs.
    """
    m = _as_matrix(sim)
    r, t = m.shape
    if r == 0 or t == 0:
        return []
    if not np.all(np.isfinite(m)):
        raise ValueError("similarity matrix contains non-finite entries")

    size = min(r, t)
    if size > _REFINE_LIMIT:
        rows, cols = linear_sum_assignment(-m)
        return sorted(zip(rows.tolist(), cols.tolist()))

    best_total = _max_total(m)
    tolerance = _FEASIBLE_RTOL * max(1.0, abs(best_total))
    chosen: list[tuple[int, int]] = []
    used_rows = np.zeros(r, dtype=bool)
    used_cols = np.zeros(t, dtype=bool)
    fixed_total = 0.0

    for _ in range(size):
        placed = False
        for i in range(r):
            if used_rows[i]:
                continue
            for j in range(t):
                if used_cols[j]:
                    continue
                rest_rows = ~used_rows
                rest_rows[i] = False
                rest_cols = ~used_cols
                rest_cols[j] = False
                remainder = _max_total(m[np.ix_(rest_rows, rest_cols)])
                if fixed_total + m[i, j] + remainder >= best_total - tolerance:
                    chosen.append((i, j))
                    used_rows[i] = True
                    used_cols[j] = True
                    fixed_total += m[i, j]
                    placed = True
                    break
            if placed:
                break
        if not placed:  # pragma: no cover - optimal completion always exists
            raise RuntimeError("assignment refinement failed to place a pair")
    return chosen


def matching_matrix(pairs, r: int, t: int) -> np.ndarray:
    """Binary r x t matrix with ones at the matched pairs."""
    grid = np.zeros((r, t), dtype=np.int64)
    for i, j in pairs:
        if not (0 <= i < r and 0 <= j < t):
            raise ValueError(f"pair ({i}, {j}) out of bounds for {r}x{t}")
        grid[i, j] = 1
    if (grid.sum(axis=0) > 1).any() or (grid.sum(axis=1) > 1).any():
        raise ValueError("pairs reuse a row or column")
    return grid
