"""Dense revised simplex for small equality-form linear programs.

    minimise  c @ x   subject to  A @ x = b,  x >= 0

Intended for problems with few rows and a few thousand columns, the shape of
the occupation-measure LP. Dantzig pricing is used throughout; if a basis
repeats during a run of degenerate pivots (cycling), Bland's rule takes over
until the objective moves again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LPError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    basis: np.ndarray
    duals: np.ndarray
    iterations: int


def _iterate(A, b, c, basis, max_iter):
    """Run primal simplex from a feasible basis; returns (basis, x_B, duals, iterations)."""
    m = A.shape[0]
    it = 0
    seen = set()
    bland = False
    while True:
        B = A[:, basis]
        xb = np.linalg.solve(B, b)
        y = np.linalg.solve(B.T, c[basis])
        reduced = c - A.T @ y
        reduced[basis] = 0.0
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        if candidates.size == 0:
            return basis, xb, y, it
        if it >= max_iter:
            raise LPError(f"simplex iteration limit {max_iter} reached")
        if bland:
            enter = int(candidates[0])
        else:
            enter = int(candidates[np.argmin(reduced[candidates])])
        d = np.linalg.solve(B, A[:, enter])
        pos = d > PIVOT_TOL
        if not np.any(pos):
            raise LPError("linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xb[pos], 0.0) / d[pos]
        step = ratios.min()
        ties = np.flatnonzero(ratios <= step + 1e-12)
        # smallest basic index among ties keeps Bland's rule cycle-free
        leave = int(ties[np.argmin(basis[ties])])
        basis = basis.copy()
        basis[leave] = enter
        it += 1
        if step > FEAS_TOL:
            seen.clear()
            bland = False
        else:
            key = tuple(sorted(basis.tolist()))
            if key in seen:
                bland = True
            seen.add(key)


def solve_lp(c, A_eq, b_eq, *, max_iter: int = 50_000) -> LPResult:
    """Two-phase revised simplex; raises :class:`LPError` if infeasible or unbounded."""
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    if A.ndim != 2 or A.shape != (b.size, c.size):
        raise ValueError("inconsistent LP dimensions")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise LPError("non-finite LP data")
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1
    m, n = A.shape

    # phase I with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = np.arange(n, n + m)
    basis, xb, _, it1 = _iterate(A1, b, c1, basis, max_iter)
    infeas = float(c1[basis] @ xb)
    if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0))):
        raise LPError(f"linear program is infeasible (phase I residual {infeas:.3e})")

    # drive artificials out of the basis; rows where that is impossible are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        B = A1[:, basis]
        row = np.linalg.solve(B.T, np.eye(m)[r])  # r-th row of B^-1
        alpha = row @ A
        alpha[basis[basis < n]] = 0.0
        j = int(np.argmax(np.abs(alpha)))
        if abs(alpha[j]) > 1e-9:
            basis[r] = j
        else:
            keep[r] = False
    A2, b2, basis2 = A[keep], b[keep], basis[keep]
    if np.any(basis2 >= n):
        raise LPError("could not remove artificial variables from the basis")

    basis2, xb, y, it2 = _iterate(A2, b2, c, basis2, max_iter)
    x = np.zeros(n)
    x[basis2] = np.maximum(xb, 0.0)
    duals = np.zeros(m)
    duals[np.flatnonzero(keep)] = y
    duals[flip] *= -1
    return LPResult(x, float(c @ x), basis2, duals, it1 + it2)
