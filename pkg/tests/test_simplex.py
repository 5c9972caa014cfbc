import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from contacthj.errors import LPError
from contacthj.simplex import solve_lp


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), extra=st.integers(1, 20),
       redundant=st.booleans())
def test_matches_highs_on_random_feasible_lps(seed, m, extra, redundant):
    rng = np.random.default_rng(seed)
    n = m + extra
    A = rng.normal(size=(m, n))
    if redundant and m > 1:
        A = np.vstack([A, A[0] + 2 * A[-1]])
    x_feas = rng.random(n)
    b = A @ x_feas
    c = rng.random(n) + 0.1          # positive costs keep the problem bounded
    ours = solve_lp(c, A, b)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert ref.status == 0
    assert ours.objective == pytest.approx(ref.fun, abs=1e-7 * max(1, abs(ref.fun)))
    assert np.all(ours.x >= 0)
    assert np.max(np.abs(A @ ours.x - b)) <= 1e-8 * max(1, np.max(np.abs(b)))


def test_beale_cycling_example():
    # classic degenerate LP on which textbook Dantzig pricing cycles
    c = np.array([0, 0, 0, -0.75, 150, -0.02, 6])
    A = np.array([[1, 0, 0, 0.25, -60, -0.04, 9],
                  [0, 1, 0, 0.5, -90, -0.02, 3],
                  [0, 0, 1, 0, 0, 1, 0]], dtype=float)
    b = np.array([0, 0, 1.0])
    res = solve_lp(c, A, b)
    assert res.objective == pytest.approx(-0.05, abs=1e-12)


def test_duals_certify_optimality():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(4, 12))
    b = A @ rng.random(12)
    c = rng.random(12)
    res = solve_lp(c, A, b)
    reduced = c - A.T @ res.duals
    assert reduced.min() >= -1e-9
    assert res.duals @ b == pytest.approx(res.objective, abs=1e-9)


def test_negative_right_hand_side():
    res = solve_lp([1.0, 1.0], [[-1.0, -1.0]], [-2.0])
    assert res.objective == pytest.approx(2.0)


def test_infeasible_and_unbounded():
    with pytest.raises(LPError, match="infeasible"):
        solve_lp([1.0, 1.0], [[1.0, 1.0]], [-1.0])
    with pytest.raises(LPError, match="unbounded"):
        solve_lp([-1.0, 0.0], [[1.0, -1.0]], [0.0])
    with pytest.raises(ValueError):
        solve_lp([1.0], [[1.0, 2.0]], [1.0])
    with pytest.raises(LPError):
        solve_lp([np.nan], [[1.0]], [1.0])
