import numpy as np
import pytest
from scipy.optimize import linprog

from contacthj.errors import DegenerateMeasureError
from contacthj.grid import TorusGrid
from contacthj.measures import (PhaseMeasure, StateMeasure, build_phase_measure, dirac_measure,
                                fourier_basis, holonomy_integrands, lp_mather_oracle,
                                mather_residuals, measure_family, solve_adjoint, velocity_grid)
from contacthj.models import eval_L, get_model
from contacthj.solvers import lambda_sweep, solve_discounted
from helpers import SOURCES, experiment


@pytest.mark.gate
@pytest.mark.parametrize("N", [8, 64, 256])
def test_trivial_adjoint_is_a_dirac(N):
    q, g = get_model("Q"), TorusGrid(1, N)
    for lam in (1e-1, 1e-3):
        th = solve_adjoint(q, g, g.zeros(), lam, 0.0, [np.pi / 3])
        expected = np.zeros(N)
        expected[th.source] = 1.0 / g.h
        assert np.allclose(th.theta, expected, rtol=1e-14, atol=0)
        assert abs(th.normalization - 1.0) <= 1e-14
        mu = build_phase_measure(q, g, g.zeros(), th)
        assert list(mu.nodes) == [th.source] and mu.weights[0] == 1.0 and mu.v[0, 0] == 0.0
        res = mather_residuals(q, mu, 0.0)
        assert res.action == 0.0 and res.max_holonomy == 0.0


@pytest.mark.gate
def test_trivial_lp_puts_mass_at_rest():
    q, g = get_model("Q"), TorusGrid(1, 16)
    lp = lp_mather_oracle(q, g, v_max=2.0, M=9, c=0.0, K=3)
    assert lp.min_action == 0.0
    assert np.all(lp.measure.v == 0.0)


def test_holonomy_of_a_dirac_with_diffusion():
    q, g = get_model("Q", "const:0.3"), TorusGrid(1, 32)
    node = 5
    mu = dirac_measure(g, node)
    x0 = g.coords[node, 0]
    res = mather_residuals(q, mu, 0.0, K=2)
    # <0, grad phi> - alpha Lap phi with Lap cos(kx) = -k^2 cos(kx)
    expected = [0.3 * k * k * f(k * x0) for k in (1, 2) for f in (np.cos, np.sin)]
    assert np.allclose(res.holonomy, expected, atol=1e-15)


def test_fourier_basis_layout():
    assert len(fourier_basis(1, 5)) == 10
    assert len(fourier_basis(2, 3)) == 12
    with pytest.raises(ValueError):
        fourier_basis(1, 0)
    x = np.array([[0.3, 1.1]])
    for f in fourier_basis(2, 2):
        h = 1e-6
        for ax in range(2):
            e = np.zeros(2)
            e[ax] = h
            fd = (f.value(x + e) - f.value(x - e)) / (2 * h)
            assert f.gradient(x)[0, ax] == pytest.approx(fd[0], abs=1e-8)


def test_adjoint_positivity_degenerate_diffusion():
    a, g = get_model("A", "degenerate"), TorusGrid(1, 256)
    c = experiment("A", "degenerate").c
    u = solve_discounted(a, g, 1e-2, 1e-2, c).field
    for mode in ("aje", "jacobian"):
        for x0 in SOURCES:
            th = solve_adjoint(a, g, u, 1e-2, 1e-2, [x0], mode=mode)
            assert th.min_weight >= -1e-12
            assert abs(th.normalization - 1.0) <= 1e-10


def test_pendulum_measures_concentrate_at_the_top():
    ex = experiment("A")
    for mu in ex.measures:
        assert abs(mu.total - 1.0) <= 1e-10
        assert mu.mass_near(ex.grid, [np.pi]) >= 0.9


def test_two_well_measures_pick_a_well():
    ex = experiment("A2")
    for x0, mu in zip(SOURCES, ex.measures):
        well = np.pi / 2 if x0 < np.pi else 3 * np.pi / 2
        assert mu.mass_near(ex.grid, [well]) >= 0.9


@pytest.mark.parametrize("mid", ["A", "A2", "B"])
def test_mather_residuals_small(mid):
    ex = experiment(mid)
    for mu in ex.measures:
        r = mather_residuals(ex.model, mu, ex.c, K=5)
        assert abs(r.action) <= 5e-2 and r.max_holonomy <= 5e-2


def test_action_decreases_when_lambda_halves():
    a, g = get_model("A"), TorusGrid(1, 256)
    c = experiment("A").c
    lams = [1e-1 / 2**k for k in range(8)]
    fam = lambda_sweep(a, g, lams, lambda lam: lam * lam, c)
    actions = []
    for lam, res in zip(lams, fam):
        th = solve_adjoint(a, g, res.field, lam, lam * lam, [np.pi / 8])
        actions.append(abs(mather_residuals(a, build_phase_measure(a, g, res.field, th), c).action))
    assert all(b <= 1.1 * a for a, b in zip(actions, actions[1:]))
    assert actions[-1] <= 5e-3


def test_source_independence():
    ex = experiment("A")
    actions = [mather_residuals(ex.model, mu, ex.c).action for mu in ex.measures]
    assert max(actions) - min(actions) <= 5e-2


def test_lp_oracle_pendulum():
    a, g = get_model("A"), TorusGrid(1, 128)
    lp = lp_mather_oracle(a, g, M=33, K=5, c=experiment("A").c)
    # analytic Mather measure is the rest point at the top, L(pi, 0, 0) = -1
    assert eval_L(a, np.pi, 0.0, 0.0) == -1.0
    assert abs(lp.min_action + 1.0) <= 3e-2
    assert abs(lp.min_action + experiment("A").c) <= 3e-2
    assert np.max(np.abs(lp.holonomy)) <= 1e-9
    assert lp.measure.mass_near(g, [np.pi], count=1) >= 0.9
    ex = experiment("A")
    for mu in ex.measures:
        raw = mather_residuals(a, mu, ex.c).raw_action
        assert abs(lp.min_action - raw) <= 5e-2
        assert raw - lp.min_action >= -1e-9


def test_lp_oracle_matches_highs():
    a, g = get_model("B", "const:0.2"), TorusGrid(1, 24)
    lp = lp_mather_oracle(a, g, v_max=3.0, M=11, K=3)
    V = velocity_grid(1, 3.0, 11)
    X = np.repeat(g.coords.reshape(-1, 1), len(V), axis=0)
    VV = np.tile(V, (g.size, 1))
    cost = eval_L(a, X, VV, 0.0)
    rows = holonomy_integrands(a, X, VV, fourier_basis(1, 3))
    A = np.vstack([np.ones((1, len(cost))), rows])
    b = np.r_[1.0, np.zeros(len(rows))]
    ref = linprog(cost, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert lp.min_action == pytest.approx(ref.fun, abs=1e-9)


@pytest.mark.parametrize("mid", ["A", "A2", "B"])
def test_lp_is_a_lower_bound_for_adjoint_measures(mid):
    ex = experiment(mid)
    lp = lp_mather_oracle(ex.model, TorusGrid(1, 64), M=33, K=5)
    for mu in ex.measures:
        assert mather_residuals(ex.model, mu, ex.c).raw_action - lp.min_action >= -1e-9


def test_velocity_grid():
    v = velocity_grid(1, 2.0, 5)
    assert np.allclose(v[:, 0], [-2, -1, 0, 1, 2])
    assert velocity_grid(2, 1.0, 3).shape == (9, 2)
    with pytest.raises(ValueError):
        velocity_grid(1, 1.0, 4)


def test_measure_family_labels_and_jacobian_mode():
    ex = experiment("B")
    fam = measure_family(ex.model, ex.grid, ex.u, ex.lam, ex.lam**2, SOURCES[:2], mode="jacobian")
    assert [mu.label for _, mu in fam] == [f"adjoint@{th.source}" for th, _ in fam]
    for th, _ in fam:
        assert abs(th.normalization - 1.0) <= 1e-10 and th.mode == "jacobian"


def test_phase_measure_csv_round_trip(tmp_path):
    ex = experiment("A")
    mu = ex.measures[0]
    mu.to_csv(tmp_path / "m.csv", ex.grid)
    back = PhaseMeasure.from_csv(tmp_path / "m.csv", ex.grid)
    assert np.array_equal(back.nodes, mu.nodes)
    assert np.array_equal(back.weights, mu.weights)
    assert np.array_equal(back.v, mu.v)


def test_phase_measure_validation():
    with pytest.raises(ValueError):
        PhaseMeasure(1, [0], [[0.0]], [[0.0]], [-1.0])
    with pytest.raises(ValueError):
        PhaseMeasure(1, [0, 1], [[0.0]], [[0.0]], [1.0])
    g = TorusGrid(1, 8)
    empty = StateMeasure(g, np.zeros(8), 0, np.ones(8), 0.1, 0.0)
    with pytest.raises(DegenerateMeasureError):
        empty.normalized()
    with pytest.raises(ValueError):
        solve_adjoint(get_model("A"), g, g.zeros(), 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        solve_adjoint(get_model("A"), g, g.zeros(), 0.1, 0.0, 99)
