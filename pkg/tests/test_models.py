import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from contacthj.errors import DomainError
from contacthj.models import (LagrangianView, SampleSpec, audit_assumptions, build_model,
                              eval_dL_du, eval_H, eval_L, get_model, legendre_p)

CATALOG = ("Q", "A", "A2", "B")
finite = st.floats(-10, 10, allow_nan=False)


@pytest.mark.gate
def test_trivial_model_values():
    q = get_model("Q")
    assert eval_H(q, 0.0, 0.0, 0.0) == 0.0
    assert eval_L(q, 0.0, 1.0, 0.0) == 0.5


def test_pendulum_values():
    a = get_model("A")
    assert eval_H(a, np.pi, 0.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert eval_L(a, np.pi, 0.0, 0.0) == pytest.approx(-1.0, abs=1e-15)
    assert eval_H(get_model("B"), 0.0, 1.0, 0.0) == pytest.approx(-0.5, abs=1e-15)


def test_numerical_legendre_matches_closed_form_and_scipy():
    b = get_model("B").without_closed_form()
    assert eval_L(b, 0.0, 0.0, 0.0, use_closed_form=False) == pytest.approx(1.0, abs=1e-10)
    # independent oracle: L = -min_p (H - v p) by bounded scalar minimisation
    for x, v, u in [(0.3, 1.7, 0.4), (2.0, -0.5, -1.0), (5.0, 3.0, 1.5)]:
        res = minimize_scalar(lambda p: eval_H(b, x, p, u) - v * p, bounds=(-20, 20),
                              method="bounded", options={"xatol": 1e-12})
        assert eval_L(b, x, v, u, use_closed_form=False) == pytest.approx(-res.fun, abs=1e-8)


@pytest.mark.parametrize("mid", CATALOG)
def test_numerical_lagrangian_agrees_on_samples(mid):
    rng = np.random.default_rng(1)
    model = get_model(mid)
    x = rng.uniform(0, 2 * np.pi, (1000, 1))
    v = rng.uniform(-5, 5, (1000, 1))
    u = rng.uniform(-2, 2, 1000)
    closed = eval_L(model, x, v, u)
    numeric = eval_L(model.without_closed_form(), x, v, u, use_closed_form=False)
    assert np.max(np.abs(closed - numeric)) <= 1e-8
    dl = eval_dL_du(model.without_closed_form(), x, v, u, use_closed_form=False)
    assert np.max(np.abs(dl - eval_dL_du(model, x, v, u))) <= 1e-8


@pytest.mark.parametrize("mid", CATALOG)
def test_fenchel_young(mid):
    rng = np.random.default_rng(2)
    model = get_model(mid, "degenerate")
    n = 100_000
    x = rng.uniform(0, 2 * np.pi, (n, 1))
    p = rng.uniform(-10, 10, (n, 1))
    v = rng.uniform(-10, 10, (n, 1))
    u = rng.uniform(-2, 2, n)
    gap = eval_H(model, x, p, u) + eval_L(model, x, v, u) - v[:, 0] * p[:, 0]
    assert gap.min() >= -1e-8
    # equality at the Legendre pair v = dH/dp
    vp = model.dH_dp(x, p, u)
    eq = eval_H(model, x, p, u) + eval_L(model, x, vp, u) - vp[:, 0] * p[:, 0]
    assert np.max(np.abs(eq)) <= 1e-8


@pytest.mark.parametrize("mid", CATALOG)
@given(x=st.floats(0, 6.28), p=finite, u=st.floats(-2, 2))
def test_derivatives_match_finite_differences(mid, x, p, u):
    model = get_model(mid)
    h = 1e-5
    X, P, U = np.array([x]), np.array([p]), np.array(u)

    def rel(a, b):
        return abs(a - b) / max(1.0, abs(b))

    fd_p = (model.H(X, P + h, U) - model.H(X, P - h, U)) / (2 * h)
    fd_u = (model.H(X, P, U + h) - model.H(X, P, U - h)) / (2 * h)
    fd_x = (model.H(X + h, P, U) - model.H(X - h, P, U)) / (2 * h)
    assert rel(float(model.dH_dp(X, P, U)[0]), float(fd_p)) <= 1e-5
    assert rel(float(model.dH_du(X, P, U)), float(fd_u)) <= 1e-5
    assert rel(float(model.dH_dx(X, P, U)[0]), float(fd_x)) <= 1e-5


def test_legendre_inverts_gradient():
    model = get_model("B")
    view = LagrangianView(model, use_closed_form=False)
    p = np.array([[1.3], [-0.7]])
    x = np.array([[0.5], [4.0]])
    v = view.legendre_v(x, p, 0.2)
    assert np.allclose(legendre_p(model, x, v, 0.2), p, atol=1e-9)


def test_audit_pendulum_passes_with_unit_monotonicity():
    report = audit_assumptions(get_model("A"), SampleSpec(p_radius=10, samples=10_000))
    assert report.passed
    mono = report["u_monotonicity"].constants
    assert mono["rho_star"] == pytest.approx(1.0, abs=1e-9)
    assert mono["rho_upper"] == pytest.approx(1.0, abs=1e-9)


def test_audit_sine_contact_brackets():
    mono = audit_assumptions(get_model("B"))["u_monotonicity"]
    assert mono.passed
    assert 0.5 <= mono.constants["rho_star"] <= mono.constants["rho_upper"] <= 1.5


def test_audit_flags_missing_contact_term():
    flat = build_model("none", "none", name="flat")
    report = audit_assumptions(flat, SampleSpec(samples=500))
    mono = report["u_monotonicity"]
    assert not mono.passed and not report.passed
    assert mono.witness["u1"] == 0.0 and mono.witness["u2"] == 1.0


def test_audit_is_deterministic_per_seed():
    a = audit_assumptions(get_model("B"), SampleSpec(samples=2000, seed=7)).to_dict()
    b = audit_assumptions(get_model("B"), SampleSpec(samples=2000, seed=7)).to_dict()
    assert a == b


def test_two_dimensional_model():
    a2d = get_model("A", dim=2)
    assert eval_H(a2d, [np.pi, np.pi], [0.0, 0.0], 0.0) == pytest.approx(1.0)
    assert eval_H(a2d, [0.0, np.pi], [1.0, 1.0], 0.5) == pytest.approx(1.5)


def test_domain_errors():
    a = get_model("A")
    with pytest.raises(DomainError):
        eval_H(a, np.nan, 0.0, 0.0)
    with pytest.raises(DomainError):
        eval_H(a, [0.0, 1.0], 0.0, 0.0)
    with pytest.raises(ValueError):
        get_model("Z")
    with pytest.raises(ValueError):
        get_model("A", "const:-1")
    with pytest.raises(ValueError):
        SampleSpec(samples=0)
