"""Contact Hamiltonians on the flat torus, their Lagrangians, and sampled audits.

Every evaluator is vectorised: points ``x`` and covectors ``p`` carry the spatial
dimension on the last axis, scalars ``u`` broadcast against the leading axes.

The catalog is small and fixed. Each entry has the form

    H(x, p, u) = |p|^2 / 2 + V(x) + g(u)

with a periodic potential ``V`` and a strictly increasing contact term ``g``,
paired with one of three diffusion coefficients (zero, constant, degenerate).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericalError

TWO_PI = 2.0 * np.pi

MODEL_IDS = ("Q", "A", "A2", "B")


@dataclass(frozen=True)
class HamiltonianModel:
    """A contact Hamiltonian together with its assumption constants.

    ``growth`` holds ``(m, K_m, M_m)`` of the superlinear lower bound and
    ``monotonicity`` the pair ``(rho_star, rho_upper)`` bracketing ``dH/du``.
    """

    name: str
    dim: int
    H: Callable
    dH_dp: Callable
    dH_du: Callable
    dH_dx: Callable
    alpha: Callable
    growth: tuple = (2.0, 0.5, 1.0)
    monotonicity: tuple = (1.0, 1.0)
    closed_form_L: Optional[Callable] = None
    closed_form_dL_du: Optional[Callable] = None
    alpha_label: str = "zero"
    description: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def rho_star(self) -> float:
        return float(self.monotonicity[0])

    @property
    def rho_upper(self) -> float:
        return float(self.monotonicity[1])

    def without_closed_form(self) -> "HamiltonianModel":
        """Copy of the model that forces the numerical Legendre transform."""
        return HamiltonianModel(
            name=self.name, dim=self.dim, H=self.H, dH_dp=self.dH_dp, dH_du=self.dH_du,
            dH_dx=self.dH_dx, alpha=self.alpha, growth=self.growth,
            monotonicity=self.monotonicity, closed_form_L=None, closed_form_dL_du=None,
            alpha_label=self.alpha_label, description=self.description, extra=dict(self.extra),
        )


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _mean_last(a):
    return np.mean(a, axis=-1)


def _potential(kind):
    """Return ``(V, grad V)`` for a potential family."""
    if kind == "none":
        return (lambda x: np.zeros(np.shape(x)[:-1]),
                lambda x: np.zeros(np.shape(x)))
    if kind == "cos":
        return (lambda x: -_mean_last(np.cos(x)),
                lambda x: np.sin(x) / np.shape(x)[-1])
    if kind == "cos2":
        return (lambda x: -_mean_last(np.cos(2.0 * x)),
                lambda x: 2.0 * np.sin(2.0 * x) / np.shape(x)[-1])
    raise ValueError(f"unknown potential {kind!r}")


def _contact(kind):
    """Return ``(g, g')`` for the contact term in ``u``."""
    if kind == "linear":
        return (lambda u: np.asarray(u, dtype=float) * 1.0,
                lambda u: np.ones_like(np.asarray(u, dtype=float)))
    if kind == "sine":
        return (lambda u: u + 0.5 * np.sin(u),
                lambda u: 1.0 + 0.5 * np.cos(u))
    if kind == "none":
        return (lambda u: np.zeros_like(np.asarray(u, dtype=float)),
                lambda u: np.zeros_like(np.asarray(u, dtype=float)))
    raise ValueError(f"unknown contact term {kind!r}")


def parse_alpha(selector: str):
    """Translate an alpha selector (``zero``, ``const:<v>``, ``degenerate``)."""
    sel = selector.strip()
    if sel == "zero":
        return lambda x: np.zeros(np.shape(x)[:-1])
    if sel == "degenerate":
        return lambda x: _mean_last((1.0 - np.cos(x)) / 2.0)
    if sel.startswith("const:"):
        try:
            value = float(sel.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad alpha selector {selector!r}") from exc
        if not np.isfinite(value) or value < 0:
            raise ValueError(f"constant alpha must be finite and >= 0, got {value}")
        return lambda x: np.full(np.shape(x)[:-1], value)
    raise ValueError(f"unknown alpha selector {selector!r}")


def build_model(potential: str, contact: str, alpha: str = "zero", dim: int = 1, *,
                name: str = "custom", monotonicity=(1.0, 1.0), growth=(2.0, 0.5, 1.0),
                description: str = "") -> HamiltonianModel:
    """Assemble ``|p|^2/2 + V(x) + g(u)`` from named pieces."""
    if dim not in (1, 2):
        raise ValueError("only dimensions 1 and 2 are supported")
    V, gradV = _potential(potential)
    g, dg = _contact(contact)
    alpha_fn = parse_alpha(alpha)

    def H(x, p, u):
        return 0.5 * np.sum(p * p, axis=-1) + V(x) + g(u)

    def dH_dp(x, p, u):
        return np.array(p, dtype=float, copy=True)

    def dH_du(x, p, u):
        return dg(u) * np.ones(np.broadcast_shapes(np.shape(p)[:-1], np.shape(u)))

    def dH_dx(x, p, u):
        return gradV(x) * np.ones(np.shape(p))

    def L(x, v, u):
        return 0.5 * np.sum(v * v, axis=-1) - V(x) - g(u)

    def dL_du(x, v, u):
        return -dg(u) * np.ones(np.broadcast_shapes(np.shape(v)[:-1], np.shape(u)))

    return HamiltonianModel(
        name=name, dim=dim, H=H, dH_dp=dH_dp, dH_du=dH_du, dH_dx=dH_dx, alpha=alpha_fn,
        growth=growth, monotonicity=monotonicity, closed_form_L=L, closed_form_dL_du=dL_du,
        alpha_label=alpha, description=description,
    )


def get_model(model_id: str, alpha: str = "zero", dim: int = 1) -> HamiltonianModel:
    """Look up a catalog model by identifier (``Q``, ``A``, ``A2``, ``B``)."""
    if model_id == "Q":
        return build_model("none", "linear", alpha, dim, name="Q",
                           description="|p|^2/2 + u")
    if model_id == "A":
        return build_model("cos", "linear", alpha, dim, name="A",
                           description="|p|^2/2 - cos x + u")
    if model_id == "A2":
        return build_model("cos2", "linear", alpha, dim, name="A2",
                           description="|p|^2/2 - cos 2x + u")
    if model_id == "B":
        return build_model("cos", "sine", alpha, dim, name="B", monotonicity=(0.5, 1.5),
                           description="|p|^2/2 - cos x + u + sin(u)/2")
    raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _as_point(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != model.dim:
        raise DomainError(f"point has dimension {x.shape[-1]}, model has {model.dim}")
    return x


def _check_finite(**arrays):
    for key, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"non-finite value in argument {key!r}")


def eval_H(model: HamiltonianModel, x, p, u):
    """Evaluate ``H(x, p, u)`` with ``x`` reduced modulo 2*pi."""
    x = _as_point(model, x)
    p = _as_point(model, p)
    u = np.asarray(u, dtype=float)
    _check_finite(x=x, p=p, u=u)
    out = model.H(np.mod(x, TWO_PI), p, u)
    return float(out) if np.ndim(out) == 0 else out


def _hessian_pp(model, x, p, u, step=1e-5):
    n = model.dim
    hess = np.empty(np.shape(p) + (n,))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        hess[..., :, j] = (model.dH_dp(x, p + e, u) - model.dH_dp(x, p - e, u)) / (2 * step)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def legendre_p(model: HamiltonianModel, x, v, u=0.0, *, tol=1e-10, max_iter=200):
    """Covector maximising ``<v, p> - H(x, p, u)``.

    Damped Newton ascent from ``p = 0``; each step is halved until the
    objective does not decrease. Strict convexity makes the maximiser unique.
    """
    x = np.mod(_as_point(model, x), TWO_PI)
    v = _as_point(model, v)
    u = np.asarray(u, dtype=float)
    _check_finite(x=x, v=v, u=u)
    shape = np.broadcast_shapes(x.shape, v.shape, np.shape(u) + (model.dim,))
    x = np.broadcast_to(x, shape)
    v = np.broadcast_to(v, shape)
    u = np.broadcast_to(u, shape[:-1])
    p = np.zeros(shape)

    def objective(q):
        return np.sum(v * q, axis=-1) - model.H(x, q, u)

    for _ in range(max_iter):
        grad = v - model.dH_dp(x, p, u)
        if np.max(np.abs(grad), initial=0.0) <= tol:
            return p
        hess = _hessian_pp(model, x, p, u)
        direction = np.linalg.solve(hess, grad[..., None])[..., 0]
        base = objective(p)
        t = np.ones(shape[:-1])
        for _ in range(60):
            trial = p + t[..., None] * direction
            worse = objective(trial) < base - 1e-14 * (1 + np.abs(base))
            if not np.any(worse):
                break
            t = np.where(worse, 0.5 * t, t)
        p = p + t[..., None] * direction
    grad = v - model.dH_dp(x, p, u)
    if np.max(np.abs(grad), initial=0.0) <= tol:
        return p
    raise NumericalError("Legendre ascent did not converge", best=p)


def eval_L(model: HamiltonianModel, x, v, u=0.0, *, use_closed_form: bool = True):
    """Lagrangian ``L(x, v, u) = max_p <v, p> - H(x, p, u)``."""
    x = _as_point(model, x)
    v = _as_point(model, v)
    u = np.asarray(u, dtype=float)
    _check_finite(x=x, v=v, u=u)
    xr = np.mod(x, TWO_PI)
    if use_closed_form and model.closed_form_L is not None:
        out = model.closed_form_L(xr, v, u)
    else:
        p = legendre_p(model, xr, v, u)
        out = np.sum(np.broadcast_to(v, p.shape) * p, axis=-1) - model.H(xr, p, u)
    return float(out) if np.ndim(out) == 0 else out


def eval_dL_du(model: HamiltonianModel, x, v, u=0.0, *, use_closed_form: bool = True):
    """``dL/du``; by the envelope theorem it equals ``-dH/du`` at the maximiser."""
    x = np.mod(_as_point(model, x), TWO_PI)
    v = _as_point(model, v)
    u = np.asarray(u, dtype=float)
    if use_closed_form and model.closed_form_dL_du is not None:
        out = model.closed_form_dL_du(x, v, u)
    else:
        p = legendre_p(model, x, v, u)
        out = -model.dH_du(x, p, u)
    return float(out) if np.ndim(out) == 0 else out


def legendre_v(model: HamiltonianModel, x, p, u=0.0):
    """Velocity ``dH/dp(x, p, u)`` attached to a covector."""
    x = np.mod(_as_point(model, x), TWO_PI)
    return model.dH_dp(x, _as_point(model, p), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class LagrangianView:
    """Lagrangian-side accessors bound to one model."""

    model: HamiltonianModel
    use_closed_form: bool = True

    def L(self, x, v, u=0.0):
        return eval_L(self.model, x, v, u, use_closed_form=self.use_closed_form)

    def dL_du(self, x, v, u=0.0):
        return eval_dL_du(self.model, x, v, u, use_closed_form=self.use_closed_form)

    def legendre_v(self, x, p, u=0.0):
        return legendre_v(self.model, x, p, u)

    def legendre_p(self, x, v, u=0.0):
        return legendre_p(self.model, x, v, u)


# ---------------------------------------------------------------------------
# sampled audits of the structural assumptions
# ---------------------------------------------------------------------------

@dataclass
class AuditItem:
    name: str
    passed: bool
    margin: float
    constants: dict = field(default_factory=dict)
    witness: Optional[dict] = None

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "constants": {k: float(v) for k, v in self.constants.items()},
                "witness": self.witness}


@dataclass
class AuditReport:
    model: str
    alpha: str
    items: list

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def __getitem__(self, name) -> AuditItem:
        for item in self.items:
            if item.name == name:
                return item
        raise KeyError(name)

    def to_dict(self):
        return {"model": self.model, "alpha": self.alpha, "passed": self.passed,
                "items": [item.to_dict() for item in self.items]}


@dataclass(frozen=True)
class SampleSpec:
    x_grid: int = 64
    p_radius: float = 10.0
    u_range: float = 2.0
    samples: int = 10_000
    seed: int = 0
    h6: bool = False

    def __post_init__(self):
        for key in ("x_grid", "p_radius", "u_range", "samples"):
            value = getattr(self, key)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"sample spec field {key} must be finite and positive")


def _witness(index, **arrays):
    return {k: np.asarray(v)[index].tolist() for k, v in arrays.items()}


def audit_assumptions(model: HamiltonianModel, spec: SampleSpec | None = None,
                      **overrides) -> AuditReport:
    """Certify the structural assumptions on random samples.

    Violations are reported with a witnessing sample rather than raised.
    Existential constants are fitted as the tightest values consistent with
    the samples.
    """
    spec = spec or SampleSpec(**overrides)
    rng = np.random.default_rng(spec.seed)
    n, S, R = model.dim, spec.samples, spec.u_range
    nodes = np.arange(spec.x_grid) * (TWO_PI / spec.x_grid)
    x = nodes[rng.integers(0, spec.x_grid, size=(S, n))]
    p = rng.uniform(-spec.p_radius, spec.p_radius, size=(S, n))
    u1 = rng.uniform(-R, R, size=S)
    u2 = rng.uniform(-R, R, size=S)
    u1, u2 = np.minimum(u1, u2), np.maximum(u1, u2)
    # deterministic probe pair first so a flat direction is always witnessed
    u1[0], u2[0] = 0.0, 1.0
    H = model.H
    items = []

    a = model.alpha(x)
    k = int(np.argmin(a))
    items.append(AuditItem("alpha_nonnegative", bool(a[k] >= 0), float(a[k]),
                           witness=None if a[k] >= 0 else _witness(k, x=x)))

    # strict convexity along random directions
    d = rng.normal(size=(S, n))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    t = 1e-2
    second = (H(x, p + t * d, u1) + H(x, p - t * d, u1) - 2 * H(x, p, u1)) / t**2
    k = int(np.argmin(second))
    items.append(AuditItem("strict_convexity", bool(second[k] > 0), float(second[k]),
                           {"min_curvature": second[k]},
                           None if second[k] > 0 else _witness(k, x=x, p=p, u=u1)))

    # superlinear growth of H(x, p, 0)
    m, K_m, M_m = model.growth
    gap = H(x, p, np.zeros(S)) - (K_m * np.linalg.norm(p, axis=-1) ** m - M_m)
    k = int(np.argmin(gap))
    items.append(AuditItem("superlinear_growth", bool(gap[k] >= -1e-12), float(gap[k]),
                           {"m": m, "K_m": K_m, "M_m": M_m},
                           None if gap[k] >= -1e-12 else _witness(k, x=x, p=p)))

    # two-sided monotonicity in u
    du = u2 - u1
    ok = du > 1e-12
    ratio = (H(x[ok], p[ok], u2[ok]) - H(x[ok], p[ok], u1[ok])) / du[ok]
    k = int(np.argmin(ratio))
    rho_fit, rho_up_fit = float(ratio.min()), float(ratio.max())
    passed = rho_fit > 0 and rho_fit >= model.rho_star * (1 - 1e-9) \
        and rho_up_fit <= model.rho_upper * (1 + 1e-9)
    witness = None
    if not passed:
        kk = np.flatnonzero(ok)[k]
        witness = _witness(kk, x=x, p=p, u1=u1, u2=u2)
    items.append(AuditItem("u_monotonicity", passed, rho_fit - model.rho_star,
                           {"rho_star": rho_fit, "rho_upper": rho_up_fit}, witness))

    # Lipschitz dependence on x, relative to H(x, p, 0) + varsigma
    varsigma = M_m + 1.0
    y = np.mod(x + rng.normal(scale=0.3, size=(S, n)), TWO_PI)
    dist = np.linalg.norm(np.mod(x - y + np.pi, TWO_PI) - np.pi, axis=-1)
    base = H(x, p, np.zeros(S)) + varsigma
    valid = (dist > 1e-12) & (base > 0)
    kappa = np.abs(H(x, p, u1) - H(y, p, u1))[valid] / (base[valid] * dist[valid])
    kappa_fit = float(kappa.max()) if kappa.size else 0.0
    items.append(AuditItem("x_lipschitz", bool(np.all(base > 0) and np.isfinite(kappa_fit)),
                           float(base.min()), {"kappa": kappa_fit, "varsigma": varsigma}))

    # relative Lipschitz dependence on p, |p'| <= 2|p|
    eta_c = M_m + model.rho_upper * R + 1.0
    scale = rng.uniform(0, 2, size=S)
    direction = rng.normal(size=(S, n))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    p2 = direction * (scale * np.linalg.norm(p, axis=-1))[:, None]
    base = H(x, p, u1) + eta_c
    valid = (base > 0) & (np.linalg.norm(p - p2, axis=-1) > 1e-12)
    xi = (np.abs(H(x, p, u1) - H(x, p2, u1))[valid]
          / (base[valid] * np.linalg.norm(p - p2, axis=-1)[valid])
          * (np.linalg.norm(p, axis=-1)[valid] + 1.0))
    xi_fit = float(xi.max()) if xi.size else 0.0
    items.append(AuditItem("p_lipschitz", bool(np.all(base > 0) and np.isfinite(xi_fit)),
                           float(base.min()), {"xi": xi_fit, "eta": eta_c}))

    if spec.h6:
        diff = np.abs(model.dH_du(x, p, u1) - model.dH_du(x, p, np.zeros(S)))
        nz = np.abs(u1) > 1e-12
        B = float(np.max(diff[nz] / np.abs(u1[nz]))) if np.any(nz) else 0.0
        items.append(AuditItem("u_derivative_lipschitz", bool(np.isfinite(B)), B, {"B_R": B, "R": R}))

    return AuditReport(model.name, model.alpha_label, items)
