"""Discounted, classical-auxiliary and critical solves of the monotone scheme.

All solves share one driver: linearly implicit pseudo-time stepping

    (I/dt + J(u)) du = F(u),   u <- u - du,

started from the explicit CFL step. For steady problems the step grows
geometrically while the residual keeps falling, which turns the march into
Newton's method near the fixed point; for the critical equation the step is
capped so the march follows the time-dependent flow and settles into the
steady state reachable from the seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, SolverError
from .grid import (TorusGrid, diffusion_coefficient, global_sigma, lipschitz_constant,
                   scheme_jacobian, scheme_residual)
from .models import HamiltonianModel

logger = logging.getLogger(__name__)


@dataclass
class SolveConfig:
    tol: float = 1e-9
    max_iterations: int = 200_000
    cfl: float = 0.8
    sigma: Union[str, float] = "local"
    critical_tol: float = 1e-6
    critical_dt_max: float = 50.0
    critical_horizon: float = 5.0e3
    stall_window: int = 40

    def __post_init__(self):
        if not (self.tol > 0 and self.critical_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl factor must lie in (0, 1]")


@dataclass
class SolveResult:
    field: np.ndarray
    iterations: int
    residual: float
    c_used: float
    settled: bool = True
    diagnostics: dict = field(default_factory=dict)

    def summary(self, timing: bool = False) -> dict:
        """JSON-ready diagnostics; wall-clock entries only when ``timing`` is set."""
        out = {"iterations": int(self.iterations), "residual": float(self.residual),
               "c": float(self.c_used), "settled": bool(self.settled)}
        out.update({k: (float(v) if isinstance(v, (float, np.floating)) else v)
                    for k, v in self.diagnostics.items() if timing or k != "seconds"})
        return out


def cfl_step(model, grid, u, lam, eta, cfg: SolveConfig) -> float:
    """Explicit pseudo-time step bound for the monotone scheme."""
    n, h = grid.dim, grid.h
    sigma = max(global_sigma(model, grid, u, lam * u), 1e-12)
    alpha_max = float(np.max(diffusion_coefficient(model, grid, 0.0)))
    denom = 2 * n * (alpha_max + eta**2) + sigma * h * 2 * n + lam * model.rho_upper * h**2
    return cfg.cfl * h**2 / denom


def _march(F: Callable, J: Callable, u, *, dt, dt_max, tol, max_iter, grow=True,
           horizon=None, stall_window=None):
    """Linearly implicit pseudo-time march.

    Returns ``(u, residual, iterations, dt, settled)``. Steps that increase the
    residual are rejected and retried with a smaller step.
    """
    eye = sp.identity(u.size, format="csr")
    r = F(u)
    rn = float(np.max(np.abs(r)))
    if not np.isfinite(rn):
        raise NumericalError("non-finite residual at start", best=u)
    it, t = 0, 0.0
    best_window = rn
    since_improve = 0
    while rn > tol and it < max_iter:
        if horizon is not None and t >= horizon:
            break
        if stall_window is not None and since_improve >= stall_window:
            break
        it += 1
        since_improve += 1
        A = (J(u) + eye / dt).tocsc()
        du = spla.spsolve(A, r.ravel()).reshape(u.shape)
        trial = u - du
        r_trial = F(trial)
        rn_trial = float(np.max(np.abs(r_trial)))
        if not np.isfinite(rn_trial) or rn_trial > rn * (1 + 1e-9) + 1e-14:
            dt *= 0.25
            if dt < 1e-14:
                if stall_window is not None:
                    break
                raise NumericalError("pseudo-time step collapsed", best=u)
            continue
        t += dt
        ratio = rn / max(rn_trial, 1e-300)
        u, r, rn = trial, r_trial, rn_trial
        if grow:
            dt = min(dt_max, dt * min(max(ratio, 2.0), 10.0))
        else:
            dt = min(dt_max, dt * 2.0)
        if rn < 0.99 * best_window:
            best_window, since_improve = rn, 0
    return u, rn, it, dt, rn <= tol


def solve_discounted(model: HamiltonianModel, grid: TorusGrid, lam: float, eta: float, c: float,
                     cfg: Optional[SolveConfig] = None, u0=None) -> SolveResult:
    """Solve ``Hhat(x, Du, lam u) = (alpha + eta^2) Lap u + c`` on the grid."""
    cfg = cfg or SolveConfig()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    return _solve_steady(model, grid, c, eta, cfg, u0, contact=lam, discount=0.0,
                         label={"lambda": float(lam), "eta": float(eta)})


def _solve_steady(model, grid, c, eta, cfg, u0, *, contact, discount, label):
    t0 = time.perf_counter()
    u = grid.zeros() if u0 is None else np.array(u0, dtype=float).reshape(grid.shape)
    total = 0
    dt = cfl_step(model, grid, u, contact + discount, eta, cfg)
    dt0 = dt

    def residual(policy):
        return lambda v: scheme_residual(model, grid, v, contact=contact, discount=discount,
                                         eta=eta, c=c, sigma=policy)

    def jacobian(policy):
        return lambda v: scheme_jacobian(model, grid, v, contact=contact, discount=discount,
                                         eta=eta, sigma=policy)

    final_policy = cfg.sigma
    phases = []
    if u0 is None and final_policy == "local":
        # robust warm phase with a global viscosity, then the local scheme
        phases.append(("global", max(cfg.tol, 1e-6)))
    phases.append((final_policy, cfg.tol))
    rn = np.inf
    for policy, tol in phases:
        budget = cfg.max_iterations - total
        try:
            u, rn, its, dt, ok = _march(residual(policy), jacobian(policy), u, dt=dt, dt_max=1e15,
                                        tol=tol, max_iter=budget)
        except NumericalError as exc:
            raise NumericalError(f"{exc} ({label})", best=exc.best, diagnostics=label) from exc
        total += its
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite iterate ({label})", best=u, diagnostics=label)
        dt = max(dt, dt0)
    if rn > cfg.tol:
        raise SolverError(f"iteration cap reached with residual {rn:.3e} ({label})", best=u,
                          diagnostics=dict(label, residual=rn, iterations=total))
    sigma_used = global_sigma(model, grid, u, contact * u)
    diag = dict(label)
    diag.update({"sigma": sigma_used, "sigma_policy": str(final_policy), "dt": dt0,
                 "seconds": time.perf_counter() - t0})
    logger.debug("steady solve %s: %d iterations, residual %.2e", label, total, rn)
    return SolveResult(u, total, rn, c, True, diag)


@dataclass
class ErgodicResult:
    c: float
    w: np.ndarray
    deltas: tuple
    estimates: tuple
    eta: float
    diagnostics: list = field(default_factory=list)

    def __iter__(self):
        yield self.c
        yield self.w

    def to_dict(self):
        return {"c": float(self.c), "eta": float(self.eta), "deltas": list(map(float, self.deltas)),
                "estimates": list(map(float, self.estimates)), "solves": self.diagnostics}


def richardson_zero(deltas: Sequence[float], values: Sequence[float]) -> float:
    """Extrapolate ``values(delta)`` to ``delta = 0`` by repeated first-order elimination."""
    d = list(map(float, deltas))
    table = list(map(float, values))
    for level in range(1, len(d)):
        table = [(d[i] * table[i + 1] - d[i + level] * table[i]) / (d[i] - d[i + level])
                 for i in range(len(table) - 1)]
    return table[0]


def compute_ergodic_constant(model: HamiltonianModel, grid: TorusGrid, eta: float = 0.0,
                             cfg: Optional[SolveConfig] = None,
                             deltas: Sequence[float] = (1e-2, 5e-3, 2.5e-3)) -> ErgodicResult:
    """Ergodic constant of the discrete critical equation.

    The critical equation only sees ``H(., ., 0)``, so the classical discounted
    problem ``delta w + Hhat(x, Dw, 0) = (alpha + eta^2) Lap w`` applies; the
    estimates ``-delta * mean(w)`` are extrapolated to ``delta = 0``.
    """
    cfg = cfg or SolveConfig()
    estimates, diags, w = [], [], None
    for d in deltas:
        res = _solve_steady(model, grid, 0.0, eta, cfg, None, contact=0.0, discount=d,
                            label={"delta": float(d), "eta": float(eta)})
        w = res.field
        estimates.append(-d * float(np.mean(w)))
        diags.append(res.summary())
    c = richardson_zero(deltas, estimates)
    # corrector of the smallest delta with its divergent mean removed
    corrector = w - np.mean(w)
    return ErgodicResult(c, corrector, tuple(deltas), tuple(estimates), eta, diags)


def solve_critical(model: HamiltonianModel, grid: TorusGrid, eta: float, c: float, seed,
                   cfg: Optional[SolveConfig] = None) -> SolveResult:
    """Relax ``d_t w = -(Hhat(x, Dw, 0) - (alpha + eta^2) Lap w - c)`` from ``seed``.

    Stops at ``cfg.critical_tol``, at the pseudo-time horizon, or when the
    residual stalls; the floor is set by the accuracy of ``c``, since the
    equation has no steady state for any other constant. Stalled runs are returned with ``settled=False`` rather than raised;
    degenerate diffusion can make the approach to steady state very slow.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    u = np.array(seed, dtype=float).reshape(grid.shape)
    F = lambda v: scheme_residual(model, grid, v, eta=eta, c=c, sigma=cfg.sigma)  # noqa: E731
    J = lambda v: scheme_jacobian(model, grid, v, eta=eta, sigma=cfg.sigma)  # noqa: E731
    dt0 = cfl_step(model, grid, u, 0.0, eta, cfg)
    u, rn, its, dt, ok = _march(F, J, u, dt=dt0, dt_max=cfg.critical_dt_max, tol=cfg.critical_tol,
                                max_iter=cfg.max_iterations, grow=False,
                                horizon=cfg.critical_horizon, stall_window=cfg.stall_window)
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite critical iterate", best=u)
    diag = {"eta": float(eta), "sigma": global_sigma(model, grid, u, 0 * u), "dt": dt0,
            "seconds": time.perf_counter() - t0}
    return SolveResult(u, its, rn, c, bool(ok), diag)


def default_eta_rule(lam: float) -> float:
    return lam**2


def lambda_sweep(model: HamiltonianModel, grid: TorusGrid, lambdas: Sequence[float],
                 eta_rule: Callable[[float], float] = default_eta_rule, c: float = 0.0,
                 cfg: Optional[SolveConfig] = None) -> list:
    """Discounted solutions along a descending list of ``lambda``, warm-started."""
    cfg = cfg or SolveConfig()
    lambdas = [float(v) for v in lambdas]
    if any(v <= 0 for v in lambdas):
        raise ValueError("lambdas must be positive")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly descending")
    family, u = [], None
    for lam in lambdas:
        try:
            res = solve_discounted(model, grid, lam, eta_rule(lam), c, cfg, u0=u)
        except NumericalError as exc:
            raise type(exc)(f"sweep failed at lambda={lam:g}: {exc}", best=exc.best,
                            diagnostics=exc.diagnostics) from exc
        family.append(res)
        u = res.field
    return family


def perron_bound(model: HamiltonianModel, grid: TorusGrid, c: float, lam: float) -> float:
    """Comparison bound ``||u_lam||_inf <= ||H(., 0, 0) - c||_inf / (rho_* lam)``."""
    x = grid.coords
    h0 = model.H(x, np.zeros_like(x), np.zeros(grid.shape))
    return float(np.max(np.abs(h0 - c)) / (model.rho_star * lam))


def uniform_bounds(grid: TorusGrid, family: Sequence[SolveResult]) -> dict:
    """Sup-norm and discrete Lipschitz constant of each member of a sweep."""
    sup = [float(np.max(np.abs(r.field))) for r in family]
    lip = [lipschitz_constant(grid, r.field) for r in family]

    def spread(vals):
        lo, hi = min(vals), max(vals)
        if hi == 0.0:
            return 1.0
        return hi / lo if lo > 0 else float("inf")

    return {"lambda": [r.diagnostics.get("lambda") for r in family], "C_p": sup, "C_lip": lip,
            "C_p_ratio": spread(sup), "C_lip_ratio": spread(lip)}
