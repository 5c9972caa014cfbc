"""Selection of the vanishing-contact limit among critical solutions.

A finite seeded family of critical solutions stands in for the set of all
critical solutions. A candidate ``omega`` is admissible when

    int dL/du(x, v, 0) * omega(x) dmu >= -tol

for every measure ``mu`` of the computed family; the selected limit is the
pointwise maximum of the admissible candidates. Because a critical solution
plus a constant is again a critical solution and the constraint is
sign-definite in the constant, every candidate is also offered at its highest
admissible height.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ResolutionError, SelectionError
from .grid import TorusGrid, laplacian, lf_hamiltonian, lipschitz_constant, resolve_sigma
from .measures import PhaseMeasure, StateMeasure, action_margin
from .models import HamiltonianModel, eval_dL_du
from .solvers import SolveConfig, SolveResult, solve_critical

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def mollifier_kernel(grid: TorusGrid, eta_m: float) -> np.ndarray:
    """Discrete bump ``exp(-1/(1 - |x/eta_m|^2))`` centred at node 0; weights sum to one."""
    if eta_m < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"mollification radius {eta_m:.3g} below 2h = {2 * grid.h:.3g}")
    d = np.minimum(grid.coords, 2 * np.pi - grid.coords)
    r2 = np.sum(d * d, axis=-1) / eta_m**2
    with np.errstate(divide="ignore", over="ignore"):
        z = np.where(r2 < 1.0, np.exp(-1.0 / np.where(r2 < 1.0, 1.0 - r2, 1.0)), 0.0)
    return z / np.sum(z)


def mollify(grid: TorusGrid, values, eta_m: float) -> np.ndarray:
    """Periodic convolution with :func:`mollifier_kernel` (FFT)."""
    f = np.asarray(values, dtype=float).reshape(grid.shape)
    k = mollifier_kernel(grid, eta_m)
    axes = tuple(range(grid.dim))
    return np.fft.irfftn(np.fft.rfftn(f, axes=axes) * np.fft.rfftn(k, axes=axes), s=grid.shape,
                         axes=axes)


def mollify_and_residual(model: HamiltonianModel, grid: TorusGrid, values, u_for_contact, lam: float,
                         eta_m: float, c: float = 0.0, sigma="local"):
    """Mollified field and its scheme residual ``Hhat(x, Ds, lam*u) - alpha Lap s - c``."""
    s = mollify(grid, values, eta_m)
    u = np.zeros(grid.shape) if u_for_contact is None else np.asarray(u_for_contact, float).reshape(grid.shape)
    # contact slot taken from u_for_contact, not from the smoothed field
    w = lam * u
    sig = resolve_sigma(model, grid, s, w, sigma)
    S = lf_hamiltonian(model, grid, s, w, sig) - model.alpha(grid.coords) * laplacian(grid, s) - c
    return s, S


def dyadic_radii(grid: TorusGrid, count: int = 5, start: float = 4.0) -> list:
    return [start * grid.h * 2**k for k in range(count)]


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        return float("nan")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@dataclass
class MollificationStudy:
    eta_m: list
    sup: list
    mean_positive: list
    mean_shift: list
    lipschitz_increase: list
    slope_mean_positive: float
    sup_ratio: float

    def to_dict(self):
        return {k: (list(map(float, v)) if isinstance(v, list) else float(v))
                for k, v in self.__dict__.items()}


def mollification_study(model: HamiltonianModel, grid: TorusGrid, omega, c: float,
                        radii: Optional[Sequence[float]] = None, lam: float = 0.0,
                        u_for_contact=None) -> MollificationStudy:
    """Sup and mean-positive-part residual of mollified ``omega`` over a range of radii."""
    radii = list(radii) if radii is not None else dyadic_radii(grid)
    omega = np.asarray(omega, dtype=float).reshape(grid.shape)
    lip0 = lipschitz_constant(grid, omega)
    sup, pos, shift, lip = [], [], [], []
    for e in radii:
        s, S = mollify_and_residual(model, grid, omega, u_for_contact, lam, e, c)
        sup.append(float(np.max(np.abs(S))))
        pos.append(float(np.mean(np.maximum(S, 0.0))))
        shift.append(float(abs(np.mean(s) - np.mean(omega))))
        lip.append(float(lipschitz_constant(grid, s) - lip0))
    return MollificationStudy(radii, sup, pos, shift, lip, loglog_slope(radii, pos),
                              max(sup) / sup[0] if sup[0] > 0 else 1.0)


# ---------------------------------------------------------------------------
# admissibility and candidates
# ---------------------------------------------------------------------------

def _measure_list(measures):
    out = [m[1] if isinstance(m, tuple) else m for m in measures]
    if not out:
        raise ValueError("at least one measure is required")
    return out


def admissibility_test(model: HamiltonianModel, grid: TorusGrid, omega, measures,
                       tol: float = 1e-3):
    """``(admissible, margins)`` with ``margin = int dL/du(x, v, 0) omega dmu``."""
    margins = [action_margin(model, mu, omega, grid) for mu in _measure_list(measures)]
    return bool(all(m >= -tol for m in margins)), margins


def _unit_margin(model, mu: PhaseMeasure) -> float:
    """``int dL/du(x, v, 0) dmu``; strictly negative under strict monotonicity."""
    return mu.integrate(eval_dL_du(model, mu.x, mu.v, 0.0) * np.ones(len(mu.x)))


def admissible_shift(model: HamiltonianModel, grid: TorusGrid, omega, measures) -> float:
    """Largest ``k`` with ``omega + k`` satisfying every constraint with zero tolerance."""
    ks = []
    for mu in _measure_list(measures):
        unit = _unit_margin(model, mu)
        ks.append(action_margin(model, mu, omega, grid) / -unit)
    return float(min(ks))


@dataclass
class Candidate:
    seed: str
    field: np.ndarray
    residual: float
    settled: bool
    margins: list = field(default_factory=list)
    admissible: bool = False
    shift: float = 0.0
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "residual": float(self.residual), "settled": bool(self.settled),
                "admissible": bool(self.admissible), "shift": float(self.shift),
                "margins": [float(m) for m in self.margins], "iterations": int(self.iterations)}


@dataclass
class CandidateSet:
    members: list
    threshold: float
    excluded: list = field(default_factory=list)

    @property
    def admissible(self) -> list:
        return [c for c in self.members if c.admissible]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def to_list(self) -> list:
        return [c.to_dict() for c in self.members]


def seed_field(grid: TorusGrid, spec: str, discounted: Optional[dict] = None) -> np.ndarray:
    """Seed from a descriptor: ``zero``, ``const:v``, ``[-]cos:k[:a]``, ``[-]sin:k[:a]``, ``discounted``."""
    x = grid.coords
    if spec == "zero":
        return grid.zeros()
    if spec.startswith("const:"):
        return np.full(grid.shape, float(spec.split(":", 1)[1]))
    if spec == "discounted":
        if not discounted or "discounted" not in discounted:
            raise ValueError("seed 'discounted' needs a discounted solution")
        return np.array(discounted["discounted"], dtype=float).reshape(grid.shape)
    sign = -1.0 if spec.startswith("-") else 1.0
    parts = spec.lstrip("+-").split(":")
    if parts[0] in ("cos", "sin") and len(parts) in (2, 3):
        k = int(parts[1])
        amp = float(parts[2]) if len(parts) == 3 else 1.0
        fn = np.cos if parts[0] == "cos" else np.sin
        return sign * amp * np.mean(fn(k * x), axis=-1)
    raise ValueError(f"unknown seed descriptor {spec!r}")


DEFAULT_SEEDS = ("zero", "discounted", "cos:1", "-cos:1", "sin:1", "-sin:1", "cos:2", "-cos:2")


def candidates_from_solutions(model: HamiltonianModel, grid: TorusGrid, solutions, measures, *,
                              threshold: float = 5e-2, tol: float = 1e-3,
                              lift: bool = True) -> CandidateSet:
    """Filter ``(label, SolveResult)`` pairs by residual and test admissibility.

    With ``lift`` every kept solution is also entered at its highest admissible
    height (label suffix ``+lift``).
    """
    members, excluded = [], []
    for spec, res in solutions:
        if res.residual > threshold:
            excluded.append({"seed": spec, "residual": float(res.residual)})
            continue
        ok, margins = admissibility_test(model, grid, res.field, measures, tol)
        members.append(Candidate(spec, res.field, res.residual, res.settled, margins, ok, 0.0,
                                 res.iterations))
        if lift:
            k = admissible_shift(model, grid, res.field, measures)
            lifted = res.field + k
            ok2, margins2 = admissibility_test(model, grid, lifted, measures, tol)
            members.append(Candidate(spec + "+lift", lifted, res.residual, res.settled, margins2,
                                     ok2, k, 0))
    return CandidateSet(members, threshold, excluded)


def generate_candidates(model: HamiltonianModel, grid: TorusGrid, c: float, measures,
                        seeds: Sequence[str] = DEFAULT_SEEDS, *, eta: float = 0.0,
                        cfg: Optional[SolveConfig] = None, threshold: float = 5e-2,
                        tol: float = 1e-3, lift: bool = True,
                        discounted=None) -> CandidateSet:
    """Critical solutions from each seed, then :func:`candidates_from_solutions`.

    The ``discounted`` seed is skipped when no discounted solution is given.
    """
    cfg = cfg or SolveConfig()
    extra = {"discounted": discounted} if discounted is not None else None
    solutions = [(spec, solve_critical(model, grid, eta, c, seed_field(grid, spec, extra), cfg))
                 for spec in seeds if spec != "discounted" or discounted is not None]
    return candidates_from_solutions(model, grid, solutions, measures, threshold=threshold,
                                     tol=tol, lift=lift)


def select_u0(candidates) -> np.ndarray:
    """Pointwise maximum over admissible candidates."""
    members = candidates.members if isinstance(candidates, CandidateSet) else list(candidates)
    chosen = [c.field for c in members if c.admissible]
    if not chosen:
        raise SelectionError("no admissible candidate; enlarge the seed family or the measure set")
    return np.max(np.stack(chosen), axis=0)


def aligned_distance(grid: TorusGrid, a, b, point) -> float:
    """Sup distance after subtracting both fields' values at the node nearest ``point``."""
    i = grid.node(point)
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs((a - a[i]) - (b - b[i]))))


# ---------------------------------------------------------------------------
# estimate checks
# ---------------------------------------------------------------------------

@dataclass
class EstimateCheck:
    values: list
    tol: float
    passed: bool
    worst: float

    def to_dict(self):
        return {"values": [float(v) for v in self.values], "tol": float(self.tol),
                "passed": bool(self.passed), "worst": float(self.worst)}


def check_upper_estimate(model: HamiltonianModel, grid: TorusGrid, limit_field, measures,
                         tol: float = 1e-2) -> EstimateCheck:
    """``-int dL/du * u dmu`` for each measure; passes iff all are ``<= tol``."""
    vals = [-action_margin(model, mu, limit_field, grid) for mu in _measure_list(measures)]
    worst = max(vals)
    return EstimateCheck(vals, tol, bool(worst <= tol), float(worst))


def check_lower_estimate(model: HamiltonianModel, grid: TorusGrid, omega, u_lam,
                         thetas: Sequence[StateMeasure], eta: float, tol: float = 1e-2,
                         radius: Optional[float] = None) -> EstimateCheck:
    """Discrete lower estimate at each adjoint source ``x0``.

    ``u_lam(x0) - omega_m(x0) + sum(omega_m * beta * theta) h^n`` should be
    non-negative up to slack; ``omega_m`` is ``omega`` mollified at radius
    ``max(eta, 2h)``. ``values`` holds the per-source left-hand sides and
    ``worst`` the largest violation ``max(0, -lhs)``.
    """
    r = max(eta, 2 * grid.h) if radius is None else radius
    om = mollify(grid, omega, r)
    u = np.asarray(u_lam, dtype=float).reshape(grid.shape)
    vals = []
    for th in thetas:
        i = th.source
        pair = float(np.sum(om * th.beta * th.theta) * grid.cell_volume)
        vals.append(float(u.ravel()[i] - om.ravel()[i] + pair))
    worst = max(0.0, -min(vals))
    return EstimateCheck(vals, tol, bool(worst <= tol), float(worst))


@dataclass
class ConvergenceReport:
    lambdas: list
    distances: list
    tol: float
    slack: float
    monotone: bool
    passed: bool
    h6_distances: Optional[list] = None

    def to_dict(self):
        out = {"lambda": [float(v) for v in self.lambdas],
               "sup_distance": [float(v) for v in self.distances], "tol": self.tol,
               "slack": self.slack, "monotone": self.monotone, "passed": self.passed}
        if self.h6_distances is not None:
            out["h6_sup_distance"] = [float(v) for v in self.h6_distances]
        return out


def convergence_comparator(family: Sequence[SolveResult], u0, tol: float = 5e-2,
                           slack: float = 0.1, h6_reference=None) -> ConvergenceReport:
    """Sup distance of each sweep member to ``u0``; passes iff it is nonincreasing
    within ``slack`` (relative) and the last value is ``<= tol``."""
    u0 = np.ravel(u0)
    lams = [r.diagnostics.get("lambda") for r in family]
    d = [float(np.max(np.abs(np.ravel(r.field) - u0))) for r in family]
    mono = all(b <= a * (1 + slack) + 1e-12 for a, b in zip(d, d[1:]))
    h6 = None
    if h6_reference is not None:
        ref = np.ravel(h6_reference)
        h6 = [float(np.max(np.abs(np.ravel(r.field) - ref))) for r in family]
    return ConvergenceReport(lams, d, tol, slack, bool(mono), bool(mono and d[-1] <= tol), h6)


@dataclass
class SelectionReport:
    u0: np.ndarray
    candidates: CandidateSet
    convergence: ConvergenceReport
    upper: EstimateCheck
    lower: EstimateCheck
    measures: list = field(default_factory=list)

    @property
    def verdicts(self) -> dict:
        return {"upper_estimate": "PASS" if self.upper.passed else "FAIL",
                "lower_estimate": "PASS" if self.lower.passed else "FAIL",
                "convergence": "PASS" if self.convergence.passed else "FAIL"}

    def to_dict(self) -> dict:
        conv = self.convergence.to_dict()
        out = {"lambda": conv.pop("lambda"), "sup_distance": conv.pop("sup_distance"),
               "candidates": self.candidates.to_list(),
               "excluded": self.candidates.excluded,
               "measures": list(self.measures),
               "verdicts": self.verdicts,
               "convergence": conv,
               "upper_estimate": self.upper.to_dict(),
               "lower_estimate": self.lower.to_dict()}
        return out
