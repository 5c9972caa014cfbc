"""Adjoint densities, phase-space measures, Mather residuals and the LP oracle.

The adjoint density solves ``A^T theta = lam * delta_{x0}`` with ``A`` the
linearised primal operator. Pairing with the constant field gives the exact
identity ``sum(dH/du * theta) h^n = 1``, which every solve checks. Pushing the
normalised density forward by ``v = dH/dp(x, Du, 0)`` gives a measure on
position-velocity space whose action and holonomy residuals are measured
against a Fourier test basis.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DegenerateMeasureError, InvariantError, LPError, NumericalError
from .grid import TorusGrid, assemble_linearized, centered_gradient
from .models import HamiltonianModel, eval_L, eval_dL_du
from .simplex import solve_lp

logger = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-12
NORMALIZATION_TOL = 1e-10


# ---------------------------------------------------------------------------
# state measures
# ---------------------------------------------------------------------------

@dataclass
class StateMeasure:
    """Adjoint density on the nodes of a grid.

    ``theta`` is the raw density; ``beta`` the reaction weight it is normalised
    against, so that ``sum(beta * theta) * h^n`` should equal one.
    """

    grid: TorusGrid
    theta: np.ndarray
    source: int
    beta: np.ndarray
    lam: float
    eta: float
    mode: str = "aje"
    diagnostics: dict = field(default_factory=dict)

    @property
    def normalization(self) -> float:
        return float(np.sum(self.beta * self.theta) * self.grid.cell_volume)

    @property
    def min_weight(self) -> float:
        return float(np.min(self.theta))

    @property
    def mass(self) -> float:
        return float(np.sum(self.theta) * self.grid.cell_volume)

    def normalized(self) -> np.ndarray:
        """Probability weights ``theta_i h^n / sum(theta h^n)`` (negative round-off clipped)."""
        w = np.clip(self.theta, 0.0, None) * self.grid.cell_volume
        total = float(np.sum(w))
        if not total > 0:
            raise DegenerateMeasureError("adjoint density has no positive mass")
        return w / total


def _source_index(grid: TorusGrid, x0) -> int:
    if isinstance(x0, (int, np.integer)):
        if not 0 <= int(x0) < grid.size:
            raise ValueError(f"source node {x0} outside the grid")
        return int(x0)
    return grid.node(x0)


def solve_adjoint(model: HamiltonianModel, grid: TorusGrid, u, lam: float, eta: float, x0, *,
                  mode: str = "aje", sigma="local", transport: str = "upwind",
                  refine: int = 5) -> StateMeasure:
    """Adjoint density with a discrete Dirac source at node (or point) ``x0``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    src = _source_index(grid, x0)
    op = assemble_linearized(model, grid, u, lam, eta, mode=mode, sigma=sigma, transport=transport)
    AT = op.T.tocsc()
    rhs = np.zeros(grid.size)
    rhs[src] = lam / grid.cell_volume
    try:
        lu = spla.splu(AT)
    except RuntimeError as exc:
        raise NumericalError(f"adjoint factorisation failed: {exc}",
                             diagnostics={"lambda": lam, "eta": eta, "mode": mode}) from exc
    theta = lu.solve(rhs)
    norm_A = spla.norm(AT, np.inf)
    rel = np.inf
    for _ in range(refine + 1):
        r = rhs - AT @ theta
        # normwise backward error
        rel = np.max(np.abs(r)) / (norm_A * np.max(np.abs(theta)) + np.max(np.abs(rhs)))
        if rel <= 1e-13:
            break
        theta = theta + lu.solve(r)
    if not np.all(np.isfinite(theta)) or rel > 1e-12:
        diag_ratio = float(np.max(np.abs(AT.diagonal())) / np.min(np.abs(AT.diagonal())))
        raise NumericalError(f"adjoint solve residual {rel:.2e} above 1e-12",
                             diagnostics={"relative_residual": rel, "diagonal_ratio": diag_ratio,
                                          "lambda": lam, "eta": eta})
    # pairing with the constant field: A 1 = lam * beta
    beta = (op.matrix @ np.ones(grid.size)).reshape(grid.shape) / lam
    theta = theta.reshape(grid.shape)
    meas = StateMeasure(grid, theta, src, beta, float(lam), float(eta), mode,
                        {"relative_residual": float(rel)})
    err = abs(meas.normalization - 1.0)
    if err > 1e-8:
        raise InvariantError(f"adjoint normalisation off by {err:.2e}; assembly is not conservative")
    return meas


# ---------------------------------------------------------------------------
# phase measures
# ---------------------------------------------------------------------------

@dataclass
class PhaseMeasure:
    """Finitely supported probability measure on position-velocity space."""

    dim: int
    nodes: np.ndarray
    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=int)
        self.x = np.asarray(self.x, dtype=float).reshape(-1, self.dim)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, self.dim)
        self.weights = np.asarray(self.weights, dtype=float)
        if not (len(self.nodes) == len(self.x) == len(self.v) == len(self.weights)):
            raise ValueError("support arrays have different lengths")
        if np.any(self.weights < 0):
            raise ValueError("measure weights must be non-negative")

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def mass_near(self, grid: TorusGrid, point, count: int = 2) -> float:
        """Mass carried by the ``count`` nodes nearest to ``point`` (periodic distance)."""
        d = np.abs(grid.coords.reshape(grid.size, grid.dim) - np.asarray(point, dtype=float))
        dist = np.linalg.norm(np.minimum(d, 2 * np.pi - d), axis=-1)
        near = np.argsort(dist, kind="stable")[:count]
        return float(np.sum(self.weights[np.isin(self.nodes, near)]))

    def header(self):
        n = self.dim
        return ([f"i{k}" for k in range(n)] + [f"x{k}" for k in range(n)]
                + [f"v{k}" for k in range(n)] + ["weight"])

    def rows(self, grid: TorusGrid):
        for node, x, v, w in zip(self.nodes, self.x, self.v, self.weights):
            yield ([int(i) for i in grid.multi_index(int(node))] + [repr(float(t)) for t in x]
                   + [repr(float(t)) for t in v] + [repr(float(w))])

    def to_csv(self, path, grid: TorusGrid) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            writer.writerows(self.rows(grid))

    @classmethod
    def from_csv(cls, path, grid: TorusGrid, label: str = "") -> "PhaseMeasure":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [list(map(float, r)) for r in reader]
        n = grid.dim
        data = np.array(rows).reshape(-1, len(header))
        idx = data[:, :n].astype(int)
        nodes = np.ravel_multi_index(tuple(idx.T), grid.shape) if len(idx) else np.zeros(0, int)
        return cls(n, nodes, data[:, n:2 * n], data[:, 2 * n:3 * n], data[:, 3 * n], label)


def build_phase_measure(model: HamiltonianModel, grid: TorusGrid, u, theta: StateMeasure,
                        label: str = "") -> PhaseMeasure:
    """Push the normalised adjoint density forward to velocities ``dH/dp(x, Du, 0)``."""
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    weights = theta.normalized().ravel()
    x = grid.coords
    p = centered_gradient(grid, u)
    v = model.dH_dp(x, p, np.zeros(grid.shape)).reshape(grid.size, grid.dim)
    keep = np.flatnonzero(weights > 0)
    meta = {"source": int(theta.source), "lambda": theta.lam, "eta": theta.eta,
            "mode": theta.mode}
    return PhaseMeasure(grid.dim, keep, x.reshape(grid.size, grid.dim)[keep], v[keep],
                        weights[keep], label, meta)


def dirac_measure(grid: TorusGrid, node: int, velocity=None, label: str = "") -> PhaseMeasure:
    v = np.zeros(grid.dim) if velocity is None else np.asarray(velocity, dtype=float)
    x = grid.coords.reshape(grid.size, grid.dim)[node]
    return PhaseMeasure(grid.dim, [node], [x], [v], [1.0], label)


# ---------------------------------------------------------------------------
# Mather residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FourierMode:
    axis: int
    k: int
    kind: str  # "cos" or "sin"

    @property
    def label(self) -> str:
        return f"{self.kind}({self.k}x{self.axis})"

    def value(self, x):
        t = self.k * x[..., self.axis]
        return np.cos(t) if self.kind == "cos" else np.sin(t)

    def gradient(self, x):
        t = self.k * x[..., self.axis]
        g = np.zeros(np.shape(x))
        g[..., self.axis] = -self.k * np.sin(t) if self.kind == "cos" else self.k * np.cos(t)
        return g

    def laplacian(self, x):
        return -self.k**2 * self.value(x)


def fourier_basis(dim: int, K: int) -> list:
    """``cos(k x_j)`` and ``sin(k x_j)`` for ``k = 1..K`` on every axis."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return [FourierMode(axis, k, kind) for axis in range(dim) for k in range(1, K + 1)
            for kind in ("cos", "sin")]


def holonomy_integrands(model: HamiltonianModel, x, v, basis) -> np.ndarray:
    """Rows ``<v, grad phi(x)> - alpha(x) Lap phi(x)``, one per test function."""
    a = model.alpha(x)
    return np.array([np.sum(v * f.gradient(x), axis=-1) - a * f.laplacian(x) for f in basis])


@dataclass
class MatherResiduals:
    action: float
    holonomy: np.ndarray
    basis: str
    raw_action: float = 0.0

    @property
    def max_holonomy(self) -> float:
        return float(np.max(np.abs(self.holonomy), initial=0.0))

    def to_dict(self) -> dict:
        return {"action": float(self.action), "holonomy": [float(h) for h in self.holonomy],
                "basis": self.basis, "raw_action": float(self.raw_action)}


def mather_residuals(model: HamiltonianModel, phase: PhaseMeasure, c: float, K: int = 5) -> MatherResiduals:
    """Shifted action ``int L(x, v, 0) dmu + c`` and holonomy residuals.

    The ergodic shift is added: with the Lagrangian ``L = max_p <v,p> - H``, the
    action of a Mather measure equals ``-c``.
    """
    basis = fourier_basis(phase.dim, K)
    x, v = phase.x, phase.v
    raw = phase.integrate(eval_L(model, x, v, 0.0) * np.ones(len(x)))
    hol = holonomy_integrands(model, x, v, basis) @ phase.weights
    return MatherResiduals(raw + c, np.asarray(hol, dtype=float), f"fourier:{K}", raw)


def action_margin(model: HamiltonianModel, phase: PhaseMeasure, omega, grid: TorusGrid) -> float:
    """``int dL/du(x, v, 0) * omega(x) dmu`` for a node field ``omega``."""
    vals = np.asarray(omega, dtype=float).reshape(grid.size)[phase.nodes]
    dl = eval_dL_du(model, phase.x, phase.v, 0.0) * np.ones(len(phase.x))
    return phase.integrate(dl * vals)


# ---------------------------------------------------------------------------
# LP oracle
# ---------------------------------------------------------------------------

@dataclass
class LPMatherResult:
    min_action: float
    measure: PhaseMeasure
    holonomy: np.ndarray
    velocities: np.ndarray
    iterations: int

    def __iter__(self):
        yield self.min_action
        yield self.measure


def velocity_grid(dim: int, v_max: float, M: int) -> np.ndarray:
    """Symmetric uniform velocity lattice containing ``v = 0``; shape ``(M**dim, dim)``."""
    if M < 1 or M % 2 == 0:
        raise ValueError("M must be a positive odd integer so that v = 0 is a node")
    if not v_max > 0:
        raise ValueError("v_max must be positive")
    axis = np.linspace(-v_max, v_max, M) if M > 1 else np.zeros(1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def default_v_max(model: HamiltonianModel, grid: TorusGrid, p_radius: float = 10.0) -> float:
    """``1.05 * max |dH/dp|`` over nodes and the audited covector radius."""
    x = grid.coords.reshape(grid.size, grid.dim)
    speeds = []
    for sgn in (-1.0, 1.0):
        for k in range(grid.dim):
            p = np.zeros_like(x)
            p[:, k] = sgn * p_radius
            speeds.append(np.max(np.abs(model.dH_dp(x, p, np.zeros(len(x))))))
    return 1.05 * float(max(speeds))


def lp_mather_oracle(model: HamiltonianModel, grid: TorusGrid, v_max: Optional[float] = None,
                     M: int = 33, c: Optional[float] = None, K: int = 5) -> LPMatherResult:
    """Minimise the action over holonomic probability measures on a finite lattice.

    ``min_action`` is reported unshifted; it approximates ``-c``. ``c`` is only
    used to annotate the returned measure.
    """
    if v_max is None:
        v_max = default_v_max(model, grid)
    V = velocity_grid(grid.dim, v_max, M)
    nvar = grid.size * len(V)
    if nvar > 200_000:
        raise ValueError(f"LP has {nvar} variables; the limit is 200000")
    xs = grid.coords.reshape(grid.size, grid.dim)
    X = np.repeat(xs, len(V), axis=0)
    VV = np.tile(V, (grid.size, 1))
    nodes = np.repeat(np.arange(grid.size), len(V))
    cost = eval_L(model, X, VV, 0.0) * np.ones(nvar)
    basis = fourier_basis(grid.dim, K)
    rows = holonomy_integrands(model, X, VV, basis)
    A = np.vstack([np.ones((1, nvar)), rows])
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    try:
        res = solve_lp(cost, A, b)
    except LPError as exc:
        msg = str(exc)
        if "infeasible" in msg:
            raise LPError(f"holonomy constraints are inconsistent (assembly error): {msg}") from exc
        raise LPError(f"occupation LP is ill-posed: {msg}") from exc
    support = np.flatnonzero(res.x > 1e-14)
    w = res.x[support]
    w = w / np.sum(w)
    meta = {"v_max": float(v_max), "M": int(M), "K": int(K)}
    if c is not None:
        meta["c"] = float(c)
    mu = PhaseMeasure(grid.dim, nodes[support], X[support], VV[support], w, "lp", meta)
    return LPMatherResult(float(res.objective), mu, rows @ res.x, V, res.iterations)


def measure_family(model: HamiltonianModel, grid: TorusGrid, u, lam: float, eta: float,
                   sources: Sequence, *, mode: str = "aje") -> list:
    """Adjoint-derived phase measures, one per source point."""
    out = []
    for x0 in sources:
        th = solve_adjoint(model, grid, u, lam, eta, x0, mode=mode)
        out.append((th, build_phase_measure(model, grid, u, th, label=f"adjoint@{th.source}")))
    return out
