"""Periodic lattices on [0, 2*pi)^n and the monotone finite-difference scheme.

Fields are plain ``numpy`` arrays of shape ``grid.shape``; flattening is always
C order, which is also the lexicographic row order used in CSV output.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .models import HamiltonianModel, TWO_PI

SIGMA_FACTOR = 1.05
_SIGMA_FLOOR = 1e-8


class MonotonicityWarning(UserWarning):
    """Numerical viscosity below what monotonicity of the scheme requires."""


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    N: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if int(self.N) != self.N or self.N < 8:
            raise ValueError("N must be an integer >= 8")

    @property
    def h(self) -> float:
        return TWO_PI / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def nodes_1d(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    @property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (dim,)``."""
        axes = np.meshgrid(*([self.nodes_1d] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    @property
    def indices(self) -> np.ndarray:
        """Multi-indices of nodes in C order, shape ``(size, dim)``."""
        return np.array(list(np.ndindex(*self.shape)), dtype=int).reshape(self.size, self.dim)

    def node(self, x) -> int:
        """Flat index of the node nearest to point ``x`` (periodically)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint(np.mod(x, TWO_PI) / self.h).astype(int) % self.N
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def multi_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def evaluate(self, fn) -> np.ndarray:
        """Apply a vectorised function of points to every node."""
        return np.asarray(fn(self.coords), dtype=float) * np.ones(self.shape)


@dataclass
class GridField:
    grid: TorusGrid
    values: np.ndarray
    name: str = "value"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size != self.grid.size:
            raise ValueError(f"field has {self.values.size} entries, grid has {self.grid.size}")
        self.values = self.values.reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def to_csv(self, path) -> None:
        write_fields_csv(path, self.grid, {self.name: self.values})

    @classmethod
    def from_csv(cls, path, grid: TorusGrid, name: str = "value") -> "GridField":
        return cls(grid, read_fields_csv(path, grid)[name], name)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def diff_forward(grid: TorusGrid, f: np.ndarray, axis: int) -> np.ndarray:
    """Periodic forward difference ``(f(x + h e) - f(x)) / h``."""
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for dimension {grid.dim}")
    return (np.roll(f, -1, axis=axis) - f) / grid.h


def diff_backward(grid: TorusGrid, f: np.ndarray, axis: int) -> np.ndarray:
    """Periodic backward difference ``(f(x) - f(x - h e)) / h``."""
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for dimension {grid.dim}")
    return (f - np.roll(f, 1, axis=axis)) / grid.h


def one_sided_gradients(grid: TorusGrid, f: np.ndarray):
    """Backward and forward gradients stacked on a trailing axis."""
    a = np.stack([diff_backward(grid, f, k) for k in range(grid.dim)], axis=-1)
    b = np.stack([diff_forward(grid, f, k) for k in range(grid.dim)], axis=-1)
    return a, b


def centered_gradient(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    a, b = one_sided_gradients(grid, f)
    return 0.5 * (a + b)


def laplacian(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Standard (2n+1)-point periodic Laplacian."""
    out = -2.0 * grid.dim * f
    for k in range(grid.dim):
        out = out + np.roll(f, 1, axis=k) + np.roll(f, -1, axis=k)
    return out / grid.h**2


def lipschitz_constant(grid: TorusGrid, f: np.ndarray) -> float:
    """Largest forward difference quotient over nodes and axes."""
    return float(max(np.max(np.abs(diff_forward(grid, f, k))) for k in range(grid.dim)))


# ---------------------------------------------------------------------------
# numerical viscosity
# ---------------------------------------------------------------------------

def global_sigma(model, grid, u, w, factor=SIGMA_FACTOR) -> float:
    """``factor * max |dH/dp|`` at centred gradients, a single scalar."""
    p = centered_gradient(grid, u)
    return float(factor * np.max(np.abs(model.dH_dp(grid.coords, p, w)), initial=0.0))


def _stencil_sigma(model, x, a, b, w, factor=SIGMA_FACTOR):
    n = a.shape[-1]
    acc = np.zeros(a.shape)
    for corner in itertools.product((False, True), repeat=n):
        q = np.where(np.array(corner), b, a)
        acc += model.dH_dp(x, q, w) ** 2
    return factor * np.sqrt(acc + _SIGMA_FLOOR**2)


def local_sigma(model, grid, u, w, factor=SIGMA_FACTOR) -> np.ndarray:
    """Node- and axis-wise viscosity, shape ``grid.shape + (dim,)``.

    Root-sum-square of ``dH/dp_k`` over all corners of the one-sided gradient
    box, which dominates ``max |dH/dp_k|`` on that box for convex ``H`` and
    is smooth in ``u`` away from flat stencils.
    """
    a, b = one_sided_gradients(grid, u)
    return _stencil_sigma(model, grid.coords, a, b, w, factor)


SigmaSpec = Union[str, float, np.ndarray]


def resolve_sigma(model, grid, u, w, sigma: SigmaSpec, factor=SIGMA_FACTOR):
    if isinstance(sigma, str):
        if sigma in ("auto", "global"):
            return global_sigma(model, grid, u, w, factor)
        if sigma == "local":
            return local_sigma(model, grid, u, w, factor)
        raise ValueError(f"unknown sigma policy {sigma!r}")
    return sigma


def _broadcast_sigma(sig, grid):
    """Scalar, node field, or node-by-axis array -> shape ``grid.shape + (dim,)``."""
    sig = np.asarray(sig, dtype=float)
    target = grid.shape + (grid.dim,)
    if sig.ndim == grid.dim and sig.shape == grid.shape:
        sig = sig[..., None]
    return np.broadcast_to(sig, target)


def lf_hamiltonian(model: HamiltonianModel, grid: TorusGrid, u, w, sigma: SigmaSpec = "auto"):
    """Lax-Friedrichs numerical Hamiltonian.

    ``H(x, (D-u + D+u)/2, w) - sum_k sigma_k/2 (D+_k u - D-_k u)``. ``sigma`` may
    be a scalar, a per-node/per-axis array, or a policy name. A warning is
    issued when it falls below ``|dH/dp|`` at the centred gradient.
    """
    w = np.broadcast_to(np.asarray(w, dtype=float), grid.shape)
    a, b = one_sided_gradients(grid, u)
    p = 0.5 * (a + b)
    x = grid.coords
    sig_arr = _broadcast_sigma(resolve_sigma(model, grid, u, w, sigma), grid)
    need = np.abs(model.dH_dp(x, p, w))
    if np.any(sig_arr < need * (1 - 1e-12) - 1e-14):
        warnings.warn("sigma below |dH/dp| at centred gradients; scheme may be non-monotone",
                      MonotonicityWarning, stacklevel=2)
    return model.H(x, p, w) - 0.5 * np.sum(sig_arr * (b - a), axis=-1)


def diffusion_coefficient(model, grid, eta: float = 0.0) -> np.ndarray:
    return model.alpha(grid.coords) + eta**2


def scheme_residual(model, grid, u, *, contact=0.0, discount=0.0, eta=0.0, c=0.0,
                    sigma: SigmaSpec = "local", factor=SIGMA_FACTOR) -> np.ndarray:
    """``Hhat(x, Du, contact*u) + discount*u - (alpha + eta^2) Lap u - c``.

    ``contact = lambda`` gives the discounted contact equation, ``discount = delta``
    with ``contact = 0`` the classical discounted auxiliary, both zero the
    critical equation.
    """
    w = contact * u
    sig = resolve_sigma(model, grid, u, w, sigma, factor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MonotonicityWarning)
        hhat = lf_hamiltonian(model, grid, u, w, sig)
    return hhat + discount * u - diffusion_coefficient(model, grid, eta) * laplacian(grid, u) - c


def _neighbours(grid):
    idx = np.arange(grid.size).reshape(grid.shape)
    minus = [np.roll(idx, 1, axis=k).ravel() for k in range(grid.dim)]
    plus = [np.roll(idx, -1, axis=k).ravel() for k in range(grid.dim)]
    return idx.ravel(), minus, plus


def scheme_jacobian(model, grid, u, *, contact=0.0, discount=0.0, eta=0.0,
                    sigma: SigmaSpec = "local", factor=SIGMA_FACTOR, split=False):
    """Jacobian of :func:`scheme_residual` with respect to ``u``.

    For the local policy the dependence of ``sigma`` on the stencil is
    differentiated by central differences; scalar or fixed ``sigma`` is frozen.
    With ``split=True`` returns ``(reaction_diagonal, rest)`` where ``rest``
    annihilates constants.
    """
    n, h = grid.dim, grid.h
    x = grid.coords
    w = contact * u
    a, b = one_sided_gradients(grid, u)
    p = 0.5 * (a + b)
    g = model.dH_dp(x, p, w)
    local = isinstance(sigma, str) and sigma == "local"
    if local:
        sig = _stencil_sigma(model, x, a, b, w, factor)
    else:
        sig = _broadcast_sigma(resolve_sigma(model, grid, u, w, sigma, factor), grid)
    jump = b - a
    dG_da = 0.5 * g + 0.5 * sig
    dG_db = 0.5 * g - 0.5 * sig
    dG_dw = model.dH_du(x, p, w)
    if local:
        for j in range(n):
            step = 1e-6 * (1.0 + np.abs(a[..., j]))
            e = np.zeros(n)
            e[j] = 1.0
            da = (_stencil_sigma(model, x, a + step[..., None] * e, b, w, factor)
                  - _stencil_sigma(model, x, a - step[..., None] * e, b, w, factor)) / (2 * step[..., None])
            dG_da[..., j] -= 0.5 * np.sum(da * jump, axis=-1)
            step = 1e-6 * (1.0 + np.abs(b[..., j]))
            db = (_stencil_sigma(model, x, a, b + step[..., None] * e, w, factor)
                  - _stencil_sigma(model, x, a, b - step[..., None] * e, w, factor)) / (2 * step[..., None])
            dG_db[..., j] -= 0.5 * np.sum(db * jump, axis=-1)
        if contact != 0.0:
            step = 1e-6 * (1.0 + np.abs(w))
            dw = (_stencil_sigma(model, x, a, b, w + step, factor)
                  - _stencil_sigma(model, x, a, b, w - step, factor)) / (2 * step[..., None])
            dG_dw = dG_dw - 0.5 * np.sum(dw * jump, axis=-1)

    D = diffusion_coefficient(model, grid, eta).ravel()
    centre, minus, plus = _neighbours(grid)
    rows, cols, vals = [centre], [centre], [2 * n * D / h**2]
    for j in range(n):
        ga, gb = dG_da[..., j].ravel(), dG_db[..., j].ravel()
        rows += [centre, centre, centre]
        cols += [centre, minus[j], plus[j]]
        vals += [(ga - gb) / h, -ga / h - D / h**2, gb / h - D / h**2]
    rest = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size)).tocsr()
    reaction = (contact * dG_dw + discount).ravel() * np.ones(grid.size)
    if split:
        return reaction, rest
    return (rest + sp.diags(reaction)).tocsr()


# ---------------------------------------------------------------------------
# linearised operator for the adjoint problem
# ---------------------------------------------------------------------------

@dataclass
class LinearizedOperator:
    """Sparse operator ``A = reaction + transport + diffusion`` on node fields."""

    grid: TorusGrid
    reaction: np.ndarray
    transport: sp.csr_matrix
    diffusion: sp.csr_matrix
    beta: np.ndarray
    velocity: np.ndarray
    mode: str = "aje"

    @property
    def matrix(self) -> sp.csr_matrix:
        return (sp.diags(self.reaction) + self.transport + self.diffusion).tocsr()

    @property
    def T(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def __matmul__(self, f):
        return (self.matrix @ np.ravel(f)).reshape(np.shape(f))

    def row(self, i):
        return self.matrix.getrow(i)

    def col(self, j):
        return self.matrix.getcol(j)


def lf_transport(grid: TorusGrid, velocity: np.ndarray, sigma) -> sp.csr_matrix:
    """Matrix of ``<b, D0 phi> - sum_k sigma_k/2 (D+_k - D-_k) phi``.

    The Lax-Friedrichs linearisation with frozen viscosity. Off-diagonal
    entries ``-(sigma_k -+ b_k)/(2h)`` are non-positive whenever
    ``sigma_k >= |b_k|``; rows sum to zero.
    """
    n, h = grid.dim, grid.h
    sig = _broadcast_sigma(sigma, grid)
    centre, minus, plus = _neighbours(grid)
    rows, cols, vals = [], [], []
    for k in range(n):
        bk, sk = velocity[..., k].ravel(), sig[..., k].ravel()
        rows += [centre, centre, centre]
        cols += [centre, minus[k], plus[k]]
        vals += [sk / h, -(sk + bk) / (2 * h), -(sk - bk) / (2 * h)]
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size)).tocsr()


def upwind_transport(grid: TorusGrid, velocity: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``<b, grad phi>`` with first-order upwinding.

    Backward differences where ``b_k > 0`` and forward where ``b_k < 0``, so
    every off-diagonal entry is non-positive and rows sum to zero.
    """
    n, h = grid.dim, grid.h
    centre, minus, plus = _neighbours(grid)
    rows, cols, vals = [], [], []
    for k in range(n):
        bk = velocity[..., k].ravel()
        pos, neg = np.maximum(bk, 0.0), np.minimum(bk, 0.0)
        rows += [centre, centre, centre]
        cols += [centre, minus[k], plus[k]]
        vals += [(pos - neg) / h, -pos / h, neg / h]
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size)).tocsr()


def diffusion_matrix(grid: TorusGrid, coefficient: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``-D(x) Lap phi`` (row-wise coefficient)."""
    n, h = grid.dim, grid.h
    D = np.broadcast_to(coefficient, grid.shape).ravel()
    centre, minus, plus = _neighbours(grid)
    rows, cols, vals = [centre], [centre], [2 * n * D / h**2]
    for k in range(n):
        rows += [centre, centre]
        cols += [minus[k], plus[k]]
        vals += [-D / h**2, -D / h**2]
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size)).tocsr()


def assemble_linearized(model, grid, u, lam: float, eta: float = 0.0, *, mode: str = "aje",
                        sigma: SigmaSpec = "local", transport: str = "upwind") -> LinearizedOperator:
    """Linearised operator whose transpose defines the adjoint density.

    ``mode="aje"`` freezes coefficients at ``(x, Du, 0)``:
    ``A phi = lam * dH/du * phi + T phi - (alpha + eta^2) Lap phi``, where the
    transport ``T`` is the frozen-viscosity Lax-Friedrichs linearisation of the
    scheme (``transport="lf"``) or first-order upwinding of
    ``<dH/dp, grad phi>`` (``transport="upwind"``, default). The LF form keeps the
    scheme's numerical viscosity in the adjoint, which makes the pairing of the
    adjoint density with the discrete equation exact.
    ``mode="jacobian"`` uses the exact Jacobian of the discounted scheme, whose
    coefficients sit at ``(x, Du, lam*u)``.
    """
    if lam < 0 or eta < 0:
        raise ValueError("lambda and eta must be non-negative")
    x = grid.coords
    p = centered_gradient(grid, u)
    if mode == "aje":
        zero = np.zeros(grid.shape)
        beta = model.dH_du(x, p, zero) * np.ones(grid.shape)
        vel = model.dH_dp(x, p, zero)
        if transport == "lf":
            sig = resolve_sigma(model, grid, u, zero, sigma)
            T = lf_transport(grid, vel, sig)
        elif transport == "upwind":
            T = upwind_transport(grid, vel)
        else:
            raise ValueError(f"unknown transport discretisation {transport!r}")
        diffusion = diffusion_matrix(grid, diffusion_coefficient(model, grid, eta))
        return LinearizedOperator(grid, (lam * beta).ravel(), T, diffusion, beta, vel, mode)
    if mode == "jacobian":
        w = lam * u
        beta = model.dH_du(x, p, w) * np.ones(grid.shape)
        vel = model.dH_dp(x, p, w)
        reaction, rest = scheme_jacobian(model, grid, u, contact=lam, eta=eta, sigma=sigma,
                                         split=True)
        diffusion = diffusion_matrix(grid, diffusion_coefficient(model, grid, eta))
        T = (rest - diffusion).tocsr()
        # the exact reaction row carries lam * dH/du up to the sigma(w) term
        return LinearizedOperator(grid, reaction, T, diffusion,
                                  reaction.reshape(grid.shape) / lam if lam > 0 else beta,
                                  vel, mode)
    raise ValueError(f"unknown adjoint mode {mode!r}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _coord_headers(dim):
    return [f"i{k}" for k in range(dim)] + [f"x{k}" for k in range(dim)]


def write_fields_csv(path, grid: TorusGrid, fields: dict) -> None:
    """Write named node fields; columns ``i0.., x0.., <field names>``."""
    names = list(fields)
    cols = [np.asarray(fields[k], dtype=float).reshape(grid.size) for k in names]
    idx = grid.indices
    pts = grid.coords.reshape(grid.size, grid.dim)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_coord_headers(grid.dim) + names)
        for r in range(grid.size):
            writer.writerow([int(i) for i in idx[r]] + [repr(float(v)) for v in pts[r]]
                            + [repr(float(c[r])) for c in cols])


def read_fields_csv(path, grid: Optional[TorusGrid] = None) -> dict:
    """Read a file written by :func:`write_fields_csv` into ``{name: array}``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    dim = sum(1 for hname in header if hname.startswith("i") and hname[1:].isdigit())
    if grid is None:
        N = int(round(len(rows) ** (1.0 / dim)))
        grid = TorusGrid(dim, N)
    data = np.array([[float(v) for v in row] for row in rows]) if rows else np.empty((0, len(header)))
    out = {}
    for j, name in enumerate(header[2 * dim:], start=2 * dim):
        out[name] = data[:, j].reshape(grid.shape)
    return out
