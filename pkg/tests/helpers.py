"""Cached experiment fixtures shared by the test modules."""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from contacthj.grid import TorusGrid
from contacthj.measures import build_phase_measure, solve_adjoint
from contacthj.models import get_model
from contacthj.solvers import compute_ergodic_constant, lambda_sweep

LAMBDAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
SOURCES = tuple((2 * j + 1) * np.pi / 8 for j in range(8))


@dataclass
class Experiment:
    model_id: str
    alpha: str
    N: int
    lambdas: tuple = LAMBDAS
    extra: dict = field(default_factory=dict)

    @cached_property
    def model(self):
        return get_model(self.model_id, self.alpha)

    @cached_property
    def grid(self):
        return TorusGrid(1, self.N)

    @cached_property
    def ergodic(self):
        return compute_ergodic_constant(self.model, self.grid, 0.0)

    @property
    def c(self):
        return self.ergodic.c

    @cached_property
    def family(self):
        return lambda_sweep(self.model, self.grid, self.lambdas, lambda lam: lam * lam, self.c)

    @property
    def u(self):
        return self.family[-1].field

    @property
    def lam(self):
        return self.lambdas[-1]

    @cached_property
    def thetas(self):
        return [solve_adjoint(self.model, self.grid, self.u, self.lam, self.lam**2, [x0])
                for x0 in SOURCES]

    @cached_property
    def measures(self):
        return [build_phase_measure(self.model, self.grid, self.u, th) for th in self.thetas]


@lru_cache(maxsize=None)
def experiment(model_id, alpha="zero", N=256, lambdas=LAMBDAS):
    return Experiment(model_id, alpha, N, tuple(lambdas))
