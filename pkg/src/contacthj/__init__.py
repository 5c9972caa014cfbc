"""Numerical laboratory for vanishing-contact selection in viscous Hamilton-Jacobi equations on the torus."""

from .errors import (ConfigError, ContactHJError, DomainError, InvariantError, LPError,
                     NumericalError, PrerequisiteError, ResolutionError, SelectionError,
                     SolverError)
from .grid import GridField, TorusGrid
from .models import HamiltonianModel, audit_assumptions, build_model, get_model

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContactHJError", "DomainError", "GridField", "HamiltonianModel",
    "InvariantError", "LPError", "NumericalError", "PrerequisiteError", "ResolutionError",
    "SelectionError", "SolverError", "TorusGrid", "audit_assumptions", "build_model", "get_model",
]
