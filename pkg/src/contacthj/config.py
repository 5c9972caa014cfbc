"""Experiment configuration: TOML document -> validated :class:`ExperimentConfig`.

Core settings live at the top level; tuning knobs sit in optional tables.
Unknown keys are rejected so that typos never silently fall back to defaults.

    model = "A2"              # Q | A | A2 | B
    alpha = "zero"            # zero | const:<v> | degenerate
    dim = 1
    N = 256
    lambdas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]   # strictly descending
    eta_rule = "lambda^2"     # lambda^2 | zero | const:<v>
    sources = []              # adjoint source points; empty -> (2j+1)pi/8
    seeds = [...]             # critical-solve seeds, see selection.seed_field
    output = "runs/a2"
    seed = 0
    h6_variant = false
    adjoint_mode = "aje"      # aje | jacobian

    [solver]    tol, max_iterations, cfl, sigma, critical_tol, critical_dt_max,
                critical_horizon, stall_window
    [ergodic]   eta, deltas
    [adjoint]   transport
    [lp]        enabled, N (0 -> N in 1D, min(N, 12) in 2D), M, K, v_max (0 -> automatic)
    [selection] threshold, admissibility_tol, lift, upper_tol, lower_tol,
                convergence_tol, slack
    [audit]     samples, x_grid, p_radius, u_range
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import tomli

from .errors import ConfigError
from .models import MODEL_IDS, parse_alpha
from .grid import TorusGrid
from .selection import DEFAULT_SEEDS, seed_field
from .solvers import SolveConfig


@dataclass
class SolverSection:
    tol: float = 1e-9
    max_iterations: int = 200_000
    cfl: float = 0.8
    sigma: str = "local"
    critical_tol: float = 1e-6
    critical_dt_max: float = 50.0
    critical_horizon: float = 5.0e3
    stall_window: int = 40


@dataclass
class ErgodicSection:
    eta: float = 0.0
    deltas: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])


@dataclass
class AdjointSection:
    transport: str = "upwind"


@dataclass
class LPSection:
    enabled: bool = True
    N: int = 0
    M: int = 33
    K: int = 5
    v_max: float = 0.0


@dataclass
class SelectionSection:
    threshold: float = 5e-2
    admissibility_tol: float = 1e-3
    lift: bool = True
    upper_tol: float = 1e-2
    lower_tol: float = 1e-2
    convergence_tol: float = 5e-2
    slack: float = 0.1


@dataclass
class AuditSection:
    samples: int = 10_000
    x_grid: int = 64
    p_radius: float = 10.0
    u_range: float = 2.0


@dataclass
class ExperimentConfig:
    model: str
    N: int
    lambdas: list
    alpha: str = "zero"
    dim: int = 1
    eta_rule: str = "lambda^2"
    sources: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output: str = "run"
    seed: int = 0
    h6_variant: bool = False
    adjoint_mode: str = "aje"
    solver: SolverSection = field(default_factory=SolverSection)
    ergodic: ErgodicSection = field(default_factory=ErgodicSection)
    adjoint: AdjointSection = field(default_factory=AdjointSection)
    lp: LPSection = field(default_factory=LPSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    audit: AuditSection = field(default_factory=AuditSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.N)

    def eta_for(self, lam: float) -> float:
        return eta_function(self.eta_rule)(lam)

    def source_points(self) -> list:
        if self.sources:
            return [list(map(float, p)) if isinstance(p, list) else [float(p)] * self.dim
                    for p in self.sources]
        return [[(2 * j + 1) * math.pi / 8] * self.dim for j in range(8)]

    @property
    def lp_N(self) -> int:
        if self.lp.N:
            return self.lp.N
        return self.N if self.dim == 1 else min(self.N, 12)


SECTIONS = {"solver": SolverSection, "ergodic": ErgodicSection, "adjoint": AdjointSection,
            "lp": LPSection, "selection": SelectionSection, "audit": AuditSection}


def eta_function(rule: str):
    if rule == "lambda^2":
        return lambda lam: lam * lam
    if rule == "zero":
        return lambda lam: 0.0
    if rule.startswith("const:"):
        value = float(rule.split(":", 1)[1])
        return lambda lam: value
    raise ConfigError(f"eta_rule: expected 'lambda^2', 'zero' or 'const:<v>', got {rule!r}")


def _coerce(key, value, default):
    kind = type(default)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected boolean, got {type(value).__name__}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {type(value).__name__}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected number, got {type(value).__name__}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected string, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected array, got {type(value).__name__}")
        return value
    return value


def _fill(cls, data: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    proto = cls()
    out = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown key {name!r}")
        out[key] = _coerce(name, value, getattr(proto, key))
    return out


_TOP_DEFAULTS = {"model": "", "N": 0, "lambdas": [], "alpha": "", "dim": 0, "eta_rule": "",
                 "sources": [], "seeds": [], "output": "", "seed": 0, "h6_variant": False,
                 "adjoint_mode": ""}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment document."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        where = f" at line {line}" if line else ""
        if "overwrite" in str(exc):
            raise ConfigError(f"duplicate key{where}") from exc
        raise ConfigError(f"malformed document{where}: {exc}") from exc
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    top, sections = {}, {}
    for key, value in raw.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected table")
            sections[key] = SECTIONS[key](**_fill(SECTIONS[key], value, prefix=f"{key}."))
        elif key in _TOP_DEFAULTS:
            top[key] = _coerce(key, value, _TOP_DEFAULTS[key])
        else:
            raise ConfigError(f"unknown key {key!r}")
    for key in ("model", "N", "lambdas"):
        if key not in top:
            raise ConfigError(f"missing required key {key!r}")
    cfg = ExperimentConfig(**top, **sections)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.model not in MODEL_IDS:
        raise ConfigError(f"model: expected one of {MODEL_IDS}, got {cfg.model!r}")
    try:
        parse_alpha(cfg.alpha)
    except ValueError as exc:
        raise ConfigError(f"alpha: {exc}") from exc
    if cfg.dim not in (1, 2):
        raise ConfigError("dim: expected 1 or 2")
    if cfg.N < 8:
        raise ConfigError("N: expected integer >= 8")
    if not cfg.lambdas:
        raise ConfigError("lambdas: expected a non-empty array")
    for v in cfg.lambdas:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError("lambdas: expected positive numbers")
    cfg.lambdas = [float(v) for v in cfg.lambdas]
    if any(b >= a for a, b in zip(cfg.lambdas, cfg.lambdas[1:])):
        raise ConfigError("lambdas must be descending")
    eta_function(cfg.eta_rule)
    for p in cfg.sources:
        pts = p if isinstance(p, list) else [p]
        if len(pts) not in (1, cfg.dim) or not all(isinstance(t, (int, float)) for t in pts):
            raise ConfigError("sources: expected numbers or points of the grid dimension")
    for s in cfg.seeds:
        if not isinstance(s, str):
            raise ConfigError("seeds: expected strings")
        if s != "discounted":
            try:
                seed_field(TorusGrid(1, 8), s)
            except ValueError as exc:
                raise ConfigError(f"seeds: {exc}") from exc
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed: expected an unsigned 64-bit integer")
    if cfg.adjoint_mode not in ("aje", "jacobian"):
        raise ConfigError("adjoint_mode: expected 'aje' or 'jacobian'")
    if cfg.adjoint.transport not in ("upwind", "lf"):
        raise ConfigError("adjoint.transport: expected 'upwind' or 'lf'")
    s = cfg.solver
    if not (s.tol > 0 and s.critical_tol > 0 and s.max_iterations >= 1 and 0 < s.cfl <= 1):
        raise ConfigError("solver: tolerances must be > 0, max_iterations >= 1, 0 < cfl <= 1")
    if s.sigma not in ("local", "global", "auto"):
        raise ConfigError("solver.sigma: expected 'local', 'global' or 'auto'")
    if not (s.critical_dt_max > 0 and s.critical_horizon > 0 and s.stall_window >= 1):
        raise ConfigError("solver: critical_dt_max, critical_horizon, stall_window must be positive")
    if cfg.ergodic.eta < 0 or not cfg.ergodic.deltas or any(
            not isinstance(d, (int, float)) or d <= 0 for d in cfg.ergodic.deltas):
        raise ConfigError("ergodic: eta must be >= 0 and deltas positive")
    cfg.ergodic.deltas = [float(d) for d in cfg.ergodic.deltas]
    if len(set(cfg.ergodic.deltas)) != len(cfg.ergodic.deltas):
        raise ConfigError("ergodic.deltas: values must be distinct")
    lp = cfg.lp
    if lp.M < 1 or lp.M % 2 == 0 or lp.K < 1 or lp.N < 0 or lp.v_max < 0:
        raise ConfigError("lp: M must be odd and positive, K >= 1, N >= 0, v_max >= 0")
    if lp.enabled and cfg.lp_N**cfg.dim * lp.M**cfg.dim > 200_000:
        raise ConfigError("lp: N^dim * M^dim exceeds 200000 variables")
    sel = cfg.selection
    for key in ("threshold", "admissibility_tol", "upper_tol", "lower_tol", "convergence_tol",
                "slack"):
        if not getattr(sel, key) >= 0:
            raise ConfigError(f"selection.{key}: expected a non-negative number")
    a = cfg.audit
    if a.samples < 1 or a.x_grid < 2 or not a.p_radius > 0 or not a.u_range > 0:
        raise ConfigError("audit: samples >= 1, x_grid >= 2, p_radius and u_range > 0")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def solve_config(cfg: ExperimentConfig) -> SolveConfig:
    s = cfg.solver
    return SolveConfig(tol=s.tol, max_iterations=s.max_iterations, cfl=s.cfl, sigma=s.sigma,
                       critical_tol=s.critical_tol, critical_dt_max=s.critical_dt_max,
                       critical_horizon=s.critical_horizon, stall_window=s.stall_window)
