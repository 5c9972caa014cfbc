"""Stage orchestration and on-disk artifacts for one experiment directory.

Stages and the artifacts they own:

    audit    audit.json
    ergodic  ergodic.json
    sweep    sweep.json, sweep.csv
    solve    critical.json, critical.csv
    adjoint  adjoint.json, adjoint.csv, measures.csv
    mather   residuals.json, lp_measure.csv
    select   selection.json, fields.csv

Every stage reads what it needs from the directory, so stages can be rerun
individually. ``run.json`` collects versions, settings and wall-clock timings;
all other files are deterministic functions of the configuration.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, solve_config
from .errors import ContactHJError, PrerequisiteError
from .grid import TorusGrid, read_fields_csv, write_fields_csv
from .measures import (PhaseMeasure, StateMeasure, build_phase_measure, default_v_max,
                       lp_mather_oracle, mather_residuals, solve_adjoint)
from .models import SampleSpec, audit_assumptions, get_model
from .selection import (SelectionReport, candidates_from_solutions, check_lower_estimate,
                        check_upper_estimate, convergence_comparator, mollification_study,
                        seed_field, select_u0)
from .solvers import (SolveResult, compute_ergodic_constant, lambda_sweep, perron_bound,
                      solve_critical, uniform_bounds)

logger = logging.getLogger(__name__)

STAGES = ("audit", "ergodic", "sweep", "solve", "adjoint", "mather", "select")
ARTIFACT = {"audit": "audit.json", "ergodic": "ergodic.json", "sweep": "sweep.json",
            "solve": "critical.json", "adjoint": "adjoint.json", "mather": "residuals.json",
            "select": "selection.json"}


class StageFailure(ContactHJError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# atomic file helpers
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, writer: Callable) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_json(path: Path, payload) -> None:
    _atomic_write(Path(path), lambda fh: (json.dump(_jsonable(payload), fh, indent=2), fh.write("\n")))


def read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_fields(path: Path, grid, fields: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_fields_csv(tmp, grid, fields)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_measures(path: Path, grid, measures: Sequence) -> None:
    """Several phase measures in one CSV, distinguished by a leading ``measure`` column."""
    def writer(fh):
        w = csv.writer(fh)
        header = None
        for mid, mu in measures:
            if header is None:
                header = ["measure"] + mu.header()
                w.writerow(header)
            for row in mu.rows(grid):
                w.writerow([mid] + row)
    _atomic_write(Path(path), writer)


def read_measures(path: Path, grid) -> dict:
    """Inverse of the multi-measure CSV writer: ``{measure_id: PhaseMeasure}``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        groups: dict = {}
        for row in reader:
            groups.setdefault(row[0], []).append([float(v) for v in row[1:]])
    n = grid.dim
    out = {}
    for mid, rows in groups.items():
        data = np.array(rows)
        idx = data[:, :n].astype(int)
        nodes = np.ravel_multi_index(tuple(idx.T), grid.shape)
        out[mid] = PhaseMeasure(n, nodes, data[:, n:2 * n], data[:, 2 * n:3 * n], data[:, 3 * n], mid)
    del header
    return out


def check_writable(out_dir) -> Path:
    """Create ``out_dir`` if needed and prove a file can be written there."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    fd, probe = tempfile.mkstemp(dir=path, prefix=".probe.")
    os.close(fd)
    os.unlink(probe)
    return path


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class Pipeline:
    """One experiment directory driven by an :class:`ExperimentConfig`."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                 seed: Optional[int] = None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.output)
        self.threads = max(1, int(threads))
        self.seed = cfg.seed if seed is None else int(seed)
        self.model = get_model(cfg.model, cfg.alpha, cfg.dim)
        self.grid = cfg.grid
        self.solve_cfg = solve_config(cfg)

    # -- plumbing ---------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, stage: str):
        p = self.path(ARTIFACT[stage])
        if not p.exists():
            raise PrerequisiteError(stage, ARTIFACT[stage])
        return read_json(p)

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def _record(self, stage: str, status: str, seconds: float, error: Optional[str] = None):
        p = self.path("run.json")
        info = read_json(p) if p.exists() else {}
        info.update({
            "tool": {"name": "contacthj", "version": __version__},
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "threads": self.threads,
        })
        stages = info.setdefault("stages", {})
        entry = {"status": status, "seconds": round(seconds, 6)}
        if error:
            entry["error"] = error
        stages[stage] = entry
        write_json(p, info)

    def run_stage(self, stage: str):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        check_writable(self.out)
        t0 = time.perf_counter()
        try:
            result = getattr(self, f"stage_{stage}")()
        except PrerequisiteError:
            raise
        except Exception as exc:
            self._record(stage, "failed", time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
            raise StageFailure(stage, exc) from exc
        self._record(stage, "ok", time.perf_counter() - t0)
        return result

    def run(self, stages: Sequence[str] = STAGES) -> dict:
        return {stage: self.run_stage(stage) for stage in stages}

    # -- stages -------------------------------------------------------------

    def stage_audit(self):
        a = self.cfg.audit
        spec = SampleSpec(x_grid=a.x_grid, p_radius=a.p_radius, u_range=a.u_range,
                          samples=a.samples, seed=self.seed, h6=self.cfg.h6_variant)
        report = audit_assumptions(self.model, spec)
        write_json(self.path("audit.json"), report.to_dict())
        return report

    def stage_ergodic(self):
        res = compute_ergodic_constant(self.model, self.grid, self.cfg.ergodic.eta, self.solve_cfg,
                                       self.cfg.ergodic.deltas)
        payload = {"model": self.cfg.model, "alpha": self.cfg.alpha, "dim": self.cfg.dim,
                   "N": self.cfg.N}
        payload.update(res.to_dict())
        write_json(self.path("ergodic.json"), payload)
        return res

    def _c(self) -> float:
        return float(self.require("ergodic")["c"])

    def stage_sweep(self):
        c = self._c()
        fam = lambda_sweep(self.model, self.grid, self.cfg.lambdas, self.cfg.eta_for, c,
                           self.solve_cfg)
        bounds = uniform_bounds(self.grid, fam)
        payload = {"c": c, "lambda": self.cfg.lambdas,
                   "eta": [self.cfg.eta_for(lam) for lam in self.cfg.lambdas],
                   "columns": [self._u_name(lam) for lam in self.cfg.lambdas],
                   "solves": [r.summary() for r in fam], "bounds": bounds,
                   "perron_bound": [perron_bound(self.model, self.grid, c, lam) for lam in self.cfg.lambdas]}
        write_json(self.path("sweep.json"), payload)
        _write_fields(self.path("sweep.csv"), self.grid,
                      {self._u_name(lam): r.field for lam, r in zip(self.cfg.lambdas, fam)})
        return fam

    @staticmethod
    def _u_name(lam: float) -> str:
        return f"u[lambda={lam!r}]"

    def _sweep_fields(self):
        info = self.require("sweep")
        data = read_fields_csv(self.path("sweep.csv"), self.grid)
        return info, [data[name] for name in info["columns"]]

    def stage_solve(self):
        c = self._c()
        discounted = None
        if "discounted" in self.cfg.seeds:
            if not self.path(ARTIFACT["sweep"]).exists():
                raise PrerequisiteError("sweep", ARTIFACT["sweep"])
            discounted = {"discounted": self._sweep_fields()[1][-1]}
        eta = self.cfg.ergodic.eta

        def one(spec):
            return solve_critical(self.model, self.grid, eta, c,
                                  seed_field(self.grid, spec, discounted), self.solve_cfg)

        results = self._map(one, self.cfg.seeds)
        payload = {"c": c, "eta": eta,
                   "solves": [dict(seed=s, column=f"omega[{s}]", **r.summary())
                              for s, r in zip(self.cfg.seeds, results)]}
        write_json(self.path("critical.json"), payload)
        _write_fields(self.path("critical.csv"), self.grid,
                      {f"omega[{s}]": r.field for s, r in zip(self.cfg.seeds, results)})
        return results

    def stage_adjoint(self):
        info, fields = self._sweep_fields()
        u, lam = fields[-1], self.cfg.lambdas[-1]
        eta = self.cfg.eta_for(lam)

        def one(x0):
            th = solve_adjoint(self.model, self.grid, u, lam, eta, x0, mode=self.cfg.adjoint_mode,
                               transport=self.cfg.adjoint.transport)
            return th, build_phase_measure(self.model, self.grid, u, th)

        pairs = self._map(one, self.cfg.source_points())
        ids = [f"adjoint_{k}" for k in range(len(pairs))]
        rows = []
        for mid, x0, (th, mu) in zip(ids, self.cfg.source_points(), pairs):
            rows.append({"id": mid, "point": x0, "node": th.source, "lambda": lam, "eta": eta,
                         "mode": th.mode, "normalization": th.normalization,
                         "min_theta": th.min_weight, "mass": th.mass,
                         "relative_residual": th.diagnostics["relative_residual"],
                         "column": f"theta[{mid}]"})
        write_json(self.path("adjoint.json"), {"lambda": lam, "eta": eta,
                                               "transport": self.cfg.adjoint.transport,
                                               "measures": rows})
        cols = {"beta": pairs[0][0].beta}
        cols.update({f"theta[{mid}]": th.theta for mid, (th, _) in zip(ids, pairs)})
        _write_fields(self.path("adjoint.csv"), self.grid, cols)
        _write_measures(self.path("measures.csv"), self.grid,
                        [(mid, mu) for mid, (_, mu) in zip(ids, pairs)])
        return pairs

    def _adjoint(self):
        info = self.require("adjoint")
        data = read_fields_csv(self.path("adjoint.csv"), self.grid)
        measures = read_measures(self.path("measures.csv"), self.grid)
        thetas = [StateMeasure(self.grid, data[row["column"]], row["node"], data["beta"],
                               info["lambda"], info["eta"], row["mode"]) for row in info["measures"]]
        return info, thetas, measures

    def stage_mather(self):
        _, _, measures = self._adjoint()
        c = self._c()
        K = self.cfg.lp.K
        res = {mid: mather_residuals(self.model, mu, c, K).to_dict() for mid, mu in measures.items()}
        payload = {"c": c, "K": K, "basis": f"fourier:{K}", "measures": res}
        if self.cfg.lp.enabled:
            lp_grid = TorusGrid(self.cfg.dim, self.cfg.lp_N)
            v_max = self.cfg.lp.v_max or default_v_max(self.model, lp_grid, self.cfg.audit.p_radius)
            lp = lp_mather_oracle(self.model, lp_grid, v_max, self.cfg.lp.M, c, K)
            actions = [r["raw_action"] for r in res.values()]
            payload["lp"] = {"N": self.cfg.lp_N, "M": self.cfg.lp.M, "v_max": v_max,
                             "min_action": lp.min_action, "shifted": lp.min_action + c,
                             "max_holonomy": float(np.max(np.abs(lp.holonomy))),
                             "support": len(lp.measure.weights), "iterations": lp.iterations,
                             "gap": [a - lp.min_action for a in actions]}
            _write_measures(self.path("lp_measure.csv"), lp_grid, [("lp", lp.measure)])
        write_json(self.path("residuals.json"), payload)
        return payload

    def stage_select(self):
        c = self._c()
        sweep_info, fields = self._sweep_fields()
        _, thetas, measures = self._adjoint()
        crit = self.require("solve")
        data = read_fields_csv(self.path("critical.csv"), self.grid)
        sel = self.cfg.selection
        mus = list(measures.values())
        solutions = [(row["seed"], SolveResult(data[row["column"]], row["iterations"],
                                               row["residual"], c, row["settled"], {}))
                     for row in crit["solves"]]
        cands = candidates_from_solutions(self.model, self.grid, solutions, mus,
                                          threshold=sel.threshold, tol=sel.admissibility_tol,
                                          lift=sel.lift)
        u0 = select_u0(cands)
        family = [SolveResult(f, 0, 0.0, c, True, {"lambda": lam})
                  for f, lam in zip(fields, self.cfg.lambdas)]
        h6 = None
        if self.cfg.h6_variant:
            h6 = np.max(np.stack([sol.field for _, sol in solutions]), axis=0)
        conv = convergence_comparator(family, u0, sel.convergence_tol, sel.slack, h6)
        upper = check_upper_estimate(self.model, self.grid, fields[-1], mus, sel.upper_tol)
        lam, eta = self.cfg.lambdas[-1], self.cfg.eta_for(self.cfg.lambdas[-1])
        lowers = [check_lower_estimate(self.model, self.grid, cd.field, fields[-1], thetas, eta,
                                       sel.lower_tol) for cd in cands.admissible]
        lower = max(lowers, key=lambda r: r.worst)
        report = SelectionReport(u0, cands, conv, upper, lower, list(measures))
        payload = report.to_dict()
        payload["limit_proxy"] = self._u_name(lam)
        payload["mollification"] = mollification_study(self.model, self.grid, u0, c).to_dict()
        write_json(self.path("selection.json"), payload)
        out_fields = {name: f for name, f in zip(sweep_info["columns"], fields)}
        out_fields.update({f"omega[{cd.seed}]": cd.field for cd in cands})
        out_fields["u0"] = u0
        _write_fields(self.path("fields.csv"), self.grid, out_fields)
        return report


def run_pipeline(cfg: ExperimentConfig, out_dir=None, threads: int = 1, seed=None) -> dict:
    """Run every stage in order; raises :class:`StageFailure` naming the failed stage."""
    return Pipeline(cfg, out_dir, threads, seed).run()
