"""Scenario registry, runners and artifact emission."""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy

from .. import __version__
from ..gpc import summability_certificate
from ..homogenization import homogenization_rate_study, incompressible_corrector_error
from ..report import ConvergenceReport
from ..solvers_displacement import galerkin_error_study, solve_displacement_at_z
from ..solvers_mixed import (HrModel, asymptotic_penalty_bounds, hr_error_study, infsup_study,
                             penalty_bounds, penalty_error_study, solve_hr_at_z, stress_consistency)
from ..gpc import best_n_indices
from ..tensor_fields import ValidationFailure
from ..unfolding import (error_matrix, fit_additive_model, folded_corrector_error, monotone_violation,
                         two_scale_expansions)
from . import families
from .config import ConfigError, ExperimentConfig
from .oracles import ORACLES, Check, _ge, _le

log = logging.getLogger(__name__)


class ScenarioFailure(RuntimeError):
    """An asserted acceptance window failed; names the criterion."""

    def __init__(self, scenario: str, failed: list[Check]):
        names = "; ".join(f"criterion {c.criterion}: {c.name} = {c.value:.4g} (need {c.relation} {c.limit:.4g})"
                          for c in failed)
        super().__init__(f"{scenario}: {names}")
        self.failed = failed


class OutputConflict(RuntimeError):
    """The output directory holds a run with a different configuration."""


@dataclass
class RunContext:
    """Parallelism for independent work items.  The deterministic flag
    forces sequential evaluation."""
    threads: int = 1
    deterministic: bool = False

    def map(self, fn: Callable, items) -> list:
        items = list(items)
        if self.deterministic or self.threads <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


@dataclass
class Table:
    filename: str
    report: ConvergenceReport
    columns: list | None = None


@dataclass
class Outcome:
    tables: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    description: str
    defaults: dict
    runner: Callable
    families: tuple = ()
    choices: dict = field(default_factory=dict)
    builder: Callable | None = None

    def check(self, cfg: ExperimentConfig) -> None:
        if self.families:
            fam = cfg["problem.family"]
            if fam not in self.families:
                raise ConfigError("problem.family", f"unknown family {fam!r} for {self.name} "
                                  f"(choose from {', '.join(self.families)})")
        for dotted, allowed in self.choices.items():
            if cfg[dotted] not in allowed:
                raise ConfigError(dotted, f"must be one of {', '.join(allowed)}")
        if self.builder is not None:
            try:
                self.builder(cfg)
            except ConfigError:
                raise
            except ValidationFailure as exc:
                raise ConfigError("problem.amplitude", f"coefficients violate ellipticity: {exc}") from None
            except ValueError as exc:
                raise ConfigError("problem", str(exc)) from None


# ---------------------------------------------------------------------------
# runners

def run_oracle_suite(cfg, ctx: RunContext) -> Outcome:
    out = Outcome()
    for name, fn in ORACLES.items():
        t0 = time.perf_counter()
        checks = fn()
        out.checks.extend(checks)
        out.notes.append(f"{name}: {len(checks)} checks in {time.perf_counter() - t0:.2f} s")
    rep = ConvergenceReport(["criterion", "check", "value", "relation", "limit", "passed"])
    for c in out.checks:
        rep.add(int(c.criterion), c.name.replace(",", ";"), c.value, c.relation, c.limit, c.passed)
    out.tables.append(Table("oracle_suite.csv", rep))
    return out


def run_displacement(cfg, ctx: RunContext) -> Outcome:
    p = families.DISPLACEMENT_FAMILIES[cfg["problem.family"]](cfg)
    bounds = families.displacement_bounds(p, cfg["gpc.p"])
    rep = galerkin_error_study(p, bounds, cfg["gpc.n_list"], cfg["discretization.quadrature"])
    errs = rep.column("error")
    slope = rep.metadata["slope"]
    cert = summability_certificate(p.tensor.betas, cfg["gpc.p"], p.tensor.kappa_effective)
    out = Outcome(tables=[Table("galerkin_rate.csv", rep, ["N", "error", "bound_tail", "fitted_slope"])])
    out.checks.append(Check("5", "error strictly decreasing in N", float(np.all(np.diff(errs) < 0)), "==", 1.0,
                            bool(np.all(np.diff(errs) < 0))))
    out.checks.append(_le("5", "fitted log-log slope", slope, -1.0))
    out.notes.append(f"summability: l^{cert.p} norm {cert.lp_norm:.4g}, decay exponent {cert.decay_exponent:.3g}, "
                     f"certified rate s = {cert.rate:.3g}")
    return out


def run_hr(cfg, ctx: RunContext) -> Outcome:
    p = families.DISPLACEMENT_FAMILIES[cfg["problem.family"]](cfg)
    bounds = families.displacement_bounds(p, cfg["gpc.p"])
    rep = hr_error_study(p, bounds, cfg["gpc.n_list"], cfg["gpc.form"], cfg["discretization.quadrature"])
    m = HrModel(p)
    rng = np.random.default_rng(0)
    diff = cons = disp = 0.0
    for z in rng.uniform(-1, 1, (4, p.n_modes)):
        s1 = solve_hr_at_z(p, z, "b1", model=m)
        s2 = solve_hr_at_z(p, z, "b2", model=m)
        ud = solve_displacement_at_z(p, z)
        diff = max(diff, np.abs(s1.sigma.values - s2.sigma.values).max(), np.abs(s1.u.values - s2.u.values).max())
        cons = max(cons, stress_consistency(m, s1, z), stress_consistency(m, s2, z))
        disp = max(disp, np.abs(s1.u.values - ud.values).max())
    out = Outcome(tables=[Table("hr_rate.csv", rep)])
    out.checks += [_le("6", "b1 vs b2 per-z solutions", diff, 1e-10),
                   _le("6", "||sigma - a eps(u)||", cons, 1e-10),
                   _le("6", "HR u vs displacement solve", disp, 1e-10)]
    out.notes.append(f"HR Galerkin stress-error slope {rep.metadata['slope']:.3f}")
    return out


def _spread(values) -> float:
    v = np.asarray(values, float)
    return float(v.max() / v.min())


def run_penalty(cfg, ctx: RunContext) -> Outcome:
    n_list = cfg["gpc.n_list"]
    lams = cfg["problem.lambda_min"]

    def one(lb):
        pp = families.penalty_problem(cfg, lb)
        bounds = asymptotic_penalty_bounds(pp.lame) if cfg["gpc.bound"] == "asymptotic" else penalty_bounds(pp)
        return penalty_error_study(pp, n_list, cfg["gpc.form"], cfg["discretization.quadrature"], bounds=bounds)

    reps = ctx.map(one, lams)
    sweep = ConvergenceReport(["lambda_min", "N", "error_u", "error_p", "relative_u", "relative_p"])
    for lb, rep in zip(lams, reps):
        for row in rep.rows:
            sweep.add(float(lb), *row)
    out = Outcome(tables=[Table("penalty_lambda_sweep.csv", sweep, ["lambda_min", "N", "error_u", "error_p"])])
    if len(lams) > 1:
        su = max(_spread([r.column("error_u")[k] for r in reps]) for k in range(len(n_list)))
        sp_ = max(_spread([r.column("error_p")[k] for r in reps]) for k in range(len(n_list)))
        out.checks += [_le("8", "max over N of error_u spread across lambda_min", su, 2.0),
                       _le("8", "max over N of error_p spread across lambda_min", sp_, 2.0)]
    for lb, rep in zip(lams, reps):
        out.notes.append(f"lambda_min {lb:.0e}: index sets " + " / ".join(
            f"N={n}: {t.strip().replace(chr(10), ' ')}" for n, t in rep.metadata["index_sets"].items()))
    return out


def run_homog_rate(cfg, ctx: RunContext) -> Outcome:
    tensor = families.trig_tensor(cfg)
    rep = homogenization_rate_study(tensor, np.asarray(cfg["problem.forcing"], float), cfg["discretization.eps"],
                                    fine_factor=cfg["discretization.fine_factor"], fine_order=1,
                                    macro_n=cfg["discretization.mesh"], macro_order=cfg["discretization.order"],
                                    y_n=cfg["discretization.y_mesh"], y_order=cfg["discretization.y_order"])
    out = Outcome(tables=[Table("homog_rate.csv", rep, ["eps", "h_fine", "error_H1", "slope"])])
    if len(rep.rows) >= 3:
        slope = rep.metadata["slope"]
        out.checks.append(Check("4", "H1 corrector-error slope", slope, "in", 0.4, bool(0.4 <= slope <= 0.7)))
    eps = cfg["discretization.lambda_eps"]

    def one(lb):
        return incompressible_corrector_error(families.trig_lame(cfg, lb), families.rotational_forcing, eps,
                                              fine_factor=cfg["discretization.lambda_fine_factor"],
                                              macro_n=cfg["discretization.lambda_mesh"],
                                              y_n=cfg["discretization.lambda_y_mesh"])

    lams = cfg["problem.lambda_min"]
    res = ctx.map(one, lams)
    lr = ConvergenceReport(["lambda_min", "eps", "error_H1", "relative_H1"])
    for lb, r in zip(lams, res):
        lr.add(float(lb), float(eps), r["error_H1"], r["relative_H1"])
    out.tables.append(Table("lambda_robust.csv", lr))
    if len(lams) > 1:
        out.checks.append(_le("8", "incompressible corrector error spread across lambda_min",
                              _spread(lr.column("error_H1")), 2.0))
    return out


def run_folded_corrector(cfg, ctx: RunContext) -> Outcome:
    p = families.DISPLACEMENT_FAMILIES[cfg["problem.family"]](cfg)
    bounds = families.displacement_bounds(p, cfg["gpc.p"])
    exps = two_scale_expansions(p, bounds, cfg["gpc.n_list"])
    rep = folded_corrector_error(p, exps, cfg["discretization.eps"], points_per_dim=cfg["discretization.quadrature"],
                                 fine_factor=cfg["discretization.fine_factor"])
    out = Outcome(tables=[Table("corrector_matrix.csv", rep, ["eps", "N", "error_grad", "error_stress"])])
    eps, ns, mat = error_matrix(rep, "error_grad")
    viol = monotone_violation(mat)
    fit = fit_additive_model(eps, ns, mat)
    out.checks += [_le("11", "monotonicity violation of the (eps, N) error matrix", viol, 0.05),
                   _le("11", "additive model relative residual", fit["residual"], 0.3)]
    out.notes.append(f"fit c1 = {fit['c1']:.4g}, c2 = {fit['c2']:.4g}, s = {fit['s']:.3g}")
    eps_s, ns_s, mat_s = error_matrix(rep, "error_stress")
    fs = fit_additive_model(eps_s, ns_s, mat_s)
    out.notes.append(f"stress variant (not asserted): violation {monotone_violation(mat_s):.3g}, "
                     f"residual {fs['residual']:.3g}")
    return out


def run_infsup(cfg, ctx: RunContext) -> Outcome:
    levels = cfg["discretization.levels"]
    sizes = cfg["gpc.n_list"]
    hr_cfg = ExperimentConfig.defaults("hr").with_overrides(
        [f"discretization.mesh={cfg['discretization.mesh']}", f"problem.modes={cfg['problem.modes']}"])
    pen_cfg = ExperimentConfig.defaults("penalty").with_overrides(
        [f"discretization.mesh={cfg['discretization.mesh']}", f"problem.modes={cfg['problem.modes']}"])
    hp = families.hr_smooth(hr_cfg)
    pp = families.penalty_problem(pen_cfg, cfg["problem.lambda_min"][0])
    hr_sets = [best_n_indices(families.displacement_bounds(hp), n) for n in sizes]
    pen_sets = [best_n_indices(asymptotic_penalty_bounds(pp.lame), n) for n in sizes]
    jobs = [("b1", hr_sets, hp), ("b3", pen_sets, pp), ("p1p1", (), None)]
    reps = ctx.map(lambda j: infsup_study(j[0], levels, j[1], j[2]), jobs)
    table = ConvergenceReport(list(reps[0].columns))
    for r in reps:
        table.rows.extend(r.rows)
    out = Outcome(tables=[Table("infsup.csv", table)])
    for (form, _, _), r in zip(jobs, reps):
        md = r.metadata
        if form == "p1p1":
            out.checks.append(_ge("7", "P1/P1 control degradation over levels", md["level_degradation"], 0.5))
        else:
            out.checks.append(_le("7", f"{form} degradation over mesh levels", md["level_degradation"], 0.2))
            out.checks.append(_le("7", f"{form} degradation over index-set sizes", md["lambda_degradation"], 0.2))
    return out


# ---------------------------------------------------------------------------
# registry

_HR_DEFAULTS = {
    "problem": {"family": "hr-smooth", "modes": 2, "decay": 2.0, "amplitude": 0.2, "kappa": 0.0,
                "forcing": [1.0, 0.5]},
    "discretization": {"mesh": 8, "order": 1, "quadrature": 4},
    "gpc": {"n_list": [1, 2, 4, 8], "bound": "displacement", "p": 0.4, "form": "b1"},
}

_PENALTY_DEFAULTS = {
    "problem": {"family": "penalty-modes", "modes": 3, "decay": 2.0, "amplitude": 0.25, "kappa": 0.0,
                "lambda_min": [1e2, 1e4, 1e6], "lambda_ratio": 1.5, "forcing": [0.0, -1.0]},
    "discretization": {"mesh": 8, "quadrature": 4},
    "gpc": {"n_list": [1, 2, 4, 8, 16], "bound": "asymptotic", "form": "b4"},
}

SCENARIOS: dict[str, Scenario] = {}


def _register(sc: Scenario) -> None:
    SCENARIOS[sc.name] = sc


_register(Scenario(
    "oracle-suite", "closed-form and identity oracles (criteria 1, 2, 3, 6, 9, 10)", {}, run_oracle_suite))
_register(Scenario(
    "displacement", "best-N Galerkin error decay for the displacement form (criterion 5)",
    {"problem": {"family": "sine-modes", "modes": 6, "decay": 3.0, "amplitude": 0.6, "kappa": 0.0,
                 "forcing": [1.0, 0.5]},
     "discretization": {"mesh": 8, "order": 1, "quadrature": 5},
     "gpc": {"n_list": [1, 2, 4, 8, 16], "bound": "displacement", "p": 0.4}},
    run_displacement, ("sine-modes", "hr-smooth"), {"gpc.bound": ("displacement",)},
    builder=lambda c: families.DISPLACEMENT_FAMILIES[c["problem.family"]](c)))
_register(Scenario(
    "hr", "Hellinger-Reissner equivalence and Galerkin error over N (criterion 6)", _HR_DEFAULTS, run_hr,
    ("hr-smooth", "sine-modes"), {"gpc.bound": ("displacement",), "gpc.form": ("b1", "b2")},
    builder=lambda c: families.DISPLACEMENT_FAMILIES[c["problem.family"]](c)))
_register(Scenario(
    "penalty", "penalty Galerkin error curves across lambda_min (criterion 8)", _PENALTY_DEFAULTS, run_penalty,
    ("penalty-modes",), {"gpc.bound": ("asymptotic", "computed"), "gpc.form": ("b3", "b4")},
    builder=lambda c: [families.penalty_problem(c, lb) for lb in c["problem.lambda_min"]]))
_register(Scenario(
    "homog-rate", "two-scale corrector H1 rate and incompressible lambda sweep (criteria 4, 8)",
    {"problem": {"family": "trig-isotropic", "amplitude": 0.5, "lambda_min": [1e2, 1e4, 1e6],
                 "lambda_ratio": 3.0, "forcing": [1.0, 1.0]},
     "discretization": {"mesh": 64, "order": 2, "y_mesh": 32, "y_order": 2,
                        "eps": [1 / 8, 1 / 16, 1 / 32, 1 / 64], "fine_factor": 16,
                        "lambda_eps": 1 / 8, "lambda_mesh": 32, "lambda_y_mesh": 16, "lambda_fine_factor": 8}},
    run_homog_rate, ("trig-isotropic",),
    builder=lambda c: (families.trig_tensor(c), [families.trig_lame(c, lb) for lb in c["problem.lambda_min"]])))
_register(Scenario(
    "folded-corrector", "folded two-scale Galerkin corrector error over (eps, N) (criterion 11)",
    {"problem": {"family": "two-scale-modes", "modes": 2, "decay": 1.0, "amplitude": 0.5, "kappa": 0.0,
                 "forcing": [1.0, 0.5]},
     "discretization": {"mesh": 16, "order": 2, "y_mesh": 8, "y_order": 2, "eps": [1 / 4, 1 / 8, 1 / 16],
                        "fine_factor": 8, "quadrature": 3},
     "gpc": {"n_list": [1, 2, 4, 8], "bound": "displacement", "p": 0.4}},
    run_folded_corrector, ("two-scale-modes",), {"gpc.bound": ("displacement",)},
    builder=lambda c: families.two_scale_modes(c)))
_register(Scenario(
    "infsup", "discrete inf-sup constants over mesh levels and index-set sizes (criterion 7)",
    {"problem": {"modes": 2, "lambda_min": [1e4]},
     "discretization": {"mesh": 8, "levels": [8, 16, 32]},
     "gpc": {"n_list": [1, 4, 16]}},
    run_infsup))


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError("run.scenario", f"unknown scenario {name!r} (choose from {', '.join(SCENARIOS)})") from None


# ---------------------------------------------------------------------------
# orchestration

@dataclass
class RunResult:
    scenario: str
    config_hash: str
    out_dir: str
    checks: list
    files: list
    wall_time: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _format_check(c: Check) -> str:
    rel = "in [0.4, 0.7]" if c.relation == "in" else f"{c.relation} {c.limit:.4g}"
    return f"[{'PASS' if c.passed else 'FAIL'}] criterion {c.criterion}: {c.name} = {c.value:.6g} ({rel})"


def run_scenario(cfg: ExperimentConfig, out_dir: str | None = None, force: bool = False) -> RunResult:
    """Run, write CSVs, summary.txt, config.ini and manifest.json; raise
    ScenarioFailure (after writing) when an asserted window fails."""
    sc = get_scenario(cfg.scenario)
    cfg.validate()
    out_dir = out_dir or cfg["run.out"]
    digest = cfg.hash()
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path) and not force:
        with open(manifest_path, encoding="utf-8") as fh:
            old = json.load(fh).get("config_hash")
        if old != digest:
            raise OutputConflict(f"{out_dir} holds a run with config hash {old}, this config hashes to "
                                 f"{digest}; use --force to overwrite")
    os.makedirs(out_dir, exist_ok=True)
    ctx = RunContext(cfg["run.threads"], cfg["run.deterministic"])
    t0 = time.perf_counter()
    outcome = sc.runner(cfg, ctx)
    wall = time.perf_counter() - t0
    files = []
    for t in outcome.tables:
        path = os.path.join(out_dir, t.filename)
        t.report.to_csv(path, {"config_hash": digest}, t.columns)
        files.append(t.filename)
    with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text())
    lines = [f"scenario {sc.name}: {sc.description}", f"config hash {digest}", ""]
    lines += [_format_check(c) for c in outcome.checks]
    if outcome.notes:
        lines += [""] + outcome.notes
    for t in outcome.tables:
        lines += ["", t.filename, str(t.report)]
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    result = RunResult(sc.name, digest, out_dir, outcome.checks, files, wall)
    manifest = {"scenario": sc.name, "config_hash": digest, "status": "pass" if result.passed else "fail",
                "files": files + ["summary.txt", "config.ini"],
                "checks": [{"criterion": c.criterion, "name": c.name, "value": c.value, "relation": c.relation,
                            "limit": c.limit, "passed": c.passed} for c in outcome.checks],
                "wall_time_s": round(wall, 3), "deterministic": cfg["run.deterministic"],
                "threads": cfg["run.threads"],
                "versions": {"paramhom": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                             "python": platform.python_version()}}
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    failed = [c for c in outcome.checks if not c.passed]
    if failed:
        raise ScenarioFailure(sc.name, failed)
    return result
