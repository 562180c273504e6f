"""Penalty-form Galerkin error across three orders of magnitude in lambda."""
from paramhom.experiments import ExperimentConfig
from paramhom.experiments.families import penalty_problem
from paramhom.solvers_mixed import asymptotic_penalty_bounds, penalty_error_study

cfg = ExperimentConfig.defaults("penalty").with_overrides(["discretization.mesh=6"])
for lb in (1e2, 1e4, 1e6):
    problem = penalty_problem(cfg, lb)
    bounds = asymptotic_penalty_bounds(problem.lame)
    rep = penalty_error_study(problem, [1, 2, 4, 8], form="b4", bounds=bounds)
    print(f"lambda_min = {lb:.0e}")
    print(rep)
