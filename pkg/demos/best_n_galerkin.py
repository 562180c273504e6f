"""Best-N Legendre chaos Galerkin on a six-mode random shear modulus."""
from paramhom.experiments import ExperimentConfig
from paramhom.experiments.families import displacement_bounds, sine_modes
from paramhom.gpc import best_n_indices, summability_certificate
from paramhom.solvers_displacement import galerkin_error_study

cfg = ExperimentConfig.defaults("displacement").with_overrides(["discretization.mesh=6"])
problem = sine_modes(cfg)
bounds = displacement_bounds(problem)
cert = summability_certificate(problem.tensor.betas, 0.4, problem.tensor.kappa_effective)
print(f"l^0.4 summable: {cert.lp_finite}, predicted rate N^-{cert.rate:.1f}")
print("best 8 indices:", best_n_indices(bounds, 8).to_text().strip().replace("\n", ", "))
report = galerkin_error_study(problem, bounds, [1, 2, 4, 8, 16], reference_points=4)
print(report)
print(f"fitted slope {report.metadata['slope']:.2f}")
