import numpy as np
import pytest
from scipy.integrate import quad

from paramhom.experiments import ExperimentConfig
from paramhom.experiments.families import displacement_bounds, sine_modes
from paramhom.gpc import IndexSet, best_n_indices, chaos_matrix, legendre_eval, tensor_rule
from paramhom.solvers_displacement import (DisplacementProblem, QuadratureTooLow, b_energy_error,
                                           galerkin_error_study, galerkin_orthogonality_residual, project_gpc,
                                           solve_displacement_at_z, solve_semidiscrete_galerkin)
from paramhom.tensor_fields import AffineElasticTensor, TensorField, ValidationFailure, isotropic_to_tensor

SCALE = 0.25


def proportional_problem(n=4):
    # a(z) = (1 + SCALE z) abar, so u(z) = u(0) / (1 + SCALE z)
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    psi = TensorField.constant(isotropic_to_tensor(SCALE, SCALE))
    a = AffineElasticTensor(abar, [(psi, 4 * SCALE)], alpha0=2.0, beta0=4.0)
    return DisplacementProblem(a, np.array([1.0, -0.5]), n=n)


def chaos_factor(k):
    return quad(lambda t: 0.5 * legendre_eval(k, t) / (1 + SCALE * t), -1, 1, epsabs=1e-14)[0]


def small_sine(n=4, modes=3):
    cfg = ExperimentConfig.defaults("displacement").with_overrides(
        [f"discretization.mesh={n}", f"problem.modes={modes}"])
    return sine_modes(cfg)


def test_projection_matches_scalar_oracle():
    prob = proportional_problem()
    u0 = prob.model(None).solve(np.zeros(1))
    lam = IndexSet.total_degree(1, 4)
    e = project_gpc(prob, lam, quad_points=30)
    for i, nu in enumerate(lam):
        assert np.allclose(e.coeffs[i], chaos_factor(nu.order) * u0, atol=1e-12)


def test_galerkin_converges_to_scalar_oracle():
    prob = proportional_problem()
    u0 = prob.model(None).solve(np.zeros(1))
    e = solve_semidiscrete_galerkin(prob, IndexSet.total_degree(1, 12))
    for k in range(3):
        assert np.allclose(e.coeffs[k], chaos_factor(k) * u0, rtol=1e-8, atol=1e-12 * np.abs(u0).max())
    assert e.info["asymmetry"] < 1e-12


def test_mean_only_galerkin_is_mean_solve():
    prob = small_sine()
    e = solve_semidiscrete_galerkin(prob, IndexSet.total_degree(3, 0))
    at_zero = solve_displacement_at_z(prob, np.zeros(3))
    assert np.allclose(prob.space.expand(e.coeffs[0]), at_zero.values, atol=1e-12)


def test_galerkin_is_energy_optimal():
    prob = small_sine()
    model = prob.model(None)
    lam = best_n_indices(displacement_bounds(prob), 6)
    zs, w = tensor_rule([5] * 3)
    ref = model.solve_many(zs)
    gal = solve_semidiscrete_galerkin(prob, lam)
    proj = project_gpc(prob, lam, quad_points=5)
    e_gal = b_energy_error(model, gal, zs, w, ref)
    assert e_gal <= b_energy_error(model, proj, zs, w, ref) * (1 + 1e-10)
    # any perturbation of the Galerkin coefficients increases the energy error
    rng = np.random.default_rng(0)
    for _ in range(3):
        gal.coeffs += 1e-4 * rng.standard_normal(gal.coeffs.shape)
        assert b_energy_error(model, gal, zs, w, ref) > e_gal


def test_orthogonality_residual():
    prob = small_sine()
    model = prob.model(None)
    lam = best_n_indices(displacement_bounds(prob), 8)
    e = solve_semidiscrete_galerkin(prob, lam)
    assert galerkin_orthogonality_residual(model.matrix, model.load, e, lam.max_order + 2) < 1e-10


def test_solve_many_matches_single_solves():
    prob = small_sine()
    model = prob.model(None)
    zs = np.random.default_rng(2).uniform(-1, 1, (4, 3))
    assert np.allclose(model.solve_many(zs), [model.solve(z) for z in zs], atol=1e-12)


def test_error_study_decreases():
    prob = small_sine()
    rep = galerkin_error_study(prob, displacement_bounds(prob), [1, 2, 4, 8], reference_points=4)
    err = rep.column("error")
    assert all(a > b for a, b in zip(err, err[1:]))
    assert rep.metadata["slope"] < -1


def test_low_quadrature_warns():
    with pytest.warns(QuadratureTooLow):
        project_gpc(proportional_problem(), IndexSet.total_degree(1, 3), quad_points=2)


def test_ellipticity_budget_enforced():
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    psi = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    with pytest.raises(ValidationFailure):
        AffineElasticTensor(abar, [(psi, 4.0)], alpha0=2.0, beta0=4.0)
