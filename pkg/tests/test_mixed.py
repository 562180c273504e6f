import numpy as np
import pytest

from paramhom.experiments import ExperimentConfig
from paramhom.experiments.families import hr_smooth, penalty_lame, penalty_problem
from paramhom.gpc import IndexSet
from paramhom.solvers_displacement import DisplacementProblem, solve_displacement_at_z, solve_semidiscrete_galerkin
from paramhom.solvers_mixed import (AlphaStrongViolated, FullDirichletRejected, HrModel, PenaltyModel,
                                    PenaltyProblem, asymptotic_penalty_bounds, check_alpha_strong, coupling_infsup,
                                    penalty_identity_residual, solve_hr_at_z, solve_hr_galerkin,
                                    solve_penalty_at_z, solve_penalty_galerkin, stress_consistency)
from paramhom.tensor_fields import AffineElasticTensor, TensorField, isotropic_to_tensor


def hr_problem(n=4):
    cfg = ExperimentConfig.defaults("hr").with_overrides([f"discretization.mesh={n}"])
    return hr_smooth(cfg)


def pen_problem(lb=100.0, n=4):
    cfg = ExperimentConfig.defaults("penalty").with_overrides([f"discretization.mesh={n}"])
    return penalty_problem(cfg, lb)


Z2 = np.array([0.4, -0.7])


@pytest.mark.parametrize("form", ["b1", "b2"])
def test_hr_at_z_equals_displacement(form):
    prob = hr_problem()
    sol = solve_hr_at_z(prob, Z2, form)
    ref = solve_displacement_at_z(prob, Z2)
    assert np.allclose(sol.u.values, ref.values, atol=1e-11)
    assert stress_consistency(HrModel(prob), sol, Z2) < 1e-11


def test_hr_b2_galerkin_equals_displacement_galerkin():
    prob = hr_problem()
    lam = IndexSet.total_degree(2, 2)
    _, u = solve_hr_galerkin(prob, lam, "b2")
    ref = solve_semidiscrete_galerkin(prob, lam)
    assert np.allclose(u.coeffs, ref.coeffs, atol=1e-11)


def test_hr_b1_galerkin_close_to_displacement():
    prob = hr_problem()
    lam = IndexSet.total_degree(2, 3)
    _, u = solve_hr_galerkin(prob, lam, "b1")
    ref = solve_semidiscrete_galerkin(prob, lam)
    assert np.abs(u.coeffs[0] - ref.coeffs[0]).max() < 1e-3 * np.abs(ref.coeffs[0]).max()


def test_alpha_strong_condition():
    prob = hr_problem()
    assert check_alpha_strong(prob) > 0
    with pytest.raises(AlphaStrongViolated):
        check_alpha_strong(prob, kappa_tilde=1e-6)
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    psi = TensorField.constant(isotropic_to_tensor(0.4, 0.0))
    strong = DisplacementProblem(AffineElasticTensor(abar, [(psi, 0.8)], 2.0, 4.0), np.ones(2), n=2)
    with pytest.raises(AlphaStrongViolated):
        check_alpha_strong(strong)


def test_penalty_forms_agree_at_z():
    prob = pen_problem()
    model = PenaltyModel(prob)
    z = np.array([0.5, -0.2, 0.9])
    s3 = solve_penalty_at_z(prob, z, "b3", model=model)
    s4 = solve_penalty_at_z(prob, z, "b4", model=model)
    assert np.allclose(s3.u.values, s4.u.values, atol=1e-10)
    assert np.allclose(s3.p.values, s4.p.values, rtol=1e-8, atol=1e-10)
    assert penalty_identity_residual(model, s3, z) < 1e-10


def test_penalty_converges_with_lambda():
    # the displacement approaches a finite incompressible limit like 1/lambda
    us = [solve_penalty_at_z(pen_problem(lb), np.zeros(3)).u.values for lb in (1e2, 1e3, 1e4)]
    d1, d2 = np.abs(us[0] - us[1]).max(), np.abs(us[1] - us[2]).max()
    assert d2 < 0.2 * d1


def test_penalty_galerkin_forms_agree_on_mean():
    prob = pen_problem()
    lam = IndexSet.total_degree(3, 2)
    u3, _ = solve_penalty_galerkin(prob, lam, "b3")
    u4, _ = solve_penalty_galerkin(prob, lam, "b4")
    scale = np.abs(u4.coeffs[0]).max()
    assert np.abs(u3.coeffs[0] - u4.coeffs[0]).max() < 1e-2 * scale


def test_full_dirichlet_rejected():
    cfg = ExperimentConfig.defaults("penalty")
    with pytest.raises(FullDirichletRejected):
        PenaltyProblem(penalty_lame(cfg, 100.0), np.ones(2), n=2, dirichlet="all")


def test_coupling_infsup_controls():
    det = {}
    assert coupling_infsup("b3", 4) > 0.1
    assert coupling_infsup("b1", 4) > 0.1
    coupling_infsup("p1p1", 4, details=det)
    assert det["kernel_dim"] >= 1


def test_asymptotic_bounds_formula():
    lame = penalty_lame(ExperimentConfig.defaults("penalty"), 1e4)
    b = asymptotic_penalty_bounds(lame)
    mu_min, _, lam_min, _ = lame.bounds()
    assert np.allclose(b.values, np.maximum(lame.gammas / mu_min, lame.deltas / lam_min) / np.sqrt(3))
