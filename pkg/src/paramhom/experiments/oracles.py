"""Fast closed-form and identity checks run by the ``oracle-suite`` scenario."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..fem_core import FeSpace, Mesh
from ..gpc import (BoundSequence, IndexSet, best_n_indices, chaos_matrix, gauss_legendre_rule,
                   legendre_coupling, tensor_rule)
from ..homogenization import homogenize
from ..solvers_displacement import (DisplacementProblem, galerkin_orthogonality_residual,
                                    solve_displacement_at_z, solve_semidiscrete_galerkin)
from ..solvers_mixed import (HrModel, PenaltyModel, PenaltyProblem, solve_hr_at_z, solve_hr_galerkin,
                             solve_penalty_galerkin, stress_consistency)
from ..tensor_fields import (AffineElasticTensor, IsotropicLameField, TensorField, ValidationFailure,
                             isotropic_field, isotropic_to_tensor, scaled_field,
                             validate_uniform_ellipticity)
from ..unfolding import fold_contraction, mass_identity, oscillation_study


@dataclass
class Check:
    criterion: str
    name: str
    value: float
    relation: str
    limit: float
    passed: bool


def _le(criterion, name, value, limit) -> Check:
    return Check(criterion, name, float(value), "<=", float(limit), bool(value <= limit))


def _ge(criterion, name, value, limit) -> Check:
    return Check(criterion, name, float(value), ">=", float(limit), bool(value >= limit))


def _true(criterion, name, flag) -> Check:
    return Check(criterion, name, float(bool(flag)), "==", 1.0, bool(flag))


def legendre_checks() -> list[Check]:
    lam = IndexSet.total_degree(4, 6)
    zs, w = tensor_rule([7] * 4)
    lmat = chaos_matrix(lam, zs)
    gram = lmat.T @ (w[:, None] * lmat)
    t, tw = gauss_legendre_rule(4)
    # legendre_coupling(0) = E[z L0 L1] under the uniform probability on [-1, 1]
    oracle = float(np.sum(tw * t * 1.0 * np.sqrt(3.0) * t))
    return [_le("1", "Legendre Gram deviation (M=4, |nu|<=6)", np.abs(gram - np.eye(len(lam))).max(), 1e-12),
            _le("1", "coupling(0) vs quadrature", abs(legendre_coupling(0) - oracle), 1e-12)]


def random_affine_tensor(rng: np.random.Generator, n_modes: int) -> AffineElasticTensor:
    """Mean with shear modulus in [alpha0/2, beta0/4] and x-dependent modes
    whose bounds sum to a random fraction of the admissible budget."""
    alpha0 = rng.uniform(0.5, 3.0)
    mu_lo = alpha0 / 2
    mu_hi = mu_lo * rng.uniform(1.0, 2.0)
    lam = rng.uniform(0.0, 2.0)
    abar = isotropic_field(lambda x, y: mu_lo + (mu_hi - mu_lo) * x[:, 0] ** 2, lambda x, y: lam + 0 * x[:, 0],
                           y_dependent=False)
    beta0 = 2 * mu_hi + 2 * lam
    share = rng.dirichlet(np.ones(n_modes)) * rng.uniform(0.05, 0.95) * alpha0
    modes = []
    for m, b in enumerate(share):
        t = isotropic_to_tensor(b / 2, 0.0)
        modes.append((scaled_field(lambda x, y, m=m: np.cos((m + 1) * np.pi * x[:, 1]), t, y_dependent=False), b))
    return AffineElasticTensor(abar, modes, alpha0, beta0)


def sampled_min_eig(a: AffineElasticTensor, rng: np.random.Generator, n: int = 200) -> float:
    x = rng.uniform(0, 1, (n, 2))
    z = rng.uniform(-1, 1, (n, a.n_modes))
    z[: n // 4] = np.sign(z[: n // 4])
    mats = np.array([a.mandel(z[i], x[i:i + 1], np.zeros((1, 2)))[0] for i in range(n)])
    return float(np.linalg.eigvalsh(mats)[:, 0].min())


def ellipticity_checks(n_configs: int = 100, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = np.inf
    failures = 0
    for _ in range(n_configs):
        a = random_affine_tensor(rng, int(rng.integers(1, 6)))
        try:
            rep = validate_uniform_ellipticity(a)
        except ValidationFailure:
            failures += 1
            continue
        worst = min(worst, sampled_min_eig(a, rng) / rep.alpha)
    bad = isotropic_field(lambda x, y: 1 + 0 * x[:, 0], lambda x, y: 0 * x[:, 0], y_dependent=False)
    psi = scaled_field(lambda x, y: 1.5 + 0 * x[:, 0], isotropic_to_tensor(0.5, 0.0), y_dependent=False)
    detected = False
    try:
        validate_uniform_ellipticity(AffineElasticTensor(bad, [(psi, 1.0)], 2.0, 4.0, kappa=10.0))
    except ValidationFailure:
        detected = True
    return [_le("2", "rejected admissible configurations", failures, 0),
            _ge("2", "sampled coercivity / computed alpha", worst, 1.0 - 1e-12),
            _true("2", "constructed violation detected", detected)]


def homogenization_checks(n_cells: int = 128) -> list[Check]:
    a = isotropic_to_tensor(1.3, 0.7)
    h = homogenize(TensorField.constant(a), FeSpace(Mesh(8), 1, "vector", periodic=True))
    t = TensorField(lambda x, y: (2 + np.cos(2 * np.pi * y[:, 0]))[:, None, None], 1, False, True)
    errs = [abs(homogenize(t, FeSpace(Mesh(n, 1), 1, "vector", periodic=True)).mandel[0, 0] - np.sqrt(3.0))
            for n in (n_cells // 4, n_cells // 2, n_cells)]
    osc = isotropic_field(lambda x, y: 1 + 0.5 * np.sin(2 * np.pi * y[:, 0]) * np.sin(2 * np.pi * y[:, 1]),
                          lambda x, y: 1 + 0 * y[:, 0], x_dependent=False, y_dependent=True)
    ho = homogenize(osc, FeSpace(Mesh(16), 2, "vector", periodic=True))
    from ..fem_core.quadrature import box_rule
    yp, yw = box_rule(2, 8)
    voigt = np.einsum("q,qij->ij", yw, np.asarray(osc(yp, yp)))
    gap = float(np.linalg.eigvalsh(voigt - ho.mandel).min())
    return [_le("3", "constant tensor a0 - a", np.abs(h.mandel - a.mandel).max(), 1e-10),
            _le("3", f"1d analog |a0 - sqrt 3| at {n_cells} cells", errs[-1], 1e-3),
            _true("3", "1d analog error decreasing", errs[0] > errs[1] > errs[2]),
            _ge("3", "eigenvalue of Voigt mean - a0", gap, -1e-12)]


def _hr_problem() -> DisplacementProblem:
    abar = isotropic_field(lambda x, y: 1 + 0.3 * x[:, 0], lambda x, y: 1 + 0 * x[:, 0], y_dependent=False)
    psi = scaled_field(lambda x, y: np.sin(np.pi * x[:, 0]), isotropic_to_tensor(0.05, 0.05), y_dependent=False)
    psi2 = scaled_field(lambda x, y: np.cos(np.pi * x[:, 1]), isotropic_to_tensor(0.02, 0.0), y_dependent=False)
    a = AffineElasticTensor(abar, [(psi, 0.2), (psi2, 0.04)], alpha0=2.0, beta0=6.0)
    return DisplacementProblem(a, lambda x: np.stack([np.sin(np.pi * x[:, 1]), 1 + 0 * x[:, 0]], 1), n=8,
                               midpoint=True)


def _penalty_problem(lb: float = 1e4) -> PenaltyProblem:
    lame = IsotropicLameField(lambda x, y: 1 + 0.2 * x[:, 0], lambda x, y: lb * (1 + 0.5 * x[:, 1]),
                              [(lambda x, y: 0.2 * np.sin(np.pi * x[:, 0]), 0.2)],
                              [(lambda x, y: lb * 0.3 * np.cos(np.pi * x[:, 1]), lb * 0.3)],
                              mean_bounds=(1, 1.2, lb, 1.5 * lb), y_dependent=False)
    return PenaltyProblem(lame, np.array([0.0, -1.0]), n=8)


def hr_checks() -> list[Check]:
    p = _hr_problem()
    z = [0.3, -0.5]
    m = HrModel(p)
    s1 = solve_hr_at_z(p, z, "b1", model=m)
    s2 = solve_hr_at_z(p, z, "b2", model=m)
    ud = solve_displacement_at_z(p, z)
    diff = max(np.abs(s1.sigma.values - s2.sigma.values).max(), np.abs(s1.u.values - s2.u.values).max())
    return [_le("6", "b1 vs b2 per-z solutions", diff, 1e-10),
            _le("6", "||sigma - a eps(u)||", max(stress_consistency(m, s1, z), stress_consistency(m, s2, z)), 1e-10),
            _le("6", "HR u vs displacement solve", np.abs(s1.u.values - ud.values).max(), 1e-10)]


def _exact_points(index_set: IndexSet) -> int:
    """Gauss points per dimension that integrate affine(z) * L_mu * L_nu exactly."""
    return index_set.max_order + 2


def orthogonality_checks(sizes=(1, 4, 8)) -> list[Check]:
    out = []
    p = _hr_problem()
    dh = BoundSequence("displacement", (0.1, 0.02))
    model = p.model()
    hm = HrModel(p)
    pp = _penalty_problem()
    pm = PenaltyModel(pp)
    dp = BoundSequence("incompressible", (0.3,))
    worst = {"displacement": 0.0, "b1": 0.0, "b2": 0.0, "b3": 0.0, "b4": 0.0}
    for n in sizes:
        lam = best_n_indices(dh, n)
        g = solve_semidiscrete_galerkin(p, lam)
        worst["displacement"] = max(worst["displacement"],
                                    galerkin_orthogonality_residual(model.matrix, model.load, g, _exact_points(lam)))
        for form in ("b1", "b2"):
            sg, _ = solve_hr_galerkin(p, lam, form, model=hm)
            rhs = hm.system([0.0, 0.0], form)[1]
            ppd = sg.info.get("points_per_dim", _exact_points(lam))
            worst[form] = max(worst[form], galerkin_orthogonality_residual(
                lambda z, form=form: hm.system(z, form)[0], rhs, sg.info["stacked"], ppd))
        lam1 = best_n_indices(dp, n)
        for form in ("b3", "b4"):
            ug, _ = solve_penalty_galerkin(pp, lam1, form, model=pm)
            rhs = pm.system([0.0], form)[1]
            ppd = ug.info.get("points_per_dim", _exact_points(lam1))
            worst[form] = max(worst[form], galerkin_orthogonality_residual(
                lambda z, form=form: pm.system(z, form)[0], rhs, ug.info["stacked"], ppd))
    for k, v in worst.items():
        out.append(_le("10", f"orthogonality residual {k}", v, 1e-8))
    return out


def unfolding_checks(n_random: int = 100, seed: int = 0) -> list[Check]:
    phi = lambda x, y: (1 + x[:, 0] ** 2 * x[:, 1] + 3 * x[:, 1]) * (y[:, 0] ** 2 + y[:, 0] * y[:, 1] + 0.5)
    mass = 0.0
    for e in (1 / 4, 1 / 8, 0.3):
        lhs, rhs = mass_identity(phi, e)
        mass = max(mass, abs(lhs - rhs) / abs(rhs))
    rng = np.random.default_rng(seed)
    eps, k, sub, ysub = 1 / 4, 4, 2, 3
    gx = np.linspace(0, 1, k * sub + 1)
    gy = np.linspace(0, 1, ysub + 1)
    worst = 0.0
    for _ in range(n_random):
        rgi = RegularGridInterpolator((gx, gx, gy, gy), rng.normal(size=(len(gx), len(gx), len(gy), len(gy))))
        lhs, rhs = fold_contraction(lambda x, y: rgi(np.hstack([x, y])), eps, subdiv=sub, y_subdiv=ysub)
        worst = max(worst, lhs / rhs)
    osc = lambda x, y: np.stack([np.cos(2 * np.pi * y[:, 0]) * (1 + x[:, 0] ** 2),
                                 np.sin(2 * np.pi * y[:, 1]) * np.exp(x[:, 1])], 1)
    slope = oscillation_study(osc, [1 / 4, 1 / 8, 1 / 16, 1 / 32]).metadata["slope"]
    return [_le("9", "mass identity relative defect", mass, 1e-12),
            _le("9", f"max ||U Phi|| / ||Phi|| over {n_random} inputs", worst, 1.0),
            _ge("9", "oscillation gap slope", slope, 0.8)]


ORACLES = {"legendre": legendre_checks, "ellipticity": ellipticity_checks, "homogenization": homogenization_checks,
           "hr-equivalence": hr_checks, "orthogonality": orthogonality_checks, "unfolding": unfolding_checks}
