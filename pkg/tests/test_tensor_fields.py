import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from paramhom.tensor_fields import (AffineElasticTensor, IsotropicLameField, ParamPoint, SingularTensor, SymTensor4,
                                    TensorField, ValidationFailure, apply_tensor, as_zvec, derived_constants,
                                    from_mandel, invert_tensor, isotropic_field, isotropic_to_tensor,
                                    kappa_from_ratio, scaled_field, to_mandel, validate_uniform_ellipticity)

finite = st.floats(-10, 10, allow_nan=False)


def sym(a):
    return 0.5 * (a + a.T)


def iso_entries(mu, lam, d=2):
    k = np.eye(d)
    return (mu * (np.einsum("ik,jl->ijkl", k, k) + np.einsum("il,jk->ijkl", k, k))
            + lam * np.einsum("ij,kl->ijkl", k, k))


@given(arrays(float, (2, 2), elements=finite))
def test_mandel_round_trip_and_inner_product(a):
    xi = sym(a)
    v = to_mandel(xi)
    assert np.allclose(from_mandel(v), xi)
    assert v @ v == pytest.approx(np.sum(xi * xi), rel=1e-12, abs=1e-12)


@given(st.floats(0.1, 5), st.floats(0, 5), arrays(float, (2, 2), elements=finite))
def test_isotropic_action_matches_index_formula(mu, lam, a):
    xi = sym(a)
    t = isotropic_to_tensor(mu, lam)
    direct = np.einsum("ijkl,kl->ij", iso_entries(mu, lam), xi)
    assert np.allclose(apply_tensor(t, xi), direct)
    assert np.allclose(t.entries, iso_entries(mu, lam))


def test_full_symmetry_enforced():
    a = iso_entries(1.0, 0.5)
    a[0, 1, 0, 0] += 1.0
    with pytest.raises(ValueError):
        SymTensor4(a)
    assert SymTensor4(iso_entries(1.0, 0.5)).allclose(isotropic_to_tensor(1.0, 0.5))


@given(st.floats(0.1, 5), st.floats(0, 5))
def test_inverse(mu, lam):
    t = isotropic_to_tensor(mu, lam)
    inv = invert_tensor(t)
    assert np.allclose(inv.mandel @ t.mandel, np.eye(3), atol=1e-10)


def test_singular_tensor_rejected():
    with pytest.raises(SingularTensor):
        invert_tensor(SymTensor4.from_mandel(np.diag([1.0, 1.0, 0.0])))


def test_param_point_range():
    assert ParamPoint([0.5], 3).z == (0.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        ParamPoint([1.5])
    with pytest.raises(ValueError):
        as_zvec([0.0, 0.3], 1)
    assert as_zvec([0.2, 0.0], 1).tolist() == [0.2]


@given(st.floats(0, 0.99))
def test_kappa_ratio_inverse(r):
    k = kappa_from_ratio(r)
    assert k / (1 + k) == pytest.approx(r, abs=1e-12)


def test_derived_constants():
    alpha, beta = derived_constants(2.0, 4.0, 1.0)
    assert alpha == pytest.approx(1.0)
    assert beta == pytest.approx(5.0)


def _tensor(bsum_fraction):
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    b = bsum_fraction * 2.0
    psi = scaled_field(lambda x, y: np.sin(np.pi * x[:, 0]), isotropic_to_tensor(b / 2, 0.0), y_dependent=False)
    return AffineElasticTensor(abar, [(psi, b)], alpha0=2.0, beta0=4.0)


@given(st.floats(0.01, 0.95), st.integers(0, 2 ** 16))
def test_sampled_coercivity_respects_alpha(frac, seed):
    a = _tensor(frac)
    rep = validate_uniform_ellipticity(a)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (50, 2))
    for z in (-1.0, 1.0, rng.uniform(-1, 1)):
        ev = np.linalg.eigvalsh(a.mandel([z], x, x))
        assert ev.min() >= rep.alpha * (1 - 1e-12)


def test_mode_bound_violation_detected():
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    psi = scaled_field(lambda x, y: 1 + 0 * x[:, 0], isotropic_to_tensor(0.5, 0.0), y_dependent=False)
    a = AffineElasticTensor(abar, [(psi, 0.5)], 2.0, 4.0)    # true bound is 1.0
    with pytest.raises(ValidationFailure) as err:
        validate_uniform_ellipticity(a)
    assert "psi_1" in err.value.inequality


def test_mode_sum_too_large_rejected():
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    psi = scaled_field(lambda x, y: 1 + 0 * x[:, 0], isotropic_to_tensor(0.5, 0.0), y_dependent=False)
    with pytest.raises(ValidationFailure):
        AffineElasticTensor(abar, [(psi, 1.0)], 2.0, 4.0, kappa=0.5)


def test_lame_field_affine_equivalence():
    lame = IsotropicLameField(lambda x, y: 1 + 0.5 * x[:, 0], lambda x, y: 10 + 0 * x[:, 0],
                              [(lambda x, y: 0.2 * np.sin(np.pi * x[:, 1]), 0.2)],
                              [(lambda x, y: 3 * np.cos(np.pi * x[:, 0]), 3.0)], y_dependent=False)
    aff = lame.to_affine()
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (10, 2))
    z = [0.3]
    direct = isotropic_field(lambda x, y: lame.mu(z, x, y), lambda x, y: lame.lam(z, x, y))(x, x)
    assert np.allclose(aff.mandel(z, x, x), direct)
    mu_min, mu_max, lam_min, lam_max = lame.bounds()
    assert mu_min > 0 and lam_min > 0 and mu_max >= 1.5 and lam_max >= 10
    validate_uniform_ellipticity(lame)


def test_lame_budget_without_finite_kappa_rejected():
    with pytest.raises(ValidationFailure):
        IsotropicLameField(lambda x, y: 1 + 0 * x[:, 0], lambda x, y: 1 + 0 * x[:, 0],
                           [(lambda x, y: 0 * x[:, 0], 1.0)], [(lambda x, y: 0 * x[:, 0], 0.1)],
                           y_dependent=False)
