import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paramhom.unfolding import (NonIntegerRatio, ScaleSchedule, conservation_identity, fit_additive_model, fold_U,
                                fold_contraction, fractional_part, integer_part, mass_identity,
                                monotone_violation, oscillation_study, separable_fold, unfold_T)

TWO_PI = 2 * np.pi


def smooth_phi(x, y):
    return np.sin(np.pi * x[:, 0]) * (1 + x[:, 1]) * np.cos(TWO_PI * y[:, 0]) + x[:, 0] * y[:, 1] ** 2


def test_schedule_validation():
    s = ScaleSchedule.from_scales([0.25, 0.125, 0.025])
    assert s.ratios == (2, 5) and s.n == 3
    assert np.allclose(s.scales, [0.25, 0.125, 0.025])
    with pytest.raises(NonIntegerRatio):
        ScaleSchedule(0.2, (2.5,))
    assert ScaleSchedule(0.25).aligned() and not ScaleSchedule(0.3).aligned()


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=2), st.integers(2, 9))
def test_integer_fractional_split(x, k):
    x = np.array([x])
    eps = 1.0 / k
    assert np.allclose(integer_part(x, eps) + eps * fractional_part(x, eps), x)
    assert np.all((fractional_part(x, eps) >= 0) & (fractional_part(x, eps) <= 1))


def test_fold_of_slow_linear_field_is_cell_average():
    eps = 0.25
    f = fold_U(lambda x, y: x[:, 0], eps)
    x = np.random.default_rng(0).random((20, 2))
    assert np.allclose(f(x), integer_part(x, eps)[:, 0] + eps / 2)


def test_fold_of_fast_field_is_identity_on_aligned_cells():
    eps = 0.2
    g = lambda y: np.cos(TWO_PI * y[:, 0]) * y[:, 1]
    f = fold_U(lambda x, y: g(y), eps)
    x = np.random.default_rng(1).random((20, 2))
    assert np.allclose(f(x), g(fractional_part(x, eps)))


@given(st.sampled_from([0.5, 0.25, 0.2, 0.3, 0.35]))
def test_fold_inverts_unfold(eps):
    phi = lambda x: np.sin(3 * x[:, 0]) + x[:, 1] ** 2
    folded = fold_U(unfold_T(phi, eps), eps)
    x = np.random.default_rng(2).random((40, 2))
    # cells cut by the boundary of D lose their outside part to the zero extension
    full = np.all(integer_part(x, eps) + eps <= 1 + 1e-12, axis=1)
    assert np.allclose(folded(x[full]), phi(x[full]), atol=1e-12)
    cut = ~full
    assert np.all(np.abs(folded(x[cut])) <= np.abs(phi(x[cut])) + 1e-12)


@settings(max_examples=10)
@given(st.sampled_from([0.5, 0.25, 1 / 3, 0.3, 0.45]))
def test_mass_identity(eps):
    poly = lambda x, y: (1 + x[:, 0] * x[:, 1]) * (y[:, 0] ** 2 + y[:, 1])
    lhs, rhs = mass_identity(poly, eps, points=4, t_points=4, y_points=4)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_conservation_identity_two_scales():
    phi = lambda x: x[:, 0] ** 2 * x[:, 1] + 1
    lhs, rhs = conservation_identity(phi, ScaleSchedule(0.25, (2,)), points=4)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=15)
@given(st.lists(st.floats(-2, 2), min_size=8, max_size=8), st.sampled_from([0.5, 0.25, 0.3]))
def test_fold_is_a_contraction(c, eps):
    # bilinear in x and in y
    phi = lambda x, y: (c[0] + c[1] * x[:, 0] + c[2] * x[:, 1] + c[3] * x[:, 0] * x[:, 1]) * \
        (c[4] + c[5] * y[:, 0] + c[6] * y[:, 1] + c[7] * y[:, 0] * y[:, 1])
    lhs, rhs = fold_contraction(phi, eps, points=3)
    assert lhs <= rhs * (1 + 1e-12) + 1e-14


def test_separable_fold_matches_general_fold():
    eps = 0.25
    slow = lambda x: np.stack([np.sin(x[:, 0]), x[:, 1] ** 2], axis=1)
    fast = lambda y: np.stack([np.cos(TWO_PI * y[:, 0]), y[:, 0] * y[:, 1]], axis=1)
    general = fold_U(lambda x, y: np.einsum("pk,pk->p", slow(x), fast(y)), eps)
    sep = separable_fold(slow, fast, eps)
    x = np.random.default_rng(3).random((30, 2))
    assert np.allclose(general(x), sep(x), atol=1e-12)


def test_oscillation_rate_is_first_order():
    rep = oscillation_study(smooth_phi, [1 / 4, 1 / 8, 1 / 16, 1 / 32])
    assert rep.metadata["slope"] == pytest.approx(1.0, abs=0.1)


def test_additive_fit_recovers_synthetic_model():
    eps = np.array([1 / 4, 1 / 8, 1 / 16])
    ns = np.array([1, 2, 4, 8])
    mat = 0.3 * np.sqrt(eps)[:, None] + 0.05 * ns[None, :] ** -1.5
    fit = fit_additive_model(eps, ns, mat)
    assert fit["residual"] < 1e-6
    assert fit["c1"] == pytest.approx(0.3, rel=1e-4) and fit["s"] == pytest.approx(1.5, rel=1e-3)
    assert monotone_violation(mat) <= 0
    bumped = mat.copy()
    bumped[1, 2] = 1.1 * bumped[1, 1]
    assert monotone_violation(bumped) == pytest.approx(0.1)
