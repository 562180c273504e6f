import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paramhom.fem_core import FeSpace, Mesh, PeriodicFeSpace
from paramhom.homogenization import (BudgetExceeded, LevelSchedule, homogenize, pressure_identity_residual,
                                     reiterated_homogenize, solve_cell_problems, solve_homogenized,
                                     solve_incompressible_cell)
from paramhom.tensor_fields import from_mandel, isotropic_mandel, isotropic_to_tensor, to_mandel

TWO_PI = 2 * np.pi


def lam_mu(y1):
    return 1 + 0.5 * np.sin(TWO_PI * y1), 2 + np.cos(TWO_PI * y1)


def laminate_oracle(mu_fn, lam_fn, points=200):
    """Moduli of an isotropic laminate layered in y1, by 1-D averaging of the
    exact corrector: the traction on the layer normal is constant."""
    t, w = np.polynomial.legendre.leggauss(points)
    y, w = 0.5 * (t + 1), 0.5 * w
    mu, lam = mu_fn(y), lam_fn(y)
    kinv = np.stack([1 / (2 * mu + lam), 1 / mu], axis=1)            # acoustic tensor, diagonal
    out = np.zeros((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        strain = from_mandel(e, 2)
        b = 2 * mu[:, None] * strain[:, 0][None, :] + (lam * np.trace(strain))[:, None] * np.array([1.0, 0.0])
        tr = np.sum(w[:, None] * kinv * b, axis=0) / np.sum(w[:, None] * kinv, axis=0)
        wv = kinv * (tr[None, :] - b)
        eps = np.broadcast_to(strain, (len(y), 2, 2)).copy()
        eps[:, 0, 0] += wv[:, 0]
        eps[:, 0, 1] += 0.5 * wv[:, 1]
        eps[:, 1, 0] += 0.5 * wv[:, 1]
        treps = eps[:, 0, 0] + eps[:, 1, 1]
        sig = 2 * mu[:, None, None] * eps + lam[:, None, None] * treps[:, None, None] * np.eye(2)
        out[:, j] = to_mandel(np.einsum("q,qij->ij", w, sig))
    return out


def laminate_tensor(y):
    mu, lam = lam_mu(y[:, 0])
    return isotropic_mandel(mu, lam)


def test_constant_tensor_is_fixed_point():
    a = isotropic_to_tensor(1.3, 0.7)
    h = homogenize(a, PeriodicFeSpace(4, 1))
    assert np.allclose(h.mandel, a.mandel, atol=1e-12)


def test_laminate_against_one_dimensional_oracle():
    oracle = laminate_oracle(lambda y: lam_mu(y)[0], lambda y: lam_mu(y)[1])
    h = homogenize(laminate_tensor, PeriodicFeSpace(16, 2))
    assert np.abs(h.mandel - oracle).max() < 1e-5 * np.abs(oracle).max()


@settings(max_examples=8)
@given(st.floats(0.1, 0.8), st.floats(0.0, 1.0), st.integers(1, 2))
def test_voigt_reuss_bounds(amp, phase, freq):
    def fn(y):
        mu = 1 + amp * np.sin(TWO_PI * freq * y[:, 0] + phase) * np.cos(TWO_PI * y[:, 1])
        lam = 1 + amp * np.cos(TWO_PI * y[:, 1] + phase)
        return isotropic_mandel(mu, lam)

    space = PeriodicFeSpace(8, 2)
    a0 = homogenize(fn, space).mandel
    pts, wts = np.polynomial.legendre.leggauss(12)
    g = 0.5 * (pts + 1)
    yy = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    ww = np.outer(0.5 * wts, 0.5 * wts).ravel()
    vals = fn(yy)
    voigt = np.einsum("q,qij->ij", ww, vals)
    reuss = np.linalg.inv(np.einsum("q,qij->ij", ww, np.linalg.inv(vals)))
    assert np.linalg.eigvalsh(voigt - a0).min() > -1e-8
    assert np.linalg.eigvalsh(a0 - reuss).min() > -1e-3


def test_cell_solutions_have_zero_mean_and_small_residual():
    space = PeriodicFeSpace(6, 1)
    table = solve_cell_problems(laminate_tensor, space)
    assert max(table.residuals) < 1e-10
    assert np.abs(space.mean_constraint() @ table.mandel_solutions.T).max() < 1e-12


def test_incompressible_cell_matches_compressible_for_moderate_lambda():
    yspace = PeriodicFeSpace(16, 2)
    mu = lambda y: lam_mu(y[:, 0])[0]
    lam = lambda y: lam_mu(y[:, 0])[1]
    table, h = solve_incompressible_cell((mu, lam), yspace)
    assert pressure_identity_residual(table) < 1e-9
    oracle = laminate_oracle(lambda y: lam_mu(y)[0], lambda y: lam_mu(y)[1])
    # P0 pressures against P2 displacements: first-order agreement only
    assert np.abs(h.mandel - oracle).max() < 2e-2 * np.abs(oracle).max()


def test_incompressible_limit_is_finite_in_shear():
    yspace = PeriodicFeSpace(8, 2)
    mu = lambda y: lam_mu(y[:, 0])[0]
    shears = []
    for lb in (1e3, 1e6):
        _, h = solve_incompressible_cell((mu, lambda y, lb=lb: lb * (1 + 0 * y[:, 0])), yspace)
        shears.append(h.mandel[2, 2])
    assert abs(shears[0] - shears[1]) < 1e-2 * shears[1]


def test_reiterated_with_inner_scale_only():
    fn = lambda ys: laminate_tensor(ys[1])
    h = reiterated_homogenize(fn, 2, LevelSchedule([(2, 1), (16, 2)], freeze_degree=1))
    oracle = laminate_oracle(lambda y: lam_mu(y)[0], lambda y: lam_mu(y)[1])
    assert np.abs(h.mandel - oracle).max() < 1e-5 * np.abs(oracle).max()


def test_reiterated_budget():
    with pytest.raises(BudgetExceeded):
        reiterated_homogenize(lambda ys: laminate_tensor(ys[0]), 2,
                              LevelSchedule([(32, 1), (4, 1)], freeze_degree=4, budget=100))
    with pytest.raises(BudgetExceeded):
        reiterated_homogenize(lambda ys: laminate_tensor(ys[0]), 2, LevelSchedule([(1, 1)] * 4))


def test_homogenized_solve_with_constant_moduli():
    space = FeSpace(Mesh(8), 1, "vector", dirichlet="all")
    a = isotropic_to_tensor(1.0, 1.0)
    u1 = solve_homogenized(space, a, np.array([1.0, 0.0]))
    u2 = solve_homogenized(space, a, np.array([2.0, 0.0]))
    assert np.allclose(2 * u1.values, u2.values)
