import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, strategies as st

from paramhom.fem_core import (DegenerateSpace, FeSpace, Mesh, PeriodicFeSpace, assemble_div_coupling,
                               assemble_elastic, assemble_gradgrad, assemble_load, assemble_weighted_mass,
                               box_rule, estimate_inf_sup, korn_constant, norms, rigid_body_modes,
                               simplex_rule, solve_saddle, solve_spd, triangle_rule)
from paramhom.tensor_fields import isotropic_to_tensor

PI = math.pi


@given(st.integers(0, 8), st.integers(0, 8))
def test_triangle_rule_exact_on_monomials(a, b):
    pts, w = triangle_rule(a + b)
    exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
    assert np.dot(w, pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-12)


@given(st.integers(0, 9), st.integers(0, 9))
def test_box_rule_exact(a, b):
    pts, w = box_rule(2, 5)
    assert np.dot(w, pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(1 / ((a + 1) * (b + 1)), rel=1e-12)


def test_interval_rule():
    pts, w = simplex_rule(1, 7)
    assert np.dot(w, pts[:, 0] ** 7) == pytest.approx(1 / 8, rel=1e-13)


def test_mesh_area_and_locate():
    m = Mesh(5)
    assert m.cell_volume.sum() == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    p = rng.random((50, 2))
    cell, ref = m.locate(p)
    assert np.allclose(m.to_physical(cell, ref), p)


def _poisson_errors(n, order):
    s = FeSpace(Mesh(n), order, "scalar", dirichlet="all")
    f = s.free_dofs
    k = assemble_gradgrad(s)[f][:, f]
    rhs = assemble_load(s, lambda x: 2 * PI ** 2 * np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]))[f]
    u = s.expand(solve_spd(k, rhs))
    ex = lambda x: np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])
    exg = lambda x: PI * np.stack([np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1]),
                                   np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1])], axis=1)
    r = norms(s, u, exact=ex, exact_grad=exg, degree=6)
    return r.l2, r.h1_semi


@pytest.mark.parametrize("order", [1, 2])
def test_poisson_convergence_rates(order):
    e1, e2 = _poisson_errors(8, order), _poisson_errors(16, order)
    assert math.log2(e1[0] / e2[0]) == pytest.approx(order + 1, abs=0.15)
    assert math.log2(e1[1] / e2[1]) == pytest.approx(order, abs=0.15)


def _elastic_error(n, order):
    # u = (sin pi x sin pi y, 0), mu = lam = 1: f = (4 pi^2 s s, -2 pi^2 c c)
    s = FeSpace(Mesh(n), order, "vector", dirichlet="all")
    f = s.free_dofs
    a = isotropic_to_tensor(1.0, 1.0)
    k = assemble_elastic(s, a)[f][:, f]

    def force(x):
        ss = np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])
        cc = np.cos(PI * x[:, 0]) * np.cos(PI * x[:, 1])
        return np.stack([4 * PI ** 2 * ss, -2 * PI ** 2 * cc], axis=1)

    u = s.expand(solve_spd(k, assemble_load(s, force)[f]))
    ex = lambda x: np.stack([np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]), 0 * x[:, 0]], axis=1)

    def exg(x):
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 0] = PI * np.cos(PI * x[:, 0]) * np.sin(PI * x[:, 1])
        g[:, 0, 1] = PI * np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1])
        return g

    return norms(s, u, exact=ex, exact_grad=exg, degree=6).h1_semi


@pytest.mark.parametrize("order", [1, 2])
def test_elastic_manufactured_rate(order):
    assert math.log2(_elastic_error(8, order) / _elastic_error(16, order)) == pytest.approx(order, abs=0.15)


@pytest.mark.parametrize("order", [1, 2])
def test_rigid_modes_in_kernel(order):
    s = FeSpace(Mesh(4), order, "vector")
    k = assemble_elastic(s, isotropic_to_tensor(1.0, 2.0))
    r = rigid_body_modes(s)
    assert np.abs(k @ r).max() < 1e-10
    assert np.allclose(k.toarray(), k.toarray().T)


def test_linear_patch_exact():
    # affine displacement with Dirichlet data solves the homogeneous problem exactly
    s = FeSpace(Mesh(3), 1, "vector", dirichlet="all")
    k = assemble_elastic(s, isotropic_to_tensor(1.0, 1.0))
    lin = lambda x: np.stack([0.3 * x[:, 0] - 0.2 * x[:, 1], 0.5 * x[:, 1] + 0.1 * x[:, 0]], axis=1)
    full = lin(s.node_coords).ravel()
    f, c = s.free_dofs, np.flatnonzero(s.constrained_mask)
    u_free = solve_spd(k[f][:, f], -(k[f][:, c] @ full[c]))
    assert np.allclose(u_free, full[f], atol=1e-10)


def test_mass_matrix_integrates_one():
    s = FeSpace(Mesh(4), 2, "scalar")
    m = assemble_weighted_mass(s, 3.0)
    one = np.ones(s.n_dofs)
    assert one @ m @ one == pytest.approx(3.0)


def test_korn_constant():
    assert 0 < korn_constant(FeSpace(Mesh(4), 1, "vector", dirichlet="all")) < 1
    assert korn_constant(PeriodicFeSpace(4, 1)) > 0
    with pytest.raises(DegenerateSpace):
        korn_constant(FeSpace(Mesh(3), 1, "vector"))


def test_periodic_space_identification():
    s = PeriodicFeSpace(4, 2)
    assert s.n_nodes == 64
    u = s.interpolate(lambda x: np.stack([np.sin(2 * PI * x[:, 0]), np.cos(2 * PI * x[:, 1])], axis=1))
    left, right = np.array([[0.0, 0.3]]), np.array([[1.0 - 1e-12, 0.3]])
    assert np.allclose(s.evaluate(u, left), s.evaluate(u, right), atol=1e-9)
    assert np.abs(s.mean_constraint() @ np.ones(s.n_dofs) - 1).max() < 1e-12


def test_inf_sup_matches_dense_oracle():
    v = FeSpace(Mesh(4), 2, "vector", dirichlet="all")
    q = FeSpace(Mesh(4), 1, "scalar")
    f = v.free_dofs
    b = assemble_div_coupling(v, q)[:, f].toarray()
    mv = (assemble_weighted_mass(v) + assemble_gradgrad(v))[f][:, f].toarray()
    mq = assemble_weighted_mass(q).toarray()
    # oracle: singular values of Mq^{-1/2} B Mv^{-1/2}, dropping the constant pressure
    lv = np.linalg.cholesky(mv)
    lq = np.linalg.cholesky(mq)
    t = sla.solve_triangular(lq, sla.solve_triangular(lv, b.T, lower=True).T, lower=True)
    sv = np.sort(np.linalg.svd(t, compute_uv=False))
    got = estimate_inf_sup(b, mv, mq, exclude_kernel=True)
    assert got == pytest.approx(sv[sv > 1e-8 * sv.max()].min(), rel=1e-8)
    assert estimate_inf_sup(b, mv, mq) == 0.0


def test_solvers_agree():
    s = FeSpace(Mesh(12), 1, "vector", dirichlet="all")
    f = s.free_dofs
    k = assemble_elastic(s, isotropic_to_tensor(1.0, 1.0))[f][:, f]
    rhs = np.random.default_rng(0).standard_normal(len(f))
    direct = solve_spd(k, rhs)
    amg = solve_spd(k, rhs, tol=1e-11, method="amg", near_null=rigid_body_modes(s)[f])
    assert np.abs(direct - amg).max() < 1e-7 * np.abs(direct).max()


def test_saddle_solve_residual():
    rng = np.random.default_rng(3)
    a = sp.csr_matrix(np.diag(rng.random(6) + 1))
    b = sp.csr_matrix(rng.standard_normal((2, 6)))
    f, g = rng.standard_normal(6), rng.standard_normal(2)
    x, y = solve_saddle(a, b, None, f, g)
    assert np.allclose(a @ x + b.T @ y, f) and np.allclose(b @ x, g)
