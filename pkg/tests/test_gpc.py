import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import legendre as npleg

from paramhom.gpc import (BoundSequence, DimensionMismatch, GpcExpansion, IndexSet, InvalidConstants, MultiIndex,
                          NotSorted, best_n_indices, bound_tail, chaos_matrix, coeff_bound, coupling_matrices,
                          gauss_legendre_rule, legendre_coupling, legendre_eval, make_bound_sequence,
                          stechkin_tail, summability_certificate, tensor_rule)

multi_index = st.lists(st.tuples(st.integers(1, 5), st.integers(0, 4)), max_size=4).map(MultiIndex)


@given(st.integers(0, 12), st.floats(-1, 1))
def test_legendre_matches_numpy(n, t):
    c = np.zeros(n + 1)
    c[n] = 1.0
    assert legendre_eval(n, t) == pytest.approx(math.sqrt(2 * n + 1) * npleg.legval(t, c), abs=1e-10)


def test_orthonormality_four_dims():
    lam = IndexSet.total_degree(4, 6)
    zs, w = tensor_rule([7] * 4)
    a = chaos_matrix(lam, zs)
    assert np.abs(a.T @ (w[:, None] * a) - np.eye(len(lam))).max() < 1e-12


@given(st.integers(0, 30))
def test_coupling_against_quadrature(n):
    t, w = gauss_legendre_rule(n + 3)
    oracle = np.sum(w * t * legendre_eval(n, t) * legendre_eval(n + 1, t))
    assert legendre_coupling(n) == pytest.approx(oracle, abs=1e-12)


def test_coupling_zero():
    assert abs(legendre_coupling(0) - 1 / math.sqrt(3)) < 1e-12


def test_coupling_matrices_are_z_moments():
    lam = IndexSet.total_degree(2, 3)
    zs, w = tensor_rule([6, 6])
    a = chaos_matrix(lam, zs)
    for m, g in enumerate(coupling_matrices(lam, 2)):
        oracle = a.T @ ((w * zs[:, m])[:, None] * a)
        assert np.abs(g.toarray() - oracle).max() < 1e-12


@given(multi_index)
def test_multi_index_text_round_trip(nu):
    assert MultiIndex.from_text(nu.to_text()) == nu
    assert nu.order == sum(k for _, k in nu.support)


def test_index_set_closure_and_text():
    s = IndexSet([MultiIndex([(1, 2)]), MultiIndex([(2, 1)])])
    assert not s.is_downward_closed()
    c = s.downward_closure()
    assert c.is_downward_closed() and len(c) == 4
    assert IndexSet.from_text(c.to_text()).indices == c.indices
    assert len(IndexSet.tensor_product(2, 2)) == 9
    assert len(IndexSet.total_degree(3, 2)) == 10


def test_chaos_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        chaos_matrix(IndexSet([MultiIndex([(3, 1)])]), np.zeros((2, 2)))


@given(st.lists(st.floats(0.001, 0.3), min_size=1, max_size=4), st.integers(1, 25))
def test_best_n_is_exact_top_n(vals, n):
    if sum(vals) >= 1:
        return
    d = BoundSequence("displacement", tuple(vals))
    lam = best_n_indices(d, n)
    assert len(lam) == n and MultiIndex.zero() in lam
    # every selected nonzero index has a selected parent with a larger bound
    for nu in lam:
        if nu.order:
            parents = [nu.shifted(m, -1) for m, _ in nu.support]
            assert any(q in lam and coeff_bound(q, d) > coeff_bound(nu, d) for q in parents)
    # brute force over a box that contains every top-n index
    box = [MultiIndex(list(zip(range(1, len(vals) + 1), k)))
           for k in itertools.product(range(n + 1), repeat=len(vals)) if sum(k) <= n]
    ranked = sorted((coeff_bound(nu, d) for nu in box), reverse=True)
    chosen = sorted((coeff_bound(nu, d) for nu in lam), reverse=True)
    assert np.allclose(chosen, ranked[:n], rtol=1e-10)


def test_best_n_nested():
    d = BoundSequence("displacement", (0.3, 0.1, 0.05))
    prev = best_n_indices(d, 1)
    for n in range(2, 20):
        cur = best_n_indices(d, n)
        assert prev.issubset(cur)
        prev = cur


def test_bound_tail_decreases():
    d = BoundSequence("displacement", (0.3, 0.1))
    tails = [bound_tail(d, best_n_indices(d, n), 500) for n in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(tails, tails[1:]))


def test_coeff_bound_formula():
    nu = MultiIndex([(1, 2), (3, 1)])
    assert coeff_bound(nu, (0.5, 0.1, 0.2)) == pytest.approx(3 * 0.25 * 0.2)


def test_displacement_sequence():
    b = make_bound_sequence("displacement", {"alpha": 2.0, "betas": [0.6, 0.3]})
    assert np.allclose(b.values, np.array([0.6, 0.3]) / (math.sqrt(3) * 2.0))
    with pytest.raises(InvalidConstants):
        make_bound_sequence("displacement", {"alpha": 0.0, "betas": [0.1]})
    with pytest.raises(InvalidConstants):
        make_bound_sequence("mixed", {"alpha0": 1.0, "beta0": 4.0, "betas": [0.5]})


@given(st.floats(0.5, 4), st.integers(1, 30))
def test_stechkin(s, n):
    b = np.arange(1, 60, dtype=float) ** -s
    p = min(0.9, 1.5 / s) if s > 1 else 0.9
    lhs, rhs = stechkin_tail(b, n, p, 2.0)
    assert lhs <= rhs


def test_stechkin_unsorted_rejected():
    with pytest.raises(NotSorted):
        stechkin_tail([0.1, 0.2], 1, 0.5, 1.0)


def test_summability_certificate_rate():
    b = np.arange(1, 50, dtype=float) ** -3.0
    rep = summability_certificate(b, 0.4, 0.1)
    assert rep.passed and rep.rate == pytest.approx(2.0)
    assert abs(rep.decay_exponent - 3.0) < 1e-6


def test_expansion_evaluates_polynomial():
    lam = IndexSet.total_degree(2, 2)
    rng = np.random.default_rng(0)
    coef = rng.standard_normal((len(lam), 3))
    e = GpcExpansion(lam, coef)
    z = np.array([0.3, -0.7])
    direct = sum(coef[i] * np.prod([legendre_eval(k, z[m - 1]) for m, k in nu.support] or [1.0])
                 for i, nu in enumerate(lam))
    assert np.allclose(e.evaluate(z), direct)
    assert np.allclose(e[MultiIndex.zero()], coef[0])
