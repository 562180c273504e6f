"""Quadrature rules on the reference interval [0,1] and triangle {x, y >= 0, x + y <= 1}."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import roots_jacobi


def interval_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, math.ceil((degree + 1) / 2))
    t, w = np.polynomial.legendre.leggauss(n)
    return (0.5 * (t + 1.0))[:, None], 0.5 * w


def _collapsed_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    # Duffy map (a, b) -> (a (1 - b), b) with Gauss-Jacobi in b
    n = max(1, math.ceil((degree + 1) / 2))
    ta, wa = np.polynomial.legendre.leggauss(n)
    tb, wb = roots_jacobi(n, 1.0, 0.0)
    a = 0.5 * (ta + 1.0)
    b = 0.5 * (tb + 1.0)
    wa = 0.5 * wa
    wb = 0.25 * wb
    aa, bb = np.meshgrid(a, b, indexing="ij")
    ww = np.outer(wa, wb)
    pts = np.stack([(aa * (1 - bb)).ravel(), bb.ravel()], axis=1)
    return pts, ww.ravel()


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (nq, 2) and weights summing to 1/2, exact up to ``degree``."""
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        p = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return p, np.full(3, 1 / 6)
    if degree <= 4:
        a, b = 0.445948490915965, 0.091576213509771
        wa, wb = 0.223381589678011 / 2, 0.109951743655322 / 2
        p = np.array([[a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                      [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
        return p, np.array([wa] * 3 + [wb] * 3)
    return _collapsed_rule(degree)


def simplex_rule(d: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    return interval_rule(degree) if d == 1 else triangle_rule(degree)


def box_rule(d: int, n_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [0,1]^d."""
    t, w = np.polynomial.legendre.leggauss(n_per_dim)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([t] * d), indexing="ij")
    wg = np.meshgrid(*([w] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1), np.prod(np.stack([g.ravel() for g in wg]), axis=0)
