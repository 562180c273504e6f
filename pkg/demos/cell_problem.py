"""Homogenized moduli of a periodic isotropic microstructure, bracketed by
the arithmetic (Voigt) and harmonic (Reuss) means."""
import numpy as np

from paramhom.fem_core import PeriodicFeSpace, box_rule
from paramhom.homogenization import homogenize, solve_incompressible_cell
from paramhom.tensor_fields import isotropic_mandel

TWO_PI = 2 * np.pi


def moduli(y):
    mu = 1 + 0.5 * np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1])
    lam = 2 + np.cos(TWO_PI * y[:, 0])
    return isotropic_mandel(mu, lam)


a0 = homogenize(moduli, PeriodicFeSpace(16, 2)).mandel
pts, w = box_rule(2, 12)
vals = moduli(pts)
voigt = np.einsum("q,qij->ij", w, vals)
reuss = np.linalg.inv(np.einsum("q,qij->ij", w, np.linalg.inv(vals)))
np.set_printoptions(precision=5, suppress=True)
print("homogenized (Mandel):\n", a0)
print("Voigt - a0 eigenvalues:", np.linalg.eigvalsh(voigt - a0))
print("a0 - Reuss eigenvalues:", np.linalg.eigvalsh(a0 - reuss))

# nearly incompressible variant: the shear response stays bounded as lambda grows
mu = lambda y: 1 + 0.5 * np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1])
for lb in (1e2, 1e4, 1e6):
    _, h = solve_incompressible_cell((mu, lambda y, lb=lb: np.full(len(y), lb)), PeriodicFeSpace(8, 2))
    print(f"lambda = {lb:8.0e}: shear modulus {h.mandel[2, 2] / 2:.6f}")
