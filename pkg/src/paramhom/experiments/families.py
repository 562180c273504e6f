"""Built-in coefficient families used by the scenarios, built from config values."""
from __future__ import annotations

import numpy as np
from scipy.special import zeta

from .config import ConfigError
from ..gpc import BoundSequence, make_bound_sequence
from ..solvers_displacement import DisplacementProblem
from ..solvers_mixed import PenaltyProblem
from ..tensor_fields import (AffineElasticTensor, IsotropicLameField, TensorField, isotropic_field,
                             isotropic_to_tensor, scaled_field)

TWO_PI = 2.0 * np.pi


def _kappa(cfg):
    k = cfg["problem.kappa"]
    return None if k == 0 else k


def sine_modes(cfg) -> DisplacementProblem:
    """Constant isotropic mean with x-dependent shear modes
    sin(m pi x1) sin(pi x2), bounds amplitude m^-decay / zeta(decay)."""
    m_total, s, amp = cfg["problem.modes"], cfg["problem.decay"], cfg["problem.amplitude"]
    if s <= 1.0:
        raise ConfigError("problem.decay", "the sine-modes family normalises by zeta(decay) and needs decay > 1")
    abar = TensorField.constant(isotropic_to_tensor(1.0, 1.0))
    modes = []
    for m in range(1, m_total + 1):
        b = amp * m ** -s / zeta(s)
        psi = scaled_field(lambda x, y, m=m: np.sin(m * np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                           isotropic_to_tensor(0.5 * b, 0.0), x_dependent=True, y_dependent=False)
        modes.append((psi, b))
    a = AffineElasticTensor(abar, modes, alpha0=2.0, beta0=4.0, kappa=_kappa(cfg))
    return DisplacementProblem(a, np.asarray(cfg["problem.forcing"], float), n=cfg["discretization.mesh"],
                               order=cfg["discretization.order"])


def hr_smooth(cfg) -> DisplacementProblem:
    """Linearly graded shear modulus with alternating sin(m pi x1) /
    cos(m pi x2) isotropic modes of bound amplitude m^-decay; midpoint moduli."""
    m_total, s, amp = cfg["problem.modes"], cfg["problem.decay"], cfg["problem.amplitude"]
    abar = isotropic_field(lambda x, y: 1 + 0.3 * x[:, 0], lambda x, y: 1 + 0 * x[:, 0], y_dependent=False)
    modes = []
    for m in range(1, m_total + 1):
        b = amp * m ** -s
        if m % 2:
            g = (lambda x, y, m=m: np.sin(m * np.pi * x[:, 0]))
        else:
            g = (lambda x, y, m=m: np.cos(m * np.pi * x[:, 1]))
        modes.append((scaled_field(g, isotropic_to_tensor(b / 4, b / 4), y_dependent=False), b))
    a = AffineElasticTensor(abar, modes, alpha0=2.0, beta0=6.0, kappa=_kappa(cfg))
    return DisplacementProblem(a, np.asarray(cfg["problem.forcing"], float), n=cfg["discretization.mesh"],
                               order=cfg["discretization.order"], midpoint=True)


def penalty_lame(cfg, lambda_min: float) -> IsotropicLameField:
    """Graded mean moduli, mu_m ~ sin(m pi x1) and lambda_m ~ cos(m pi x2)
    with bounds amplitude m^-decay and 1.2 amplitude lambda_min m^-decay."""
    m_total, s, amp = cfg["problem.modes"], cfg["problem.decay"], cfg["problem.amplitude"]
    ratio = cfg["problem.lambda_ratio"]
    lb = float(lambda_min)
    mus = [(lambda x, y, m=m: amp * m ** -s * np.sin(m * np.pi * x[:, 0]), amp * m ** -s)
           for m in range(1, m_total + 1)]
    las = [(lambda x, y, m=m: 1.2 * amp * lb * m ** -s * np.cos(m * np.pi * x[:, 1]), 1.2 * amp * lb * m ** -s)
           for m in range(1, m_total + 1)]
    return IsotropicLameField(lambda x, y: 1 + 0.2 * x[:, 0], lambda x, y: lb * (1 + (ratio - 1) * x[:, 1]),
                              mus, las, kappa=_kappa(cfg), mean_bounds=(1.0, 1.2, lb, ratio * lb),
                              y_dependent=False)


def penalty_problem(cfg, lambda_min: float) -> PenaltyProblem:
    return PenaltyProblem(penalty_lame(cfg, lambda_min), np.asarray(cfg["problem.forcing"], float),
                          n=cfg["discretization.mesh"])


def trig_tensor(cfg) -> TensorField:
    """Periodic isotropic microstructure mu = 1 + amplitude sin(2 pi y1) sin(2 pi y2), lambda = 1."""
    amp = cfg["problem.amplitude"]
    return isotropic_field(lambda x, y: 1 + amp * np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1]),
                           lambda x, y: 1 + 0 * y[:, 0], x_dependent=False, y_dependent=True)


def trig_lame(cfg, lambda_min: float) -> IsotropicLameField:
    """Same shear modulus; lambda oscillates in y1 between lambda_min and
    lambda_ratio * lambda_min."""
    amp, ratio = cfg["problem.amplitude"], cfg["problem.lambda_ratio"]
    lb = float(lambda_min)
    return IsotropicLameField(
        lambda x, y: 1 + amp * np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1]),
        lambda x, y: lb * (1 + 0.5 * (ratio - 1) * (1 + np.cos(TWO_PI * y[:, 0]))),
        mean_bounds=(1 - amp, 1 + amp, lb, ratio * lb), x_dependent=False, y_dependent=True)


def rotational_forcing(x: np.ndarray) -> np.ndarray:
    """Divergence-free body force; a gradient force would be absorbed by
    the pressure in the incompressible limit."""
    return np.stack([-(x[:, 1] - 0.5), x[:, 0] - 0.5], axis=1)


def two_scale_modes(cfg) -> DisplacementProblem:
    """y-periodic mean and modes b_m (1 + 0.5 trig(y)) shear with
    b_m = amplitude m^-decay."""
    m_total, s, amp = cfg["problem.modes"], cfg["problem.decay"], cfg["problem.amplitude"]
    abar = isotropic_field(lambda x, y: 2 + np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1]),
                           lambda x, y: 1.0 + 0.5 * np.cos(TWO_PI * y[:, 0]), x_dependent=False, y_dependent=True)
    modes = []
    for m in range(1, m_total + 1):
        b = amp * m ** -s
        trig = np.cos if m % 2 else np.sin
        axis = 1 if m % 2 else 0
        g = (lambda x, y, b=b, trig=trig, axis=axis: b * (1 + 0.5 * trig(TWO_PI * y[:, axis])))
        modes.append((scaled_field(g, isotropic_to_tensor(0.5, 0.0), x_dependent=False, y_dependent=True), 1.5 * b))
    a = AffineElasticTensor(abar, modes, alpha0=2.0, beta0=9.0, kappa=_kappa(cfg))
    return DisplacementProblem(a, np.asarray(cfg["problem.forcing"], float), n=cfg["discretization.mesh"],
                               order=cfg["discretization.order"], y_n=cfg["discretization.y_mesh"],
                               y_order=cfg["discretization.y_order"])


def displacement_bounds(problem: DisplacementProblem, p: float | None = None) -> BoundSequence:
    """d_m = beta_m / (sqrt 3 alpha)."""
    alpha, _ = problem.tensor.constants()
    return make_bound_sequence("displacement", {"alpha": alpha, "betas": problem.tensor.betas}, p)


DISPLACEMENT_FAMILIES = {"sine-modes": sine_modes, "hr-smooth": hr_smooth, "two-scale-modes": two_scale_modes}
LAME_FAMILIES = {"penalty-modes": penalty_lame, "trig-isotropic": trig_lame}
