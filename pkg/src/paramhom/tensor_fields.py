"""Fourth-order elastic tensors, affine-parametric moduli and Lame fields.

Tensors act on symmetric d x d matrices.  Internally every tensor is stored
as a symmetric ``nsym x nsym`` matrix in Mandel coordinates, where shear
slots carry a factor sqrt(2) so that the Frobenius product of two
symmetric matrices equals the Euclidean product of their coordinate
vectors.  Fields are callables ``f(x, y)`` acting on point arrays of shape
``(n, d)`` and returning batched Mandel matrices ``(n, nsym, nsym)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SQ2 = np.sqrt(2.0)


class ValidationFailure(ValueError):
    """An ellipticity or boundedness inequality fails at a sampled point."""

    def __init__(self, inequality: str, location=None, value=None, bound=None):
        self.inequality = inequality
        self.location = location
        self.value = value
        self.bound = bound
        msg = inequality
        if location is not None:
            msg += f" at {location}"
        if value is not None:
            msg += f" (value {value:.6g}, bound {bound:.6g})"
        super().__init__(msg)


class SingularTensor(ValueError):
    pass


# ---------------------------------------------------------------------------
# Mandel coordinates

def sym_pairs(d: int) -> list[tuple[int, int]]:
    if d == 1:
        return [(0, 0)]
    if d == 2:
        return [(0, 0), (1, 1), (0, 1)]
    raise ValueError(f"unsupported dimension {d}")


def nsym(d: int) -> int:
    return d * (d + 1) // 2


def mandel_weights(d: int) -> np.ndarray:
    return np.array([1.0 if i == j else SQ2 for i, j in sym_pairs(d)])


def to_mandel(xi: np.ndarray) -> np.ndarray:
    """Symmetric matrices (..., d, d) to Mandel vectors (..., nsym)."""
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[-1]
    w = mandel_weights(d)
    return np.stack([w[k] * xi[..., i, j] for k, (i, j) in enumerate(sym_pairs(d))], axis=-1)


def from_mandel(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Mandel vectors (..., nsym) to symmetric matrices (..., d, d)."""
    v = np.asarray(v, dtype=float)
    if d is None:
        d = {1: 1, 3: 2}[v.shape[-1]]
    w = mandel_weights(d)
    out = np.zeros(v.shape[:-1] + (d, d))
    for k, (i, j) in enumerate(sym_pairs(d)):
        out[..., i, j] = v[..., k] / w[k]
        out[..., j, i] = v[..., k] / w[k]
    return out


def unit_strain(d: int, r: int, s: int) -> np.ndarray:
    """The matrix e^{rs} with entries (delta_rk delta_sl + delta_rl delta_sk)/2."""
    e = np.zeros((d, d))
    e[r, s] += 0.5
    e[s, r] += 0.5
    return e


# ---------------------------------------------------------------------------
# single tensors

class SymTensor4:
    """Fully symmetric fourth-order tensor in dimension 1 or 2 (immutable)."""

    __slots__ = ("_m", "d")

    def __init__(self, entries: np.ndarray, tol: float = 1e-14):
        a = np.array(entries, dtype=float)
        if a.ndim != 4 or len(set(a.shape)) != 1:
            raise ValueError("entries must be a d x d x d x d array")
        d = a.shape[0]
        scale = max(1.0, float(np.abs(a).max()))
        checks = (a - a.transpose(0, 1, 3, 2), a - a.transpose(1, 0, 2, 3), a - a.transpose(2, 3, 0, 1))
        if max(float(np.abs(c).max()) for c in checks) > tol * scale:
            raise ValueError("tensor lacks the full symmetry a_ijkl = a_ijlk = a_klij")
        self.d = d
        w = mandel_weights(d)
        pairs = sym_pairs(d)
        m = np.empty((len(pairs), len(pairs)))
        for p, (i, j) in enumerate(pairs):
            for q, (k, l) in enumerate(pairs):
                m[p, q] = w[p] * w[q] * a[i, j, k, l]
        self._m = m
        self._m.setflags(write=False)

    @classmethod
    def from_mandel(cls, m: np.ndarray) -> "SymTensor4":
        m = np.asarray(m, dtype=float)
        d = {1: 1, 3: 2}[m.shape[0]]
        if np.abs(m - m.T).max() > 1e-14 * max(1.0, np.abs(m).max()):
            raise ValueError("Mandel matrix is not symmetric")
        obj = cls.__new__(cls)
        obj.d = d
        obj._m = 0.5 * (m + m.T)
        obj._m.setflags(write=False)
        return obj

    @classmethod
    def identity(cls, d: int = 2) -> "SymTensor4":
        return cls.from_mandel(np.eye(nsym(d)))

    @property
    def mandel(self) -> np.ndarray:
        return self._m

    @property
    def entries(self) -> np.ndarray:
        d = self.d
        w = mandel_weights(d)
        pairs = sym_pairs(d)
        a = np.zeros((d,) * 4)
        for p, (i, j) in enumerate(pairs):
            for q, (k, l) in enumerate(pairs):
                val = self._m[p, q] / (w[p] * w[q])
                for (ii, jj) in {(i, j), (j, i)}:
                    for (kk, ll) in {(k, l), (l, k)}:
                        a[ii, jj, kk, ll] = val
        return a

    def __getitem__(self, idx):
        return self.entries[idx]

    def __add__(self, other: "SymTensor4") -> "SymTensor4":
        return SymTensor4.from_mandel(self._m + other._m)

    def __sub__(self, other: "SymTensor4") -> "SymTensor4":
        return SymTensor4.from_mandel(self._m - other._m)

    def __mul__(self, c: float) -> "SymTensor4":
        return SymTensor4.from_mandel(float(c) * self._m)

    __rmul__ = __mul__

    def eigvals(self) -> np.ndarray:
        return np.linalg.eigvalsh(self._m)

    def allclose(self, other: "SymTensor4", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self._m, other._m, atol=atol, rtol=0.0))

    def __repr__(self) -> str:
        return f"SymTensor4(d={self.d}, mandel={self._m.tolist()})"


def isotropic_to_tensor(mu: float, lam: float, d: int = 2) -> SymTensor4:
    """a_ijkl = mu (d_ik d_jl + d_il d_jk) + lam d_ij d_kl."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return SymTensor4.from_mandel(isotropic_mandel(np.array([mu]), np.array([lam]), d)[0])


def isotropic_mandel(mu: np.ndarray, lam: np.ndarray, d: int = 2) -> np.ndarray:
    """Batched Mandel matrices of isotropic tensors, shape (n, nsym, nsym)."""
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    k = nsym(d)
    tr = np.zeros(k)
    tr[:d] = 1.0
    out = 2.0 * mu[:, None, None] * np.eye(k) + lam[:, None, None] * np.outer(tr, tr)
    return out


def apply_tensor(a: SymTensor4, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if np.abs(xi - xi.T).max() > 1e-12 * max(1.0, np.abs(xi).max()):
        raise ValueError("xi must be symmetric")
    return from_mandel(a.mandel @ to_mandel(xi), a.d)


def invert_tensor(a: SymTensor4) -> SymTensor4:
    ev = a.eigvals()
    if ev.min() < 1e-12:
        raise SingularTensor(f"smallest eigenvalue {ev.min():.3e} below 1e-12")
    return SymTensor4.from_mandel(np.linalg.inv(a.mandel))


def batched_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a stack of SPD Mandel matrices."""
    ev = np.linalg.eigvalsh(m)
    if ev.min() < 1e-12:
        raise SingularTensor(f"smallest eigenvalue {ev.min():.3e} below 1e-12")
    out = np.linalg.inv(m)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------------------
# fields

ScalarFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _points(p, d: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p.reshape(-1, d) if d > 1 or p.size != 1 else p.reshape(1, 1)
    return p


class TensorField:
    """Tensor-valued coefficient field (x, y) -> batched Mandel matrices.

    ``x_dependent``/``y_dependent`` flags let solvers reuse assemblies when
    the field is constant in one of the slots.
    """

    def __init__(self, fn: Callable, d: int = 2, x_dependent: bool = True,
                 y_dependent: bool = True):
        self._fn = fn
        self.d = d
        self.x_dependent = x_dependent
        self.y_dependent = y_dependent

    def __call__(self, x, y) -> np.ndarray:
        x = _points(x, self.d)
        y = _points(y, self.d)
        n = max(len(x), len(y))
        if len(x) != n:
            x = np.broadcast_to(x, (n, self.d))
        if len(y) != n:
            y = np.broadcast_to(y, (n, self.d))
        out = np.asarray(self._fn(x, y), dtype=float)
        k = nsym(self.d)
        return np.broadcast_to(out, (n, k, k))

    @classmethod
    def constant(cls, a: SymTensor4) -> "TensorField":
        m = a.mandel.copy()
        return cls(lambda x, y: np.broadcast_to(m, (len(x),) + m.shape), a.d, False, False)

    @classmethod
    def from_entries(cls, fn: Callable, d: int = 2, **kw) -> "TensorField":
        """Wrap a closure returning full (n, d, d, d, d) tensors."""
        w = mandel_weights(d)
        pairs = sym_pairs(d)

        def mfn(x, y):
            a = np.asarray(fn(x, y), dtype=float)
            out = np.empty((a.shape[0], len(pairs), len(pairs)))
            for p, (i, j) in enumerate(pairs):
                for q, (k, l) in enumerate(pairs):
                    out[:, p, q] = w[p] * w[q] * a[:, i, j, k, l]
            return out

        return cls(mfn, d, **kw)

    def scaled(self, c: float) -> "TensorField":
        return TensorField(lambda x, y: c * self(x, y), self.d, self.x_dependent, self.y_dependent)


def isotropic_field(mu: ScalarFn, lam: ScalarFn, d: int = 2, **kw) -> TensorField:
    return TensorField(lambda x, y: isotropic_mandel(mu(x, y), lam(x, y), d), d, **kw)


def scaled_field(sigma: ScalarFn, t: SymTensor4, **kw) -> TensorField:
    """psi(x, y) = sigma(x, y) T with a fixed tensor T."""
    m = t.mandel.copy()
    return TensorField(lambda x, y: np.asarray(sigma(x, y), float)[:, None, None] * m, t.d, **kw)


def constant_scalar(c: float) -> ScalarFn:
    return lambda x, y: np.full(len(x), float(c))


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class ParamPoint:
    z: tuple
    active_dims: int

    def __init__(self, z: Sequence[float], active_dims: int | None = None):
        zz = tuple(float(v) for v in np.ravel(z))
        m = len(zz) if active_dims is None else int(active_dims)
        if len(zz) > m:
            raise ValueError("more coordinates than active dimensions")
        zz = zz + (0.0,) * (m - len(zz))
        if any(abs(v) > 1.0 for v in zz):
            raise ValueError("parameter coordinates must lie in [-1, 1]")
        object.__setattr__(self, "z", zz)
        object.__setattr__(self, "active_dims", m)

    def array(self) -> np.ndarray:
        return np.array(self.z)


def as_zvec(z, n_modes: int | None = None) -> np.ndarray:
    if isinstance(z, ParamPoint):
        z = z.z
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(np.abs(z) > 1.0 + 1e-15):
        raise ValueError("parameter coordinates must lie in [-1, 1]")
    if n_modes is not None and len(z) > n_modes:
        if np.any(z[n_modes:] != 0.0):
            raise ValueError(f"z touches mode {len(z)} beyond the {n_modes} available modes")
        z = z[:n_modes]
    return z


# ---------------------------------------------------------------------------
# affine-parametric moduli

@dataclass
class EllipticityReport:
    alpha: float
    beta: float
    kappa_effective: float
    alpha0: float
    beta0: float
    beta_sum: float
    lame_bounds: tuple | None = None
    samples: int = 0


def kappa_from_ratio(r: float) -> float:
    """Solve kappa / (1 + kappa) = r."""
    if r >= 1.0:
        return np.inf
    return r / (1.0 - r)


def derived_constants(alpha0: float, beta0: float, kappa: float) -> tuple[float, float]:
    """alpha = alpha0/(1+kappa), beta = beta0 + kappa/(1+kappa) alpha0."""
    r = kappa / (1.0 + kappa)
    return alpha0 / (1.0 + kappa), beta0 + r * alpha0


class AffineElasticTensor:
    """a(z; x, y) = abar(x, y) + sum_m z_m psi_m(x, y)."""

    def __init__(self, abar: TensorField, modes: Sequence[tuple[TensorField, float]],
                 alpha0: float, beta0: float, kappa: float | None = None, check_budget: bool = True):
        self.abar = abar
        self.modes = [(psi, float(b)) for psi, b in modes]
        if any(b < 0 for _, b in self.modes):
            raise ValueError("mode bounds must be nonnegative")
        self.alpha0 = float(alpha0)
        self.beta0 = float(beta0)
        self.d = abar.d
        bsum = self.beta_sum
        keff = kappa_from_ratio(bsum / self.alpha0)
        if kappa is None:
            kappa = keff
        if not check_budget:
            # ellipticity certified elsewhere (e.g. by the Lame structure)
            self.kappa = float(kappa)
            return
        if not np.isfinite(kappa):
            raise ValidationFailure("sum beta_m < alpha0 (no finite kappa)", value=bsum, bound=self.alpha0)
        if bsum > kappa / (1.0 + kappa) * self.alpha0 * (1 + 1e-12):
            raise ValidationFailure("sum beta_m <= kappa/(1+kappa) alpha0", value=bsum,
                                    bound=kappa / (1.0 + kappa) * self.alpha0)
        self.kappa = float(kappa)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def betas(self) -> np.ndarray:
        return np.array([b for _, b in self.modes])

    @property
    def beta_sum(self) -> float:
        return float(sum(b for _, b in self.modes))

    @property
    def kappa_effective(self) -> float:
        return kappa_from_ratio(self.beta_sum / self.alpha0)

    @property
    def x_dependent(self) -> bool:
        return self.abar.x_dependent or any(p.x_dependent for p, _ in self.modes)

    @property
    def y_dependent(self) -> bool:
        return self.abar.y_dependent or any(p.y_dependent for p, _ in self.modes)

    def constants(self) -> tuple[float, float]:
        """(alpha, beta) from the tightest admissible kappa."""
        return derived_constants(self.alpha0, self.beta0, self.kappa_effective)

    def mandel(self, z, x, y) -> np.ndarray:
        zv = as_zvec(z, self.n_modes)
        out = np.array(self.abar(x, y))
        for m, zm in enumerate(zv):
            if zm != 0.0:
                out = out + zm * self.modes[m][0](x, y)
        return out

    def at(self, z) -> TensorField:
        zv = as_zvec(z, self.n_modes)
        return TensorField(lambda x, y: self.mandel(zv, x, y), self.d,
                           self.x_dependent, self.y_dependent)

    def component_fields(self) -> list[TensorField]:
        """[abar, psi_1, ..., psi_M]."""
        return [self.abar] + [p for p, _ in self.modes]

    def truncated(self, n_modes: int) -> "AffineElasticTensor":
        return AffineElasticTensor(self.abar, self.modes[:n_modes], self.alpha0, self.beta0, self.kappa)


def evaluate_tensor(a: AffineElasticTensor, z, x, y) -> SymTensor4:
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    return SymTensor4.from_mandel(a.mandel(z, x, y)[0])


def default_sample_grid(d: int = 2, n: int = 17) -> tuple[np.ndarray, np.ndarray]:
    """All pairs of an n^d grid on the closed unit box in x and in y."""
    t = np.linspace(0.0, 1.0, n)
    g = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    xi = np.repeat(g, len(g), axis=0)
    yi = np.tile(g, (len(g), 1))
    return xi, yi


def _spectral_norm(m: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.eigvalsh(m)).max(axis=-1)


def _reduce_grid(a, sample_grid, d):
    if sample_grid is None:
        xdep = getattr(a, "x_dependent", True)
        ydep = getattr(a, "y_dependent", True)
        if xdep and ydep:
            x, y = default_sample_grid(d)
        else:
            t = np.linspace(0.0, 1.0, 17)
            g = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
            z = np.zeros_like(g)
            x, y = (g, z) if xdep else (z, g)
    else:
        x, y = sample_grid
    return np.asarray(x, float), np.asarray(y, float)


def validate_uniform_ellipticity(a, sample_grid=None, tol: float = 1e-12) -> EllipticityReport:
    """Sampled check of coercivity/boundedness of abar, the mode bounds and
    the smallness condition on their sum.  Accepts an AffineElasticTensor
    or an IsotropicLameField."""
    if isinstance(a, IsotropicLameField):
        return a.validate(sample_grid, tol)
    x, y = _reduce_grid(a, sample_grid, a.d)
    ev = np.linalg.eigvalsh(np.asarray(a.abar(x, y)))
    lo = ev[:, 0]
    k = int(np.argmin(lo))
    if lo[k] < a.alpha0 * (1 - tol) - tol:
        raise ValidationFailure("abar xi:xi >= alpha0 |xi|^2", (x[k].tolist(), y[k].tolist()),
                                float(lo[k]), a.alpha0)
    hi = np.abs(ev).max(axis=1)
    k = int(np.argmax(hi))
    if hi[k] > a.beta0 * (1 + tol) + tol:
        raise ValidationFailure("|abar xi:zeta| <= beta0 |xi||zeta|", (x[k].tolist(), y[k].tolist()),
                                float(hi[k]), a.beta0)
    for m, (psi, b) in enumerate(a.modes):
        nrm = _spectral_norm(np.asarray(psi(x, y)))
        k = int(np.argmax(nrm))
        if nrm[k] > b * (1 + tol) + tol:
            raise ValidationFailure(f"|psi_{m + 1} xi:zeta| <= beta_{m + 1} |xi||zeta|",
                                    (x[k].tolist(), y[k].tolist()), float(nrm[k]), b)
    if a.beta_sum > a.kappa / (1 + a.kappa) * a.alpha0 * (1 + tol):
        raise ValidationFailure("sum beta_m <= kappa/(1+kappa) alpha0", None, a.beta_sum,
                                a.kappa / (1 + a.kappa) * a.alpha0)
    alpha, beta = a.constants()
    return EllipticityReport(alpha, beta, a.kappa_effective, a.alpha0, a.beta0, a.beta_sum,
                             None, len(x))


class IsotropicLameField:
    """mu(z) = mubar + sum z_m mu_m and lam(z) = lambar + sum z_m lam_m.

    ``mubar_min``/``lambdabar_min`` (infima of the mean fields) and
    ``mubar_max``/``lambdabar_max`` are sampled unless supplied.
    """

    def __init__(self, mubar: ScalarFn, lambdabar: ScalarFn,
                 mu_modes: Sequence[tuple[ScalarFn, float]] = (),
                 lambda_modes: Sequence[tuple[ScalarFn, float]] = (),
                 kappa: float | None = None, d: int = 2,
                 mean_bounds: tuple[float, float, float, float] | None = None,
                 x_dependent: bool = True, y_dependent: bool = True):
        self.mubar = mubar
        self.lambdabar = lambdabar
        nm = max(len(mu_modes), len(lambda_modes))
        zero = (constant_scalar(0.0), 0.0)
        self.mu_modes = list(mu_modes) + [zero] * (nm - len(mu_modes))
        self.lambda_modes = list(lambda_modes) + [zero] * (nm - len(lambda_modes))
        self.d = d
        self.x_dependent = x_dependent
        self.y_dependent = y_dependent
        if mean_bounds is None:
            x, y = default_sample_grid(d, 9)
            mu = mubar(x, y)
            la = lambdabar(x, y)
            mean_bounds = (float(mu.min()), float(mu.max()), float(la.min()), float(la.max()))
        self.mubar_min, self.mubar_max, self.lambdabar_min, self.lambdabar_max = map(float, mean_bounds)
        if self.mubar_min <= 0 or self.lambdabar_min <= 0:
            raise ValidationFailure("mubar_min > 0 and lambdabar_min > 0")
        r = max(self.gamma_sum / self.mubar_min, self.delta_sum / self.lambdabar_min)
        if kappa is None:
            kappa = kappa_from_ratio(r)
        if not np.isfinite(kappa):
            raise ValidationFailure("sum gamma_m < mubar_min and sum delta_m < lambdabar_min (no finite kappa)",
                                    None, r, 1.0)
        self.kappa = float(kappa)
        q = self.kappa / (1 + self.kappa)
        if self.gamma_sum > q * self.mubar_min * (1 + 1e-12):
            raise ValidationFailure("sum gamma_m <= kappa/(1+kappa) mubar_min", None,
                                    self.gamma_sum, q * self.mubar_min)
        if self.delta_sum > q * self.lambdabar_min * (1 + 1e-12):
            raise ValidationFailure("sum delta_m <= kappa/(1+kappa) lambdabar_min", None,
                                    self.delta_sum, q * self.lambdabar_min)

    @property
    def n_modes(self) -> int:
        return len(self.mu_modes)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for _, g in self.mu_modes])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([g for _, g in self.lambda_modes])

    @property
    def gamma_sum(self) -> float:
        return float(sum(g for _, g in self.mu_modes))

    @property
    def delta_sum(self) -> float:
        return float(sum(g for _, g in self.lambda_modes))

    def mu(self, z, x, y) -> np.ndarray:
        zv = as_zvec(z, self.n_modes)
        out = np.array(self.mubar(x, y), dtype=float)
        for m, zm in enumerate(zv):
            if zm != 0.0:
                out = out + zm * self.mu_modes[m][0](x, y)
        return out

    def lam(self, z, x, y) -> np.ndarray:
        zv = as_zvec(z, self.n_modes)
        out = np.array(self.lambdabar(x, y), dtype=float)
        for m, zm in enumerate(zv):
            if zm != 0.0:
                out = out + zm * self.lambda_modes[m][0](x, y)
        return out

    def bounds(self) -> tuple[float, float, float, float]:
        """(mu_min, mu_max, lambda_min, lambda_max), uniform in z."""
        q = self.kappa / (1 + self.kappa)
        return (self.mubar_min / (1 + self.kappa), self.mubar_max + q * self.mubar_min,
                self.lambdabar_min / (1 + self.kappa), self.lambdabar_max + q * self.lambdabar_min)

    def tensor_at(self, z) -> TensorField:
        zv = as_zvec(z, self.n_modes)
        return TensorField(lambda x, y: isotropic_mandel(self.mu(zv, x, y), self.lam(zv, x, y), self.d),
                           self.d, self.x_dependent, self.y_dependent)

    def to_affine(self) -> AffineElasticTensor:
        """Equivalent affine tensor; mode bound 2 gamma_m + d delta_m."""
        d = self.d
        abar = isotropic_field(self.mubar, self.lambdabar, d, x_dependent=self.x_dependent,
                               y_dependent=self.y_dependent)
        modes = []
        for (mf, g), (lf, dl) in zip(self.mu_modes, self.lambda_modes):
            psi = TensorField(lambda x, y, mf=mf, lf=lf: isotropic_mandel(mf(x, y), lf(x, y), d), d,
                              self.x_dependent, self.y_dependent)
            modes.append((psi, 2 * g + d * dl))
        alpha0 = 2 * self.mubar_min
        beta0 = 2 * self.mubar_max + d * self.lambdabar_max
        # the crude mode bounds need not meet the affine budget; the Lame
        # budget checked on construction certifies ellipticity instead
        return AffineElasticTensor(abar, modes, alpha0, beta0, self.kappa, check_budget=False)

    def validate(self, sample_grid=None, tol: float = 1e-12) -> EllipticityReport:
        x, y = _reduce_grid(self, sample_grid, self.d)
        mu = self.mubar(x, y)
        la = self.lambdabar(x, y)
        if mu.min() < self.mubar_min * (1 - tol):
            k = int(np.argmin(mu))
            raise ValidationFailure("mubar >= mubar_min", (x[k].tolist(), y[k].tolist()),
                                    float(mu[k]), self.mubar_min)
        if la.min() < self.lambdabar_min * (1 - tol):
            k = int(np.argmin(la))
            raise ValidationFailure("lambdabar >= lambdabar_min", (x[k].tolist(), y[k].tolist()),
                                    float(la[k]), self.lambdabar_min)
        for name, modes in (("gamma", self.mu_modes), ("delta", self.lambda_modes)):
            for m, (f, b) in enumerate(modes):
                v = np.abs(f(x, y))
                k = int(np.argmax(v))
                if v[k] > b * (1 + tol) + tol:
                    raise ValidationFailure(f"|mode_{m + 1}| <= {name}_{m + 1}",
                                            (x[k].tolist(), y[k].tolist()), float(v[k]), b)
        aff = self.to_affine()
        alpha, beta = aff.constants()
        return EllipticityReport(alpha, beta, self.kappa, aff.alpha0, aff.beta0, aff.beta_sum,
                                 self.bounds(), len(x))
