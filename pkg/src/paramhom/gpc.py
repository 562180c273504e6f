"""Multi-indices, orthonormal Legendre chaos, coefficient bounds and best-N selection."""
from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SQRT3 = math.sqrt(3.0)


class DimensionMismatch(ValueError):
    pass


class InvalidConstants(ValueError):
    pass


class NotSorted(ValueError):
    pass


# ---------------------------------------------------------------------------
# multi-indices

class MultiIndex:
    """Finitely supported index nu = (nu_1, nu_2, ...), dimensions counted from 1."""

    __slots__ = ("support", "_hash")

    def __init__(self, support: Iterable[tuple[int, int]] = ()):
        acc: dict[int, int] = {}
        for m, k in support:
            m, k = int(m), int(k)
            if m < 1 or k < 0:
                raise ValueError("dimensions start at 1 and orders are nonnegative")
            acc[m] = acc.get(m, 0) + k
        self.support = tuple(sorted((m, k) for m, k in acc.items() if k > 0))
        self._hash = hash(self.support)

    @classmethod
    def zero(cls) -> "MultiIndex":
        return cls()

    @classmethod
    def unit(cls, m: int, k: int = 1) -> "MultiIndex":
        return cls([(m, k)])

    @classmethod
    def from_dense(cls, orders: Sequence[int]) -> "MultiIndex":
        return cls((m + 1, k) for m, k in enumerate(orders))

    def to_dense(self, n_dims: int) -> np.ndarray:
        out = np.zeros(n_dims, dtype=int)
        for m, k in self.support:
            if m > n_dims:
                raise DimensionMismatch(f"index touches dimension {m} > {n_dims}")
            out[m - 1] = k
        return out

    def __getitem__(self, m: int) -> int:
        for mm, k in self.support:
            if mm == m:
                return k
        return 0

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(self.support + other.support)

    def shifted(self, m: int, step: int) -> "MultiIndex | None":
        k = self[m] + step
        if k < 0:
            return None
        rest = [(mm, kk) for mm, kk in self.support if mm != m]
        return MultiIndex(rest + [(m, k)])

    @property
    def order(self) -> int:
        return sum(k for _, k in self.support)

    @property
    def max_dim(self) -> int:
        return self.support[-1][0] if self.support else 0

    def factorial(self) -> int:
        return math.prod(math.factorial(k) for _, k in self.support)

    def log_factorial(self) -> float:
        return sum(math.lgamma(k + 1) for _, k in self.support)

    def sort_key(self) -> tuple:
        return (self.order, self.support)

    def __lt__(self, other: "MultiIndex") -> bool:
        return self.sort_key() < other.sort_key()

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndex) and self.support == other.support

    def __hash__(self) -> int:
        return self._hash

    def to_text(self) -> str:
        """Space-separated ``dim:order`` pairs; the zero index is ``0``."""
        return " ".join(f"{m}:{k}" for m, k in self.support) or "0"

    @classmethod
    def from_text(cls, line: str) -> "MultiIndex":
        items = []
        if line.strip() == "0":
            return cls(items)
        for tok in line.split():
            m, k = tok.split(":")
            items.append((int(m), int(k)))
        return cls(items)

    def __repr__(self) -> str:
        return f"MultiIndex({self.to_text()})"


class IndexSet:
    """Finite, duplicate-free set of multi-indices in graded lexicographic order."""

    def __init__(self, indices: Iterable[MultiIndex] = ()):
        self.indices = tuple(sorted(set(indices), key=MultiIndex.sort_key))
        self._pos = {nu: i for i, nu in enumerate(self.indices)}

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, nu) -> bool:
        return nu in self._pos

    def __eq__(self, other) -> bool:
        return isinstance(other, IndexSet) and self.indices == other.indices

    def position(self, nu: MultiIndex) -> int:
        return self._pos[nu]

    def issubset(self, other: "IndexSet") -> bool:
        return all(nu in other for nu in self.indices)

    @property
    def max_dim(self) -> int:
        return max((nu.max_dim for nu in self.indices), default=0)

    @property
    def max_order(self) -> int:
        return max((nu.order for nu in self.indices), default=0)

    def max_order_per_dim(self, n_dims: int) -> np.ndarray:
        out = np.zeros(n_dims, dtype=int)
        for nu in self.indices:
            out = np.maximum(out, nu.to_dense(n_dims))
        return out

    def is_downward_closed(self) -> bool:
        for nu in self.indices:
            for m, _ in nu.support:
                if nu.shifted(m, -1) not in self._pos:
                    return False
        return True

    def downward_closure(self) -> "IndexSet":
        out = set(self.indices)
        stack = list(self.indices)
        while stack:
            nu = stack.pop()
            for m, _ in nu.support:
                mu = nu.shifted(m, -1)
                if mu not in out:
                    out.add(mu)
                    stack.append(mu)
        return IndexSet(out)

    def to_text(self) -> str:
        return "".join(nu.to_text() + "\n" for nu in self.indices)

    @classmethod
    def from_text(cls, text: str) -> "IndexSet":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(MultiIndex.from_text(line) for line in lines)

    @classmethod
    def total_degree(cls, n_dims: int, degree: int) -> "IndexSet":
        out = []

        def rec(prefix, left):
            if len(prefix) == n_dims:
                out.append(MultiIndex.from_dense(prefix))
                return
            for k in range(left + 1):
                rec(prefix + [k], left - k)

        rec([], degree)
        return cls(out)

    @classmethod
    def tensor_product(cls, n_dims: int, degree: int) -> "IndexSet":
        import itertools
        return cls(MultiIndex.from_dense(t) for t in itertools.product(range(degree + 1), repeat=n_dims))

    def __repr__(self) -> str:
        return f"IndexSet({[nu.to_text() for nu in self.indices]})"


# ---------------------------------------------------------------------------
# Legendre polynomials, orthonormal for the measure dt/2 on [-1, 1]

def legendre_eval(n: int, t) -> np.ndarray | float:
    """L_n(t) = sqrt(2n+1) P_n(t)."""
    if n < 0:
        raise ValueError("order must be nonnegative")
    t_arr = np.asarray(t, dtype=float)
    p_prev = np.ones_like(t_arr)
    if n == 0:
        out = p_prev
    else:
        p = t_arr.copy()
        for k in range(1, n):
            p, p_prev = ((2 * k + 1) * t_arr * p - k * p_prev) / (k + 1), p
        out = p
    out = math.sqrt(2 * n + 1) * out
    return float(out) if np.ndim(t) == 0 else out


def legendre_table(max_order: int, t) -> np.ndarray:
    """Array (max_order+1, *t.shape) of L_0..L_max at t."""
    t = np.asarray(t, dtype=float)
    out = np.empty((max_order + 1,) + t.shape)
    out[0] = 1.0
    if max_order >= 1:
        out[1] = t
    for k in range(1, max_order):
        out[k + 1] = ((2 * k + 1) * t * out[k] - k * out[k - 1]) / (k + 1)
    scale = np.sqrt(2 * np.arange(max_order + 1) + 1.0)
    return out * scale.reshape((-1,) + (1,) * t.ndim)


def legendre_coupling(n: int) -> float:
    """c_n = int t L_n L_{n+1} dt/2, so that t L_n = c_n L_{n+1} + c_{n-1} L_{n-1}."""
    if n < 0:
        return 0.0
    return (n + 1) / math.sqrt((2 * n + 1) * (2 * n + 3))


def multi_legendre_eval(nu: MultiIndex, z) -> np.ndarray | float:
    """prod_m L_{nu_m}(z_m); z is a ParamPoint, a vector, or an array (nz, M)."""
    from .tensor_fields import ParamPoint
    if isinstance(z, ParamPoint):
        z = np.array(z.z)
    z = np.asarray(z, dtype=float)
    m_avail = z.shape[-1] if z.ndim else 0
    if nu.max_dim > m_avail:
        raise DimensionMismatch(f"index touches dimension {nu.max_dim}, only {m_avail} active")
    out = np.ones(z.shape[:-1])
    for m, k in nu.support:
        out = out * legendre_eval(k, z[..., m - 1])
    return float(out) if z.ndim == 1 else out


def chaos_matrix(index_set: IndexSet, zs: np.ndarray) -> np.ndarray:
    """Matrix (nz, |Lambda|) of L_nu(z_q)."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    n_dims = zs.shape[1]
    if index_set.max_dim > n_dims:
        raise DimensionMismatch("index set touches dimensions beyond the points")
    deg = max(index_set.max_order, 1)
    tab = legendre_table(deg, zs)  # (deg+1, nz, M)
    out = np.ones((zs.shape[0], len(index_set)))
    for j, nu in enumerate(index_set):
        for m, k in nu.support:
            out[:, j] *= tab[k, :, m - 1]
    return out


def coupling_matrices(index_set: IndexSet, n_dims: int) -> list:
    """G_m[nu, mu] = int z_m L_nu L_mu d rho for m = 1..n_dims (scipy sparse)."""
    import scipy.sparse as sp
    n = len(index_set)
    out = []
    for m in range(1, n_dims + 1):
        rows, cols, vals = [], [], []
        for i, nu in enumerate(index_set):
            up = nu.shifted(m, 1)
            if up in index_set:
                j = index_set.position(up)
                c = legendre_coupling(nu[m])
                rows += [i, j]
                cols += [j, i]
                vals += [c, c]
        out.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return out


def gauss_legendre_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the probability measure dt/2 on [-1, 1]."""
    t, w = np.polynomial.legendre.leggauss(n_points)
    return t, 0.5 * w


def tensor_rule(points_per_dim: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on [-1,1]^M for the uniform probability measure."""
    rules = [gauss_legendre_rule(int(n)) for n in points_per_dim]
    if not rules:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return z, w


# ---------------------------------------------------------------------------
# bound sequences

@dataclass(frozen=True)
class BoundSequence:
    kind: str
    values: tuple
    provenance: Mapping = field(default_factory=dict)
    p: float | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(v < 0 for v in vals):
            raise InvalidConstants("bound sequence entries must be nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def l1(self) -> float:
        return float(sum(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def scaled(self, c: float) -> "BoundSequence":
        return BoundSequence(self.kind, tuple(c * v for v in self.values), self.provenance, self.p)


def coeff_bound(nu: MultiIndex, d) -> float:
    """(|nu|! / nu!) prod_m d_m^{nu_m}."""
    vals = d.values if isinstance(d, BoundSequence) else tuple(d)
    if nu.max_dim > len(vals):
        raise DimensionMismatch(f"bound sequence has {len(vals)} entries, index needs {nu.max_dim}")
    if any(vals[m - 1] == 0.0 for m, _ in nu.support):
        return 0.0
    if nu.order <= 20:
        coef = math.factorial(nu.order) // nu.factorial()
        return float(coef) * math.prod(vals[m - 1] ** k for m, k in nu.support)
    return coeff_bound_log(nu, vals)


def coeff_bound_log(nu: MultiIndex, vals) -> float:
    logv = math.lgamma(nu.order + 1) - nu.log_factorial()
    logv += sum(k * math.log(vals[m - 1]) for m, k in nu.support)
    return math.exp(logv)


def incompressible_constants(c0: float, c7: float, mu_min: float, mu_max: float,
                             kappa0: float = 0.0) -> dict:
    """The constants C1..C5 and the threshold theta2 for the penalty formulation.

    c0 is the inf-sup constant of the divergence, c7 the bound of the strain
    operator in the V norm.
    """
    r = 1.0 + mu_max / mu_min
    return {
        "C1": 4 * c7 ** 2 * mu_min / c0 ** 2 * r ** 2,
        "C2": c7 / c0 * r,
        "C3": 4 * mu_max * c7 ** 3 / c0 ** 3 * r ** 2,
        "C4": 4 * c7 * mu_min / c0 * r,
        "C5": 4 * mu_max * c7 ** 2 / c0 ** 2 * r,
        "theta2": 4 * mu_max * (1 + kappa0) * r * c7 ** 2 / c0 ** 2,
    }


def make_bound_sequence(kind: str, constants: Mapping, p: float | None = None) -> BoundSequence:
    """Coefficient-bound sequence for one of the three formulations.

    displacement: needs ``alpha`` and ``betas``.
    mixed: needs ``alpha0``, ``beta0`` and ``betas``.
    incompressible: needs ``gammas``, ``deltas``, ``mu_min``, ``lambda_min``,
    ``zeta`` and either C1..C5 or (``c0``, ``c7``, ``mu_max``); the
    threshold theta2 is checked against ``lambdabar_min`` when given.
    """
    c = dict(constants)
    if kind == "displacement":
        alpha = float(c["alpha"])
        if alpha <= 0:
            raise InvalidConstants("alpha must be positive")
        betas = np.asarray(c["betas"], float)
        vals = betas / (SQRT3 * alpha)
    elif kind == "mixed":
        a0, b0 = float(c["alpha0"]), float(c["beta0"])
        betas = np.asarray(c["betas"], float)
        g = 1.0 / a0 + b0 / a0 ** 2
        den = 1.0 - g * betas.sum()
        if den <= 0:
            raise InvalidConstants(f"denominator 1 - (1/alpha0 + beta0/alpha0^2) sum beta = {den:.4g} <= 0")
        delta = g * betas / den
        c["delta"] = tuple(delta)
        vals = delta / SQRT3
    elif kind == "incompressible":
        gam = np.asarray(c["gammas"], float)
        dl = np.asarray(c["deltas"], float)
        mu_min = float(c["mu_min"])
        lam_min = float(c["lambda_min"])
        zeta = float(c.get("zeta", 0.5))
        if not 0.0 < zeta < 1.0:
            raise InvalidConstants("zeta must lie in (0, 1)")
        if "C1" not in c:
            cc = incompressible_constants(float(c["c0"]), float(c["c7"]), mu_min, float(c["mu_max"]),
                                          float(c.get("kappa0", 0.0)))
            c.update(cc)
        if "lambdabar_min" in c and "theta2" in c and float(c["lambdabar_min"]) <= float(c["theta2"]):
            raise InvalidConstants(f"lambdabar_min = {c['lambdabar_min']} <= theta2 = {c['theta2']:.4g}")
        if lam_min <= 0:
            raise InvalidConstants("lambda_min must be positive")
        if math.isinf(lam_min):
            vals = np.maximum(gam / mu_min, 0.0)
        else:
            f1 = 1 + c["C1"] / lam_min + c["C4"] / lam_min ** zeta
            f2 = 1 + c["C2"] / lam_min ** (1 - zeta) + c["C3"] / lam_min ** (2 - zeta) + c["C5"] / lam_min
            vals = np.maximum(gam / mu_min * f1, dl / lam_min * f2)
        c["hd"] = tuple(vals)
        vals = vals / SQRT3
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    prov = {k: (tuple(v) if isinstance(v, np.ndarray) else v) for k, v in c.items()}
    return BoundSequence(kind, tuple(vals), prov, p)


# ---------------------------------------------------------------------------
# best-N selection

def _rank_value(b: float) -> float:
    # ties are detected after rounding to 12 significant digits
    return float(f"{b:.12e}")


def best_n_indices(d: BoundSequence | Sequence[float], n: int) -> IndexSet:
    """The n indices with largest coeff_bound, by best-first search from 0.

    Every nonzero index has a parent nu - e_m with strictly larger bound as
    soon as the l1 norm of d is below one, which makes the search exact.
    Ties: smaller |nu| first, then lexicographic support.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    vals = tuple(d.values if isinstance(d, BoundSequence) else d)
    if sum(vals) >= 1.0:
        warnings.warn("l1 norm of the bound sequence is >= 1; best-first search may be inexact",
                      RuntimeWarning, stacklevel=2)
    zero = MultiIndex.zero()
    heap = [(-1.0, 0, (), zero)]
    seen = {zero}
    out = []
    while heap and len(out) < n:
        _, _, _, nu = heapq.heappop(heap)
        out.append(nu)
        for m in range(1, len(vals) + 1):
            if vals[m - 1] == 0.0:
                continue
            child = nu.shifted(m, 1)
            if child in seen:
                continue
            seen.add(child)
            b = coeff_bound(child, vals)
            heapq.heappush(heap, (-_rank_value(b), child.order, child.support, child))
    return IndexSet(out)


def best_n_from_norms(norms: Mapping[MultiIndex, float], n: int) -> IndexSet:
    """Norm-driven selection: the n largest entries of a reference table."""
    items = sorted(norms.items(), key=lambda kv: (-_rank_value(kv[1]), kv[0].order, kv[0].support))
    chosen = [nu for nu, _ in items[:n]]
    if MultiIndex.zero() not in chosen and MultiIndex.zero() in norms:
        chosen = [MultiIndex.zero()] + chosen[: n - 1]
    return IndexSet(chosen)


def bound_tail(d: BoundSequence, index_set: IndexSet, n_enumerate: int = 4000) -> float:
    """sqrt(sum of squared bounds outside the set), truncated at n_enumerate indices."""
    pool = best_n_indices(d, max(n_enumerate, len(index_set) + 1))
    tail = [coeff_bound(nu, d) ** 2 for nu in pool if nu not in index_set]
    return math.sqrt(sum(tail))


# ---------------------------------------------------------------------------
# Stechkin and summability

def stechkin_tail(b: Sequence[float], n: int, p: float, q: float) -> tuple[float, float]:
    """((sum_{k>n} b_k^q)^{1/q}, n^{1/q-1/p} (sum b_k^p)^{1/p})."""
    if not 0 < p < q:
        raise ValueError("need 0 < p < q")
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("entries must be positive")
    if np.any(np.diff(b) > 0):
        raise NotSorted("sequence increases somewhere")
    tail = b[n:]
    lhs = float(np.sum(tail ** q) ** (1.0 / q)) if tail.size else 0.0
    rhs = float(n ** (1.0 / q - 1.0 / p) * np.sum(b ** p) ** (1.0 / p))
    if lhs > rhs * (1 + 1e-12):
        raise ArithmeticError(f"Stechkin inequality violated: {lhs} > {rhs}")
    return lhs, rhs


@dataclass
class SummabilityReport:
    kind: str
    p: float
    lp_norm: float
    decay_exponent: float
    lp_finite: bool
    kappa: float
    kappa_threshold: float
    kappa_ok: bool
    rate: float

    @property
    def passed(self) -> bool:
        return self.lp_finite and self.kappa_ok


def decay_exponent(seq: Sequence[float]) -> float:
    """Algebraic decay exponent t in seq_m ~ m^{-t}, fitted on the second half."""
    s = np.asarray(seq, dtype=float)
    m = np.arange(1, len(s) + 1)
    keep = s > 0
    s, m = s[keep], m[keep]
    if len(s) < 3:
        return np.inf
    h = len(s) // 2
    slope = np.polyfit(np.log(m[h:]), np.log(s[h:]), 1)[0] if len(s) - h >= 2 else np.polyfit(np.log(m), np.log(s), 1)[0]
    return float(-slope)


def summability_certificate(seq, p: float, kappa: float, kind: str = "displacement",
                            theta: float = 0.0) -> SummabilityReport:
    """l^p summability of a (truncated) sequence plus the kappa threshold."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if kind == "incompressible" and isinstance(seq, tuple) and len(seq) == 2 and np.ndim(seq[0]) == 1:
        s = np.maximum(np.abs(seq[0]), np.abs(seq[1]))
    else:
        s = np.abs(np.asarray(seq, dtype=float))
    lp = float(np.sum(s ** p) ** (1 / p))
    t = decay_exponent(s)
    finite = bool(np.isfinite(lp) and t * p > 1.0)
    thr = {"displacement": SQRT3, "mixed": SQRT3, "incompressible": SQRT3 / (1 + theta)}[kind]
    return SummabilityReport(kind, p, lp, t, finite, float(kappa), thr, bool(kappa < thr), 1 / p - 0.5)


# ---------------------------------------------------------------------------
# expansions

class GpcExpansion:
    """u(z) = sum_nu u_nu L_nu(z) with coefficients stored row-wise.

    ``coeffs`` has shape (|Lambda|, n); ``space_tag`` names the discrete
    space the rows live in (all rows share it)."""

    def __init__(self, index_set: IndexSet, coeffs: np.ndarray, space_tag=None, n_dims: int | None = None,
                 info: dict | None = None):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs.reshape(len(index_set), -1)
        if coeffs.shape[0] != len(index_set):
            raise ValueError("one coefficient row per index required")
        self.index_set = index_set
        self.coeffs = coeffs
        self.space_tag = space_tag
        self.n_dims = index_set.max_dim if n_dims is None else n_dims
        self.info = dict(info or {})

    @property
    def terms(self) -> dict:
        return {nu: self.coeffs[i] for i, nu in enumerate(self.index_set)}

    def __getitem__(self, nu: MultiIndex) -> np.ndarray:
        if nu in self.index_set:
            return self.coeffs[self.index_set.position(nu)]
        return np.zeros(self.coeffs.shape[1])

    def _pad(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] < self.index_set.max_dim:
            raise DimensionMismatch("evaluation point has too few coordinates")
        return z

    def evaluate(self, z) -> np.ndarray:
        """Sum_nu u_nu L_nu(z); z a single point or an array (nz, M)."""
        from .tensor_fields import ParamPoint
        if isinstance(z, ParamPoint):
            z = np.array(z.z)
        single = np.ndim(z) <= 1
        zz = self._pad(z)
        out = chaos_matrix(self.index_set, zz) @ self.coeffs
        return out[0] if single else out

    def norms(self, gram=None) -> dict:
        """||u_nu|| per index (Euclidean, or in the metric of ``gram``)."""
        if gram is None:
            vals = np.linalg.norm(self.coeffs, axis=1)
        else:
            vals = np.sqrt(np.einsum("ij,ij->i", self.coeffs @ gram, self.coeffs))
        return {nu: float(v) for nu, v in zip(self.index_set, vals)}

    def __repr__(self) -> str:
        return f"GpcExpansion(|Lambda|={len(self.index_set)}, n={self.coeffs.shape[1]}, space={self.space_tag})"
