"""Unfolding and folding operators between functions on D and on D x Y^n,
their integral identities, and folded-corrector error studies.

D is the unit square (or interval).  Functions of the slow variable are
extended by zero outside D.  Callables take point arrays of shape (np, d)
and return arrays whose first axis is np.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize as so

from .fem_core import batches, mandel_strain
from .gpc import BoundSequence, GpcExpansion, best_n_indices, chaos_matrix, tensor_rule
from .report import ConvergenceReport, fit_rate


class NonIntegerRatio(ValueError):
    pass


class BudgetExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# scales and quadrature

@dataclass(frozen=True)
class ScaleSchedule:
    """eps_1 = eps and eps_{i+1} = eps_i / ratios[i] with integer ratios >= 2."""
    eps: float
    ratios: tuple = ()

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        clean = []
        for r in self.ratios:
            ri = int(round(float(r)))
            if abs(float(r) - ri) > 1e-12 or ri < 2:
                raise NonIntegerRatio(f"scale ratio {r} is not an integer >= 2")
            clean.append(ri)
        object.__setattr__(self, "ratios", tuple(clean))

    @classmethod
    def from_scales(cls, scales: Sequence[float]) -> "ScaleSchedule":
        scales = [float(s) for s in scales]
        return cls(scales[0], tuple(a / b for a, b in zip(scales[:-1], scales[1:])))

    @property
    def n(self) -> int:
        return len(self.ratios) + 1

    @property
    def scales(self) -> list[float]:
        out = [float(self.eps)]
        for r in self.ratios:
            out.append(out[-1] / r)
        return out

    def aligned(self) -> bool:
        """True when the eps-cells tile D exactly."""
        k = 1.0 / self.eps
        return abs(k - round(k)) < 1e-9


def _as_schedule(s) -> ScaleSchedule:
    return s if isinstance(s, ScaleSchedule) else ScaleSchedule(float(s))


def composite_rule(d: int, points: int, subdiv: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0,1]^d with ``subdiv`` equal pieces per axis."""
    t, w = np.polynomial.legendre.leggauss(points)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    s = np.arange(subdiv)
    t1 = ((s[:, None] + t[None, :]) / subdiv).ravel()
    w1 = np.tile(w / subdiv, subdiv)
    grids = np.meshgrid(*([t1] * d), indexing="ij")
    wg = np.meshgrid(*([w1] * d), indexing="ij")
    return (np.stack([g.ravel() for g in grids], axis=1),
            np.prod(np.stack([g.ravel() for g in wg]), axis=0))


def _inside(x: np.ndarray) -> np.ndarray:
    return np.all((x >= 0.0) & (x <= 1.0), axis=1)


def _zero_extended(fn: Callable, x: np.ndarray, *rest) -> np.ndarray:
    """fn(x, *rest) where x lies in D, zero elsewhere."""
    inside = _inside(x)
    if inside.all():
        return np.asarray(fn(x, *rest), float)
    sub = np.asarray(fn(x[inside], *[r[inside] for r in rest]), float)
    out = np.zeros((len(x),) + sub.shape[1:])
    out[inside] = sub
    return out


def integer_part(x: np.ndarray, eps: float) -> np.ndarray:
    """Cell origins eps [x / eps]."""
    return eps * np.floor(np.asarray(x, float) / eps + 1e-12)


def fractional_part(x: np.ndarray, eps: float) -> np.ndarray:
    """{x / eps} in [0, 1)."""
    s = np.asarray(x, float) / eps
    return np.clip(s - np.floor(s + 1e-12), 0.0, 1.0)


def clipped_cell_rule(origin: np.ndarray, eps: float, t: np.ndarray, w: np.ndarray):
    """Map a rule on Y onto the part of the cell origin + eps Y that lies in D.
    Returns per-origin points (no, nt, d) in t-coordinates and weights
    (no, nt) already scaled by the fraction of Y kept."""
    lo = np.clip(-origin / eps, 0.0, 1.0)
    hi = np.clip((1.0 - origin) / eps, 0.0, 1.0)
    span = hi - lo
    pts = lo[:, None, :] + span[:, None, :] * t[None]
    return pts, w[None, :] * np.prod(span, axis=1)[:, None]


# ---------------------------------------------------------------------------
# folding and unfolding

@dataclass
class FoldedField:
    """x -> (fold of Phi)(x), evaluable at any points of D (or of D^eps)."""
    evaluate: Callable
    schedule: ScaleSchedule
    d: int

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float).reshape(-1, self.d)
        return self.evaluate(x)

    def l2_norm(self, points_per_cell: int = 3, domain: str = "D") -> float:
        return math.sqrt(cell_integral(lambda x: _sq(self(x)), self.schedule.eps, self.d,
                                       points_per_cell, domain=domain))


def _sq(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, float)
    return (v.reshape(len(v), -1) ** 2).sum(axis=1)


def fold_U(phi: Callable, eps, d: int = 2, t_points: int = 3, t_subdiv: int = 1,
           chunk: int = 20_000) -> FoldedField:
    """U(Phi)(x) = int_Y Phi(eps [x/eps] + eps t, {x/eps}) dt.

    Phi(x, y) is taken as zero for x outside D; the t-rule is restricted to
    the part of each cell inside D so the zero extension is integrated
    exactly.  ``t_subdiv`` splits Y for piecewise-smooth Phi."""
    sched = _as_schedule(eps)
    if sched.n != 1:
        return fold_Un(phi, sched, d, t_points, t_subdiv, chunk)
    e = sched.eps
    t, w = composite_rule(d, t_points, t_subdiv)

    def evaluate(x):
        out = None
        shape = _probe_shape(phi, d)
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            origin = integer_part(xs, e)
            y = fractional_part(xs, e)
            tp, tw = clipped_cell_rule(origin, e, t, w)
            nx, nt = tw.shape
            xx = (origin[:, None, :] + e * tp).reshape(-1, d)
            yy = np.repeat(y, nt, axis=0)
            keep = tw.ravel() > 0
            vals = np.zeros((nx * nt,) + shape)
            if keep.any():
                vals[keep] = np.asarray(phi(xx[keep], yy[keep]), float).reshape((keep.sum(),) + vals.shape[1:])
            vals = vals.reshape((nx, nt) + vals.shape[1:])
            part = np.einsum("pt,pt...->p...", tw, vals)
            if out is None:
                out = np.empty((len(x),) + part.shape[1:])
            out[s:s + chunk] = part
        return out if out is not None else np.zeros((0,) + shape)

    return FoldedField(evaluate, sched, d)


def _probe_shape(phi, d, n_fast: int = 1) -> tuple:
    p = np.full((1, d), 0.5)
    return np.asarray(phi(p, *([p] * n_fast)), float).shape[1:]


def _slot_points(x: np.ndarray, sched: ScaleSchedule, ts: list) -> list:
    """Arguments (x-slot, y_1, ..., y_n) of the multiscale folding formula."""
    sc = sched.scales
    r = sched.ratios
    out = [integer_part(x, sc[0]) + sc[0] * ts[0]]
    for i in range(1, sched.n):
        prev = fractional_part(x, sc[i - 1])
        out.append((np.floor(r[i - 1] * prev + 1e-12) + ts[i]) / r[i - 1])
    out.append(fractional_part(x, sc[-1]))
    return out


def fold_Un(phi: Callable, schedule: ScaleSchedule, d: int = 2, t_points: int = 3, t_subdiv: int = 1,
            chunk: int = 4_000) -> FoldedField:
    """Multiscale folding: Phi(x, y_1, ..., y_n) integrated over t_1..t_n with
    slots eps_1 [x/eps_1] + eps_1 t_1, and for i < n the slot
    ([r_i {x/eps_i}] + t_{i+1}) / r_i, and {x/eps_n} in the last one."""
    sched = _as_schedule(schedule)
    n = sched.n
    t, w = composite_rule(d, t_points, t_subdiv)
    nt = len(w)
    # product rule over (t_1, ..., t_n)
    idx = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(nt)] * n), indexing="ij")], axis=1)

    def evaluate(x):
        shape = _probe_shape(phi, d, n)
        out = np.empty((len(x),) + shape)
        e = sched.eps
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            np_ = len(xs)
            origin = integer_part(xs, e)
            tp, tw = clipped_cell_rule(origin, e, t, w)          # (np, nt, d), (np, nt)
            ts = [tp[:, idx[:, 0]].reshape(-1, d)]
            wt = tw[:, idx[:, 0]]
            for i in range(1, n):
                ts.append(np.tile(t[idx[:, i]], (np_, 1)))
                wt = wt * w[idx[:, i]][None, :]
            xr = np.repeat(xs, len(idx), axis=0)
            slots = _slot_points(xr, sched, ts)
            keep = wt.ravel() > 0
            vals = np.zeros((len(xr),) + shape)
            if keep.any():
                vals[keep] = np.asarray(phi(*[a[keep] for a in slots]), float).reshape((keep.sum(),) + shape)
            out[s:s + chunk] = np.einsum("pq,pq...->p...", wt, vals.reshape((np_, len(idx)) + shape))
        return out

    return FoldedField(evaluate, sched, d)


def unfold_T(phi: Callable, schedule, d: int = 2) -> Callable:
    """T(phi)(x, y_1, ..., y_n) = phi(eps_1 [x/eps_1] + sum_{i>=2} eps_i [r_{i-1} y_{i-1}]
    + eps_n y_n), with phi zero outside D."""
    sched = _as_schedule(schedule)
    sc = sched.scales

    def unfolded(x, *ys):
        if len(ys) != sched.n:
            raise ValueError(f"expected {sched.n} fast variables, got {len(ys)}")
        x = np.asarray(x, float).reshape(-1, d)
        pt = integer_part(x, sc[0])
        for i in range(1, sched.n):
            pt = pt + sc[i] * np.floor(sched.ratios[i - 1] * np.asarray(ys[i - 1], float) + 1e-12)
        pt = pt + sc[-1] * np.asarray(ys[-1], float)
        return _zero_extended(phi, pt)

    return unfolded


# ---------------------------------------------------------------------------
# integration helpers

def cell_integral(fn: Callable, eps: float, d: int = 2, points: int = 3, subdiv: int = 1,
                  domain: str = "D") -> float:
    """Integral of fn over D ("D") or over the union of eps-cells meeting D
    ("cells"), by a Gauss rule on every eps-cell (split by ``subdiv``).
    Exact for functions that are polynomial on each (sub)cell."""
    k = int(math.ceil(1.0 / eps - 1e-9))
    t, w = composite_rule(d, points, subdiv)
    origins = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(k) * eps] * d), indexing="ij")], axis=1)
    if domain == "D":
        tp, tw = clipped_cell_rule(origins, eps, t, w)
        pts = (origins[:, None, :] + eps * tp).reshape(-1, d)
        wts = (tw * eps ** d).ravel()
    elif domain == "cells":
        pts = (origins[:, None, :] + eps * t[None]).reshape(-1, d)
        wts = np.tile(w * eps ** d, len(origins))
    else:
        raise ValueError("domain is 'D' or 'cells'")
    total = 0.0
    for s in range(0, len(pts), 200_000):
        keep = wts[s:s + 200_000] > 0
        v = np.asarray(fn(pts[s:s + 200_000][keep]), float)
        total += float(wts[s:s + 200_000][keep] @ v.reshape(len(v), -1).sum(axis=1))
    return total


def product_integral(fn: Callable, d: int = 2, x_points: int = 3, x_subdiv: int = 1,
                     y_points: int = 3, y_subdiv: int = 1, n_fast: int = 1,
                     x_cell: float | None = None) -> float:
    """Integral of fn(x, y_1, .., y_n) over D x Y^n by composite Gauss rules.
    With ``x_cell`` the x-rule is laid out on eps-cells of D^eps instead of D."""
    if x_cell is None:
        xp, xw = composite_rule(d, x_points, x_subdiv)
    else:
        k = int(math.ceil(1.0 / x_cell - 1e-9))
        t, w = composite_rule(d, x_points, x_subdiv)
        origins = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(k) * x_cell] * d), indexing="ij")],
                           axis=1)
        xp = (origins[:, None, :] + x_cell * t[None]).reshape(-1, d)
        xw = np.tile(w * x_cell ** d, len(origins))
    yp, yw = composite_rule(d, y_points, y_subdiv)
    ny = len(yw)
    idx = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(ny)] * n_fast), indexing="ij")], axis=1)
    ywt = np.prod(yw[idx], axis=1)
    total = 0.0
    step = max(1, 400_000 // len(idx))
    for s in range(0, len(xw), step):
        xs = xp[s:s + step]
        xr = np.repeat(xs, len(idx), axis=0)
        ys = [np.tile(yp[idx[:, i]], (len(xs), 1)) for i in range(n_fast)]
        v = np.asarray(fn(xr, *ys), float)
        v = v.reshape(len(xs), len(idx), -1).sum(axis=2)
        total += float(xw[s:s + step] @ (v @ ywt))
    return total


def mass_identity(phi: Callable, eps: float, d: int = 2, points: int = 3, t_points: int = 3,
                  y_points: int = 3) -> tuple[float, float]:
    """(int over D^eps of U(Phi), int_D int_Y Phi).  The left side is taken
    over the eps-cells meeting D, which carry all of the support of U(Phi)
    inside the 2 eps neighbourhood of D."""
    folded = fold_U(phi, eps, d, t_points)
    lhs = cell_integral(lambda x: folded(x), eps, d, points, domain="cells")
    yp, yw = composite_rule(d, y_points)

    def inner(x):
        xr = np.repeat(x, len(yw), axis=0)
        yr = np.tile(yp, (len(x), 1))
        v = np.asarray(phi(xr, yr), float).reshape(len(x), len(yw), -1).sum(axis=2)
        return v @ yw
    return lhs, cell_integral(inner, eps, d, points, domain="D")


def conservation_identity(phi: Callable, schedule, d: int = 2, points: int = 3) -> tuple[float, float]:
    """(int_D phi, int over D^eps x Y^n of T(phi)).  The fast rules are split
    on the 1/r_i grids where the unfolded function jumps."""
    sched = _as_schedule(schedule)
    tphi = unfold_T(phi, sched, d)
    lhs = cell_integral(phi, sched.scales[-1], d, points, domain="D")
    k = int(math.ceil(1.0 / sched.eps - 1e-9))
    t, w = composite_rule(d, points)
    origins = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(k) * sched.eps] * d), indexing="ij")], axis=1)
    xp = (origins[:, None, :] + sched.eps * t[None]).reshape(-1, d)
    xw = np.tile(w * sched.eps ** d, len(origins))
    rules = [composite_rule(d, points, r) for r in sched.ratios] + [composite_rule(d, points)]
    sizes = [len(r[1]) for r in rules]
    idx = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")], axis=1)
    ywt = np.prod(np.stack([rules[i][1][idx[:, i]] for i in range(len(rules))], axis=1), axis=1)
    total = 0.0
    step = max(1, 400_000 // len(idx))
    for s in range(0, len(xw), step):
        xs = xp[s:s + step]
        xr = np.repeat(xs, len(idx), axis=0)
        ys = [np.tile(rules[i][0][idx[:, i]], (len(xs), 1)) for i in range(len(rules))]
        v = _sq_free(tphi(xr, *ys)).reshape(len(xs), len(idx))
        total += float(xw[s:s + step] @ (v @ ywt))
    return lhs, total


def _sq_free(v):
    v = np.asarray(v, float)
    return v.reshape(len(v), -1).sum(axis=1)


def fold_contraction(phi: Callable, eps: float, d: int = 2, points: int = 2, subdiv: int = 1,
                     y_subdiv: int = 1) -> tuple[float, float]:
    """(||U(Phi)||_{L2(D)}, ||Phi||_{L2(D x Y)}) with rules split on the
    given sub-grids so that piecewise-multilinear inputs are integrated
    exactly."""
    folded = fold_U(phi, eps, d, points, subdiv)
    lhs = math.sqrt(cell_integral(lambda x: _sq(folded(x)), eps, d, points, subdiv=max(subdiv, y_subdiv),
                                  domain="D"))
    k = int(math.ceil(1.0 / eps - 1e-9))
    rhs = math.sqrt(product_integral(lambda x, y: _sq(phi(x, y)), d, points, k * subdiv, points, y_subdiv))
    return lhs, rhs


def separable_fold(slow: Callable, fast: Callable, eps: float, d: int = 2, t_points: int = 3,
                   chunk: int = 200_000) -> FoldedField:
    """Fold of Phi(x, y) = sum_I slow_I(x) fast_I(y) (contracted over the
    trailing axis of ``slow`` and the second axis of ``fast``): the slow part
    is averaged over each eps-cell once, then paired with fast({x/eps})."""
    e = float(eps)
    t, w = composite_rule(d, t_points)
    cache: dict = {}

    def cell_means(origins):
        keys = np.round(origins / e).astype(np.int64)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        missing = [tuple(u) for u in uniq if tuple(u) not in cache]
        if missing:
            o = np.array(missing, float) * e
            tp, tw = clipped_cell_rule(o, e, t, w)
            vals = np.asarray(slow((o[:, None, :] + e * tp).reshape(-1, d)), float)
            vals = vals.reshape((len(o), len(w)) + vals.shape[1:])
            means = np.einsum("ct,ct...->c...", tw, vals)
            for key, m in zip(missing, means):
                cache[key] = m
        return np.stack([cache[tuple(u)] for u in uniq])[inv.ravel()]

    def evaluate(x):
        out = None
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            m = cell_means(integer_part(xs, e))                  # (np, K)
            f = np.asarray(fast(fractional_part(xs, e)), float)  # (np, K, ...)
            part = np.einsum("pk,pk...->p...", m, f)
            if out is None:
                out = np.empty((len(x),) + part.shape[1:])
            out[s:s + chunk] = part
        return out

    return FoldedField(evaluate, ScaleSchedule(e), d)


def oscillation_gap(phi: Callable, eps: float, d: int = 2, points: int = 3, t_points: int = 3,
                    subdiv: int = 2) -> float:
    """||Phi(x, {x/eps}) - U(Phi)(x)||_{L2(D)}."""
    folded = fold_U(phi, eps, d, t_points)

    def gap(x):
        return _sq(np.asarray(phi(x, fractional_part(x, eps)), float) - folded(x))
    return math.sqrt(cell_integral(gap, eps, d, points, subdiv=subdiv, domain="D"))


def oscillation_study(phi: Callable, eps_list, d: int = 2, **kw) -> ConvergenceReport:
    """Gap between Phi(x, x/eps) and its fold over eps halvings with the
    fitted log-log slope (expected 1 for smooth Phi)."""
    rep = ConvergenceReport(["eps", "gap", "slope"])
    gaps = [oscillation_gap(phi, float(e), d, **kw) for e in eps_list]
    slope = fit_rate(eps_list, gaps)[0] if len(gaps) >= 3 else float("nan")
    for e, g in zip(eps_list, gaps):
        rep.add(eps=float(e), gap=g, slope=slope)
    rep.metadata["slope"] = slope
    return rep


# ---------------------------------------------------------------------------
# folded corrector error over (eps, N)

def two_scale_expansions(problem, bounds: BoundSequence, n_list) -> dict:
    """Two-scale Galerkin solutions on the best-N sets of ``bounds``."""
    from .solvers_displacement import solve_two_scale_galerkin
    return {int(n): solve_two_scale_galerkin(problem, best_n_indices(bounds, int(n))) for n in n_list}


def _fine_problem(problem, eps: float, factor: int, order: int):
    n = int(round(factor / eps))
    return dataclasses.replace(problem, n=n, order=order, eps=eps, validate=False, _models={})


def _unique_rows(y: np.ndarray):
    key = np.round(y, 10)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    return uniq, inv.ravel()


def _cell_means(space, coeffs: np.ndarray, eps: float, points: int = 3, subdiv: int = 2) -> np.ndarray:
    """Averages of the Mandel strain of each field (rows of ``coeffs``) over
    every eps-cell of D; shape (n_cells, n_fields, k)."""
    d = space.mesh.d
    k = int(math.ceil(1.0 / eps - 1e-9))
    t, w = composite_rule(d, points, subdiv)
    origins = np.stack([g.ravel() for g in np.meshgrid(*([np.arange(k) * eps] * d), indexing="ij")], axis=1)
    tp, tw = clipped_cell_rule(origins, eps, t, w)
    pts = (origins[:, None, :] + eps * tp).reshape(-1, d)
    out = []
    for c in coeffs:
        s_ = mandel_strain(space.gradient(c, pts)).reshape(len(origins), len(w), -1)
        out.append(np.einsum("ct,ctk->ck", tw, s_) / np.maximum(tw.sum(axis=1), 1e-300)[:, None])
    return np.stack(out, axis=1)


def _cell_index(x: np.ndarray, eps: float) -> np.ndarray:
    k = int(math.ceil(1.0 / eps - 1e-9))
    ij = np.clip(np.floor(x / eps + 1e-12).astype(np.int64), 0, k - 1)
    # row-major index matching the origin layout of _cell_means
    idx = ij[:, 0]
    for j in range(1, x.shape[1]):
        idx = idx * k + ij[:, j]
    return idx


def folded_corrector_error(problem, expansions: dict, eps_list, points_per_dim: int = 3,
                           fine_factor: int = 8, fine_order: int = 2, max_fine_dofs: int = 400_000,
                           fine_solutions: dict | None = None) -> ConvergenceReport:
    """Mean-square-in-z errors ||grad u_eps - grad u0_N - U(grad_y u1_N)|| and
    ||sigma_eps - U(sigma_N)|| over D, for each eps and each N.

    ``expansions`` maps N to the two-scale Galerkin solution (u0 expansion
    with the parametric cell solutions in its info).  Fine solves use
    Lagrange elements of ``fine_order`` with h = eps / fine_factor at the
    tensor Gauss points in z; sigma_N = a(z; y)(e(u0_N) + e_y(u1_N))."""
    tensor = problem.tensor
    if tensor.x_dependent:
        raise NotImplementedError("folded corrector errors assume x-independent microstructure")
    d = problem.d
    m = problem.n_modes
    zs, zw = tensor_rule([points_per_dim] * m)
    macro = problem.space
    rep = ConvergenceReport(["eps", "N", "error_grad", "error_stress"],
                            metadata={"points_per_dim": points_per_dim, "fine_factor": fine_factor,
                                      "fine_order": fine_order})
    t_start = time.perf_counter()
    fine_solutions = {} if fine_solutions is None else fine_solutions
    for eps in sorted(eps_list, reverse=True):
        fine = _fine_problem(problem, float(eps), fine_factor, fine_order)
        if fine.space.n_dofs > max_fine_dofs:
            raise BudgetExceeded(f"fine space at eps={eps} has {fine.space.n_dofs} dofs > {max_fine_dofs}")
        if eps not in fine_solutions:
            model = fine.model(float(eps))
            fine_solutions[eps] = np.array([fine.space.expand(model.solve(z)) for z in zs])
        uf = fine_solutions[eps]
        pts, wts = [], []
        for b in batches(fine.space, 2 * fine_order):
            pts.append(b.points)
            wts.append(b.w.ravel())
        pts, wts = np.concatenate(pts), np.concatenate(wts)
        grads_f = [fine.space.gradient(u, pts) for u in uf]
        yu, yinv = _unique_rows(fractional_part(pts, eps))
        cell_of = _cell_index(pts, eps)
        amats = [tensor.mandel(z, np.zeros_like(yu), yu)[yinv] for z in zs]
        for n_terms in sorted(expansions):
            exp = expansions[n_terms]
            lam = exp.index_set
            n_lam = len(lam)
            yspace = exp.info["yspace"]
            nsol = exp.info["cell_solutions"]                     # (n_lam * nY, n_lam * k)
            ny = yspace.n_dofs
            u0 = np.array([macro.expand(c) for c in exp.coeffs])  # (n_lam, n_dofs)
            g0 = np.stack([macro.gradient(c, pts) for c in u0])   # (n_lam, np, d, d)
            means = _cell_means(macro, u0, eps)                   # (ncell, n_lam, k)
            kk = means.shape[2]
            means = means.reshape(len(means), -1)                 # columns (nu, I)
            fast = np.empty((n_lam, nsol.shape[1], len(yu), d, d))
            for mu in range(n_lam):
                for col in range(nsol.shape[1]):
                    fast[mu, col] = yspace.gradient(nsol[mu * ny:(mu + 1) * ny, col], yu)
            lz = chaos_matrix(lam, zs)                            # (nz, n_lam)
            e_grad = e_stress = 0.0
            for q, z in enumerate(zs):
                grad0 = np.einsum("n,npij->pij", lz[q], g0)
                fz = np.einsum("m,mcyij->cyij", lz[q], fast)      # (n_lam k, ny_u, d, d)
                mc = means[cell_of]                               # (np, n_lam k)
                folded = np.einsum("pc,cpij->pij", mc, fz[:, yinv])
                diff = grads_f[q] - grad0 - folded
                e_grad += zw[q] * float(wts @ np.einsum("pij,pij->p", diff, diff))
                sbar = np.einsum("n,pnk->pk", lz[q], mc.reshape(len(mc), n_lam, kk))
                sfold = sbar + mandel_strain(folded)
                ds = np.einsum("pkl,pl->pk", amats[q], mandel_strain(grads_f[q]) - sfold)
                e_stress += zw[q] * float(wts @ np.einsum("pk,pk->p", ds, ds))
            rep.add(eps=float(eps), N=int(n_terms), error_grad=math.sqrt(e_grad), error_stress=math.sqrt(e_stress))
    rep.rows.sort(key=lambda r: (-r[0], r[1]))
    rep.metadata["wall_time"] = time.perf_counter() - t_start
    return rep


def error_matrix(report: ConvergenceReport, column: str = "error_grad"):
    """(eps values descending, N values ascending, matrix[eps, N])."""
    eps = sorted(set(report.column("eps")), reverse=True)
    ns = sorted(set(int(v) for v in report.column("N")))
    mat = np.full((len(eps), len(ns)), np.nan)
    for r in report.rows:
        row = dict(zip(report.columns, r))
        mat[eps.index(row["eps"]), ns.index(int(row["N"]))] = row[column]
    return np.array(eps), np.array(ns), mat


def monotone_violation(mat: np.ndarray) -> float:
    """Largest relative increase along either axis of an error matrix whose
    rows run over decreasing eps and columns over increasing N."""
    worst = 0.0
    for a, axis in ((mat, 0), (mat, 1)):
        prev = np.take(a, range(a.shape[axis] - 1), axis=axis)
        nxt = np.take(a, range(1, a.shape[axis]), axis=axis)
        worst = max(worst, float(np.max((nxt - prev) / prev)))
    return worst


def fit_additive_model(eps, ns, mat, s_range=(0.1, 6.0)) -> dict:
    """Fit err(eps, N) ~ c1 eps^(1/2) + c2 N^(-s) with c1, c2 >= 0.

    The fit minimizes the relative misfit; ``residual`` is the root mean
    square of (model - data) / data."""
    ee, nn = np.meshgrid(np.asarray(eps, float), np.asarray(ns, float), indexing="ij")
    data = np.asarray(mat, float).ravel()
    ee, nn = ee.ravel(), nn.ravel()

    def solve(s):
        a = np.stack([np.sqrt(ee), nn ** (-s)], axis=1) / data[:, None]
        c, _ = so.nnls(a, np.ones_like(data))
        r = a @ c - 1.0
        return c, float(np.sqrt(np.mean(r ** 2)))

    res = so.minimize_scalar(lambda s: solve(s)[1], bounds=s_range, method="bounded")
    c, r = solve(res.x)
    return {"c1": float(c[0]), "c2": float(c[1]), "s": float(res.x), "residual": r}
