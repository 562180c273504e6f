"""Periodic cell problems, homogenized moduli and two-scale correctors.

Cell solutions are stored per Mandel unit strain E_I; the tensor-indexed
solutions follow as N^{rs} = N_I / w_I with the Mandel weight w_I.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem_core import (FeField, FeSpace, Mesh, SolverBreakdown, assemble_div_coupling,
                       assemble_elastic, assemble_load, assemble_strain_load,
                       assemble_weighted_mass, batches, h1_matrix, recovered_strain, rigid_body_modes,
                       solve_block, solve_spd)
from .fem_core.assembly import as_point_tensor
from .report import ConvergenceReport, fit_rate
from .tensor_fields import (AffineElasticTensor, IsotropicLameField, SymTensor4, TensorField,
                            as_zvec, isotropic_mandel, mandel_weights, nsym, sym_pairs)

log = logging.getLogger(__name__)


class BudgetExceeded(ValueError):
    pass


# ---------------------------------------------------------------------------
# coefficient plumbing

def cell_tensor(tensor, d: int, z=None, x=None):
    """Callable y-points -> Mandel matrices for a tensor frozen at (z, x).

    Accepts an AffineElasticTensor, IsotropicLameField, TensorField,
    SymTensor4, scalar, or a callable of y alone."""
    xv = np.zeros(d) if x is None else np.asarray(x, float).reshape(d)
    if isinstance(tensor, IsotropicLameField):
        tensor = tensor.tensor_at(np.zeros(0) if z is None else z)
    if isinstance(tensor, AffineElasticTensor):
        tensor = tensor.at(np.zeros(0) if z is None else z)
    if isinstance(tensor, TensorField):
        tf = tensor
        return lambda y: tf(xv[None, :], y)
    return as_point_tensor(tensor, d)


def _unit_strains(d: int) -> np.ndarray:
    return np.eye(nsym(d))


def _trace_vector(d: int) -> np.ndarray:
    """Mandel vector of the identity matrix: t . E = tr(E)."""
    return np.array([1.0 if i == j else 0.0 for i, j in sym_pairs(d)])


def _mean_tensor(space: FeSpace, fn, degree=None) -> np.ndarray:
    k = nsym(space.mesh.d)
    out = np.zeros((k, k))
    for b in batches(space, degree):
        a = np.asarray(fn(b.points), float).reshape(b.w.shape + (k, k))
        out += np.einsum("cq,cqij->ij", b.w, a)
    return out


@dataclass
class CellOperators:
    """Discrete cell-problem data on a periodic Y-space.

    stiffness: int a eps(u):eps(v); loads[I]: int a E_I : eps(v);
    mean: int a dy (Mandel); constraint: mean-value rows."""
    space: FeSpace
    stiffness: sp.csr_matrix
    loads: np.ndarray
    mean: np.ndarray
    constraint: sp.csr_matrix


def cell_operators(yspace: FeSpace, tensor_y, degree: int | None = None) -> CellOperators:
    if not yspace.periodic or yspace.arity != "vector":
        raise ValueError("cell problems need a periodic vector space")
    d = yspace.mesh.d
    fn = as_point_tensor(tensor_y, d)
    k = assemble_elastic(yspace, fn, degree)
    loads = np.stack([assemble_strain_load(yspace, fn, e, degree) for e in _unit_strains(d)])
    return CellOperators(yspace, k, loads, _mean_tensor(yspace, fn, degree), yspace.mean_constraint())


class _SaddleFactor:
    """LU of [[K, C^T], [C, 0]] reused over several right-hand sides."""

    def __init__(self, k, c, extra=None, tol: float = 1e-10):
        blocks = [[k, c.T], [c, None]] if extra is None else extra
        self.matrix = sp.bmat(blocks, format="csc")
        self.tol = tol
        # symmetric row/column equilibration keeps stiff penalty blocks benign
        rmax = np.sqrt(abs(self.matrix).max(axis=1).toarray().ravel())
        self.scale = 1.0 / np.where(rmax > 0, rmax, 1.0)
        dm = sp.diags(self.scale)
        self.scaled = (dm @ self.matrix @ dm).tocsc()
        try:
            self.lu = spla.splu(self.scaled)
        except RuntimeError as exc:
            raise SolverBreakdown(f"cell factorisation failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sc = self.scale
        x = sc * self.lu.solve(sc * rhs)
        hist = []
        absm = abs(self.matrix)
        for _ in range(6):
            r = rhs - self.matrix @ x
            # normwise backward error: penalty pressures of size lam make the
            # plain relative residual stagnate at lam * machine precision
            nb = max(np.linalg.norm(absm @ np.abs(x) + np.abs(rhs)), 1e-300)
            hist.append(np.linalg.norm(r) / nb)
            if hist[-1] <= self.tol:
                break
            x = x + sc * self.lu.solve(sc * r)
        if not np.all(np.isfinite(x)) or hist[-1] > self.tol:
            raise SolverBreakdown(f"cell residual {hist[-1]:.2e} > {self.tol:.0e}", hist)
        return x


# ---------------------------------------------------------------------------
# cell solutions

@dataclass
class CellSolutionTable:
    """Cell solutions at one macro point.

    ``mandel_solutions[I]`` solves the cell problem for the Mandel unit
    strain E_I; ``mandel_pressures`` is set in the incompressible case."""
    space: FeSpace
    mandel_solutions: np.ndarray
    x: np.ndarray | None = None
    z: np.ndarray | None = None
    mandel_pressures: np.ndarray | None = None
    pressure_space: FeSpace | None = None
    operators: CellOperators | None = None
    residuals: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.space.mesh.d

    def _tensor_indexed(self, arr):
        w = mandel_weights(self.d)
        out = {}
        for i, (r, s) in enumerate(sym_pairs(self.d)):
            out[(r, s)] = arr[i] / w[i]
        return out

    @property
    def N(self) -> dict:
        """N^{rs} coefficient vectors, r <= s."""
        return self._tensor_indexed(self.mandel_solutions)

    @property
    def p(self) -> dict | None:
        if self.mandel_pressures is None:
            return None
        return self._tensor_indexed(self.mandel_pressures)

    def solution_for(self, strain) -> np.ndarray:
        """Cell solution for a general Mandel strain (linear combination)."""
        return np.asarray(strain, float) @ self.mandel_solutions

    def values(self, y: np.ndarray) -> np.ndarray:
        """N_I(y) for all I: shape (np, k, d)."""
        return np.stack([self.space.evaluate(n, y) for n in self.mandel_solutions], axis=1)

    def strains(self, y: np.ndarray) -> np.ndarray:
        """eps_y(N_I)(y) in Mandel form: shape (np, k, k) with [p, I, :]."""
        from .fem_core import mandel_strain
        return np.stack([mandel_strain(self.space.gradient(n, y)) for n in self.mandel_solutions], axis=1)

    def pressure_values(self, y: np.ndarray) -> np.ndarray:
        return np.stack([self.pressure_space.evaluate(p, y)[:, 0] for p in self.mandel_pressures], axis=1)


def solve_cell_problems(tensor, yspace: FeSpace, z=None, x=None, degree: int | None = None,
                        tol: float = 1e-10) -> CellSolutionTable:
    """Solve int a (E_I + eps_y N_I) : eps_y(phi) dy = 0 with zero-mean N_I."""
    d = yspace.mesh.d
    ops = cell_operators(yspace, cell_tensor(tensor, d, z, x), degree)
    fac = _SaddleFactor(ops.stiffness, ops.constraint, tol=tol)
    n = yspace.n_dofs
    sols, res = [], []
    for load in ops.loads:
        rhs = np.concatenate([-load, np.zeros(d)])
        sol = fac.solve(rhs)
        sols.append(sol[:n])
        res.append(float(np.linalg.norm(ops.stiffness @ sol[:n] + load) / max(np.linalg.norm(load), 1e-300)))
    return CellSolutionTable(yspace, np.array(sols), None if x is None else np.asarray(x, float),
                             None if z is None else np.asarray(z, float), operators=ops, residuals=res)


@dataclass
class HomogenizedTensor:
    """Homogenized moduli at one macro point.

    In the incompressible decomposition ``mu0`` is the Mandel matrix of the
    shear part and ``lambda0`` the (d, d) pressure matrix."""
    a0: SymTensor4
    mu0: np.ndarray | None = None
    lambda0: np.ndarray | None = None
    x: np.ndarray | None = None
    z: np.ndarray | None = None

    @property
    def mandel(self) -> np.ndarray:
        return self.a0.mandel

    def min_eig(self) -> float:
        return float(self.a0.eigvals().min())

    def bulk_split(self) -> tuple[np.ndarray, float]:
        """Split a0 = B + lam* v v^T (v = Mandel identity) with B PSD and
        coercive on trace-free strains; returns (B, lam*)."""
        m = self.mandel
        v = _trace_vector(self.a0.d)
        lam = 1.0 / float(v @ np.linalg.solve(m, v))
        return m - lam * np.outer(v, v), lam


def _symmetrize(m: np.ndarray, what: str, tol: float = 1e-8) -> SymTensor4:
    asym = np.abs(m - m.T).max()
    scale = max(np.abs(m).max(), 1e-300)
    if asym > tol * scale:
        log.warning("%s: relative asymmetry %.2e before symmetrisation", what, asym / scale)
    return SymTensor4.from_mandel(0.5 * (m + m.T))


def homogenized_tensor(table: CellSolutionTable, tensor=None, degree: int | None = None) -> HomogenizedTensor:
    """a0_IJ = int a (E_I + eps N_I) : (E_J + eps N_J) dy by quadrature.

    ``tensor`` is only needed when the table carries no operators."""
    ops = table.operators
    if ops is None:
        if tensor is None:
            raise ValueError("cell table carries no operators; pass the tensor")
        ops = cell_operators(table.space, cell_tensor(tensor, table.d, table.z, table.x), degree)
    n = table.mandel_solutions
    g = ops.loads
    m = ops.mean + g @ n.T + n @ g.T + n @ (ops.stiffness @ n.T)
    return HomogenizedTensor(_symmetrize(m, "a0"), x=table.x, z=table.z)


def homogenize(tensor, yspace: FeSpace, z=None, x=None, degree: int | None = None) -> HomogenizedTensor:
    """Cell solve plus homogenized tensor in one call."""
    return homogenized_tensor(solve_cell_problems(tensor, yspace, z, x, degree))


# ---------------------------------------------------------------------------
# reiterated homogenization

@dataclass
class LevelSchedule:
    """Per-level Y-meshes (n cells per side, element order) and the
    quadrature degree at which the next-level moduli are frozen."""
    meshes: list
    freeze_degree: int = 2
    budget: int = 20000
    max_levels: int = 3


def reiterated_homogenize(fn, d: int, schedule: LevelSchedule) -> HomogenizedTensor:
    """Homogenize a(y_1, ..., y_n) level by level.

    ``fn(ys)`` receives a list of n arrays (np, d) (one per scale) and returns
    Mandel matrices (np, k, k); x and z are frozen by the caller.  Level m
    moduli are computed at the freeze-quadrature points of the Y_m mesh by
    solving the Y_{m+1} cell problem there."""
    n = len(schedule.meshes)
    if n < 2:
        raise ValueError("reiterated homogenization needs at least two scales")
    if n > schedule.max_levels:
        raise BudgetExceeded(f"{n} scales exceed the limit of {schedule.max_levels}")
    spaces = [FeSpace(Mesh(nm, d), order, "vector", periodic=True) for nm, order in schedule.meshes]
    npts = [sp_.mesh.n_cells * len(_freeze_rule(d, schedule.freeze_degree)[1]) for sp_ in spaces[:-1]]
    cost = int(np.prod(npts))
    if cost > schedule.budget:
        raise BudgetExceeded(f"{cost} inner cell solves exceed the budget {schedule.budget}")
    k = nsym(d)

    def level(m: int, frozen: list) -> np.ndarray:
        # moduli a^m(frozen[0..m-1]; .) as a callable of y_{m+1}, homogenized over Y_{m+1}
        space = spaces[m]
        if m == n - 1:
            def inner(y):
                return fn([np.broadcast_to(f, (len(y), d)) for f in frozen] + [y])
        else:
            pts_cache = {}

            def inner(y):
                key = y.tobytes()
                if key not in pts_cache:
                    vals = np.empty((len(y), k, k))
                    for i, yi in enumerate(y):
                        vals[i] = level(m + 1, frozen + [yi])
                    pts_cache[key] = vals
                return pts_cache[key]
            inner = _frozen_at_cells(space, inner, schedule.freeze_degree)
        return homogenize(inner, space).mandel

    a0 = level(0, [])
    return HomogenizedTensor(SymTensor4.from_mandel(0.5 * (a0 + a0.T)))


def _freeze_rule(d, degree):
    from .fem_core.quadrature import simplex_rule
    return simplex_rule(d, degree)


def _frozen_at_cells(space: FeSpace, fn, degree: int):
    """Piecewise-constant-per-freeze-point surrogate of fn on the mesh:
    values at the points of a per-cell rule, each used on its share of the cell."""
    d = space.mesh.d
    ref, _ = _freeze_rule(d, degree)
    pts = space.mesh.to_physical(np.repeat(np.arange(space.mesh.n_cells), len(ref)),
                                 np.tile(ref, (space.mesh.n_cells, 1)))
    vals = fn(pts).reshape(space.mesh.n_cells, len(ref), nsym(d), nsym(d))

    def lookup(y):
        cell, xi = space.mesh.locate(y, periodic=True)
        # nearest freeze point in reference coordinates
        dist = ((xi[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        return vals[cell, np.argmin(dist, axis=1)]
    return lookup


# ---------------------------------------------------------------------------
# nearly incompressible cell problem

def solve_incompressible_cell(lame, yspace: FeSpace, qspace: FeSpace | None = None, z=None, x=None,
                              tol: float = 1e-10):
    """Mixed cell problem for (N_I, p_I):

        int 2 mu (E_I + eps N_I) : eps(phi) + int p_I div phi = 0
        int (tr E_I + div N_I) q - int p_I q / lam = 0

    ``lame`` is an IsotropicLameField or a pair (mu(y), lam(y)) of callables.
    Returns the table (with pressures) and the HomogenizedTensor carrying
    mu0 (Mandel) and lambda0."""
    d = yspace.mesh.d
    if qspace is None:
        qspace = FeSpace(yspace.mesh, 0, "scalar", periodic=True)
    mu_fn, lam_fn = _lame_callables(lame, d, z, x)
    k = nsym(d)
    shear = lambda y: 2.0 * np.asarray(mu_fn(y), float)[:, None, None] * np.eye(k)
    kmat = assemble_elastic(yspace, shear)
    bmat = assemble_div_coupling(yspace, qspace)
    minv = assemble_weighted_mass(qspace, lambda y: 1.0 / np.asarray(lam_fn(y), float), degree=2)
    cmat = yspace.mean_constraint()
    nv, nq = yspace.n_dofs, qspace.n_dofs
    fac = _SaddleFactor(None, None, tol=tol,
                        extra=[[kmat, bmat.T, cmat.T], [bmat, -minv, None], [cmat, None, None]])
    qint = assemble_load(qspace, 1.0)
    tvec = _trace_vector(d)
    loads = np.stack([assemble_strain_load(yspace, shear, e) for e in _unit_strains(d)])
    sols, pres = [], []
    for i in range(k):
        rhs = np.concatenate([-loads[i], -tvec[i] * qint, np.zeros(d)])
        sol = fac.solve(rhs)
        sols.append(sol[:nv])
        pres.append(sol[nv:nv + nq])
    sols, pres = np.array(sols), np.array(pres)
    two_mu_mean = _mean_tensor(yspace, shear)
    mu0 = two_mu_mean + loads @ sols.T            # [I, J] = int 2mu (E_J + eps N_J)_I
    pint = pres @ qint                            # int p_J dy
    w = mandel_weights(d)
    lam0 = np.zeros((d, d))
    for j, (r, s) in enumerate(sym_pairs(d)):
        lam0[r, s] = lam0[s, r] = pint[j] / w[j]
    a0 = mu0 + np.outer(tvec, pint)
    ops = CellOperators(yspace, kmat, loads, two_mu_mean, cmat)
    table = CellSolutionTable(yspace, sols, None if x is None else np.asarray(x, float),
                              None if z is None else np.asarray(z, float), pres, qspace, ops)
    table.div_coupling = bmat
    table.inverse_lame_mass = minv
    table.pressure_integrals = qint
    return table, HomogenizedTensor(_symmetrize(a0, "a0 (incompressible)"), mu0, lam0, table.x, table.z)


def _lame_callables(lame, d, z, x):
    if isinstance(lame, IsotropicLameField):
        zv = np.zeros(0) if z is None else z
        xv = np.zeros(d) if x is None else np.asarray(x, float).reshape(d)
        return (lambda y: lame.mu(zv, np.broadcast_to(xv, (len(y), d)), y),
                lambda y: lame.lam(zv, np.broadcast_to(xv, (len(y), d)), y))
    mu, lam = lame
    wrap = lambda f: f if callable(f) else (lambda y, c=float(f): np.full(len(y), c))
    return wrap(mu), wrap(lam)


def pressure_identity_residual(table: CellSolutionTable) -> float:
    """max_I ||int (p_I/lam - tr E_I - div N_I) q||, relative, over P0 test functions."""
    d = table.d
    tvec = _trace_vector(d)
    out = 0.0
    for i in range(len(tvec)):
        r = table.inverse_lame_mass @ table.mandel_pressures[i] - table.div_coupling @ table.mandel_solutions[i] \
            - tvec[i] * table.pressure_integrals
        scale = max(np.linalg.norm(table.inverse_lame_mass @ table.mandel_pressures[i]),
                    np.linalg.norm(table.pressure_integrals))
        out = max(out, float(np.linalg.norm(r) / scale))
    return out


# ---------------------------------------------------------------------------
# macro-point dependence

class CellTableField:
    """Cell tables over the macro domain.

    x-independent microstructure shares a single table; otherwise tables are
    solved on a uniform (n+1)^d grid of macro points and their solutions
    interpolated multilinearly.  Tables are cached on (z, x)."""

    def __init__(self, tensor, yspace: FeSpace, z=None, x_grid: int = 4, incompressible: bool = False,
                 qspace: FeSpace | None = None):
        self.tensor = tensor
        self.yspace = yspace
        self.qspace = qspace
        self.d = yspace.mesh.d
        self.z = None if z is None else np.asarray(z, float)
        self.incompressible = incompressible
        self.x_dependent = bool(getattr(tensor, "x_dependent", False))
        self.x_grid = x_grid
        self.cache: dict = {}

    def table(self, x) -> CellSolutionTable:
        x = np.zeros(self.d) if x is None else np.asarray(x, float)
        key = (None if self.z is None else self.z.tobytes(), x.tobytes())
        if key not in self.cache:
            if self.incompressible:
                self.cache[key] = solve_incompressible_cell(self.tensor, self.yspace, self.qspace, self.z, x)
            else:
                t = solve_cell_problems(self.tensor, self.yspace, self.z, x)
                self.cache[key] = (t, homogenized_tensor(t))
        return self.cache[key][0]

    def homogenized(self, x) -> HomogenizedTensor:
        self.table(x)
        x = np.zeros(self.d) if x is None else np.asarray(x, float)
        key = (None if self.z is None else self.z.tobytes(), x.tobytes())
        return self.cache[key][1]

    def _grid_weights(self, xs: np.ndarray):
        n = self.x_grid
        t = np.clip(xs * n, 0, n - 1e-12)
        i0 = np.floor(t).astype(int)
        f = t - i0
        corners = []
        for bits in np.ndindex(*([2] * self.d)):
            b = np.array(bits)
            w = np.prod(np.where(b, f, 1 - f), axis=1)
            corners.append((i0 + b, w))
        return corners

    def _combine(self, xs: np.ndarray, per_table):
        """sum over grid corners of weight * per_table(table, mask-rows)."""
        if not self.x_dependent:
            return per_table(self.table(None), np.arange(len(xs)))
        out = None
        for idx, w in self._grid_weights(xs):
            keys, inv = np.unique(idx, axis=0, return_inverse=True)
            inv = inv.ravel()
            for kk, key in enumerate(keys):
                rows = np.flatnonzero(inv == kk)
                val = per_table(self.table(key / self.x_grid), rows) * w[rows].reshape(-1, *([1] * 2))
                if out is None:
                    out = np.zeros((len(xs),) + val.shape[1:])
                out[rows] += val
        return out

    def solutions_at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """N_I(x, y) at paired points: (np, k, d)."""
        return self._combine(xs, lambda t, rows: t.values(ys[rows]))

    def pressures_at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """p_I(x, y) at paired points: (np, k)."""
        return self._combine(xs, lambda t, rows: t.pressure_values(ys[rows])[:, :, None])[:, :, 0]

    def a0_at(self, xs: np.ndarray) -> np.ndarray:
        """Homogenized Mandel moduli at macro points (np, k, k)."""
        if not self.x_dependent:
            m = self.homogenized(None).mandel
            return np.broadcast_to(m, (len(xs),) + m.shape)
        return self._combine(xs, lambda t, rows: np.broadcast_to(
            self.homogenized(t.x).mandel, (len(rows),) + self.homogenized(t.x).mandel.shape))


# ---------------------------------------------------------------------------
# homogenized solves

def _point_moduli(a0, d):
    if isinstance(a0, HomogenizedTensor):
        a0 = a0.a0
    if isinstance(a0, CellTableField):
        return a0.a0_at
    return as_point_tensor(a0, d)


def solve_homogenized(space: FeSpace, a0, forcing, tol: float = 1e-10) -> FeField:
    """Elastic solve with homogenized moduli a0 (constant or per point)."""
    d = space.mesh.d
    k = assemble_elastic(space, _point_moduli(a0, d))
    f = assemble_load(space, forcing)
    free = space.free_dofs
    u = solve_spd(k[free][:, free], f[free], tol)
    return FeField(space, space.expand(u))


def solve_homogenized_mixed(space: FeSpace, a0, forcing, tol: float = 1e-9) -> tuple[FeField, FeField]:
    """Locking-free homogenized solve for stiff bulk response.

    a0 = B + lam* v v^T is split pointwise; the bulk part is carried by a
    P0 pressure p = lam* div u.  Needs a P2 vector space."""
    d = space.mesh.d
    fn = _point_moduli(a0, d)
    v = _trace_vector(d)

    def split(x):
        m = np.asarray(fn(x), float)
        lam = 1.0 / np.einsum("i,nij,j->n", v, np.linalg.inv(m), v)
        return m - lam[:, None, None] * np.outer(v, v), lam
    qspace = FeSpace(space.mesh, 0, "scalar")
    kmat = assemble_elastic(space, lambda x: split(x)[0])
    bmat = assemble_div_coupling(space, qspace)
    minv = assemble_weighted_mass(qspace, lambda x: 1.0 / split(x)[1], degree=2)
    f = assemble_load(space, forcing)
    free = space.free_dofs
    u, p = solve_block([[kmat[free][:, free], bmat[:, free].T], [bmat[:, free], -minv]],
                       [f[free], np.zeros(qspace.n_dofs)], tol)
    return FeField(space, space.expand(u)), FeField(qspace, p)


# ---------------------------------------------------------------------------
# correctors

class CorrectorField:
    """x -> u0(x) + eps sum_I N_I(x, {x/eps}) S_I(x) with S the Mandel strain
    of u0, recovered to a continuous field by nodal averaging (or taken
    cellwise when ``strain='exact'``)."""

    def __init__(self, u0: FeField, cells: CellTableField, eps: float, strain: str = "recovered"):
        self.u0 = u0
        self.cells = cells
        self.eps = float(eps)
        self.strain_mode = strain
        self._strain = recovered_strain(u0) if strain == "recovered" else None

    def strain(self, x: np.ndarray) -> np.ndarray:
        if self._strain is not None:
            return self._strain.evaluate(x)
        return self.u0.strain(x)

    def first_order(self, x: np.ndarray) -> np.ndarray:
        """u1(x, x/eps) = sum_I N_I S_I."""
        y = np.mod(x / self.eps, 1.0)
        n = self.cells.solutions_at(x, y)
        return np.einsum("pid,pi->pd", n, self.strain(x))

    def evaluate(self, x: np.ndarray, chunk: int = 400_000) -> np.ndarray:
        out = np.empty((len(x), self.u0.space.ncomp))
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk]
            out[s:s + chunk] = self.u0.evaluate(xs) + self.eps * self.first_order(xs)
        return out

    def nodal_values(self, space: FeSpace) -> np.ndarray:
        """Interpolant on a Lagrange space, boundary values kept (no cutoff)."""
        return self.evaluate(space.node_coords).ravel()


def two_scale_corrector(u0: FeField, cells: CellTableField, eps: float,
                        strain: str = "recovered") -> CorrectorField:
    return CorrectorField(u0, cells, eps, strain)


class PressureCorrector:
    """x -> sum_I p_I(x, {x/eps}) S_I(x)."""

    def __init__(self, corrector: CorrectorField):
        self.c = corrector

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        y = np.mod(x / self.c.eps, 1.0)
        return np.einsum("pi,pi->p", self.c.cells.pressures_at(x, y), self.c.strain(x))


def incompressible_corrector(u0: FeField, cells: CellTableField, eps: float,
                             strain: str = "recovered") -> tuple[CorrectorField, PressureCorrector]:
    if not cells.incompressible:
        raise ValueError("incompressible corrector needs a mixed cell table field")
    c = CorrectorField(u0, cells, eps, strain)
    return c, PressureCorrector(c)


# ---------------------------------------------------------------------------
# homogenization rate studies

def two_slot_tensor(tensor, d: int, z=None):
    """(x, y) -> Mandel matrices for any supported tensor description."""
    if isinstance(tensor, IsotropicLameField):
        tensor = tensor.tensor_at(np.zeros(0) if z is None else z)
    if isinstance(tensor, AffineElasticTensor):
        tensor = tensor.at(np.zeros(0) if z is None else z)
    if isinstance(tensor, TensorField):
        return tensor
    fn = as_point_tensor(tensor, d)
    return lambda x, y: fn(y)


def solve_fine(tensor, eps: float, n: int, forcing, order: int = 1, z=None, d: int = 2,
               dirichlet="all", tol: float = 1e-9) -> FeField:
    """Fine-scale solve with coefficient a(z; x, x/eps) on a uniform mesh."""
    space = FeSpace(Mesh(n, d), order, "vector", dirichlet)
    tf = two_slot_tensor(tensor, d, z)
    kmat = assemble_elastic(space, lambda x: tf(x, np.mod(x / eps, 1.0)))
    f = assemble_load(space, forcing)
    free = space.free_dofs
    near = rigid_body_modes(space)[free]
    u = solve_spd(kmat[free][:, free].tocsr(), f[free], tol, near_null=near)
    return FeField(space, space.expand(u))


def homogenization_rate_study(tensor, forcing, eps_list, fine_factor: int = 16, fine_order: int = 1,
                              macro_n: int = 64, macro_order: int = 2, y_n: int = 32, y_order: int = 2,
                              z=None, d: int = 2, max_fine_dofs: int = 2_200_000) -> ConvergenceReport:
    """H1 distance between fine-scale solutions and the interpolated
    first-order corrector u0 + eps N(x, x/eps) e(u0), over eps.

    Clamped boundary; the corrector keeps its boundary values, so the
    boundary layer limits the rate to about eps^(1/2)."""
    t0 = time.perf_counter()
    yspace = FeSpace(Mesh(y_n, d), y_order, "vector", periodic=True)
    cells = CellTableField(tensor if not isinstance(tensor, IsotropicLameField) else tensor.to_affine(),
                           yspace, z)
    macro = FeSpace(Mesh(macro_n, d), macro_order, "vector", "all")
    u0 = solve_homogenized(macro, cells, forcing)
    rep = ConvergenceReport(["eps", "h_fine", "error_H1", "relative_H1", "slope"],
                            metadata={"macro_n": macro_n, "macro_order": macro_order, "y_n": y_n,
                                      "y_order": y_order, "fine_factor": fine_factor, "strain": "recovered"})
    errs = []
    for eps in eps_list:
        n = int(round(fine_factor / eps))
        fine_space = FeSpace(Mesh(n, d), fine_order, "vector", "all")
        if fine_space.n_dofs > max_fine_dofs:
            raise BudgetExceeded(f"fine space at eps={eps} has {fine_space.n_dofs} dofs > {max_fine_dofs}")
        uh = solve_fine(tensor, float(eps), n, forcing, fine_order, z, d)
        corr = CorrectorField(u0, cells, float(eps))
        diff = uh.values - corr.nodal_values(uh.space)
        h1 = h1_matrix(uh.space)
        err = float(np.sqrt(diff @ (h1 @ diff)))
        ref = float(np.sqrt(uh.values @ (h1 @ uh.values)))
        errs.append(err)
        rep.add(eps=float(eps), h_fine=1.0 / n, error_H1=err, relative_H1=err / ref, slope=float("nan"))
        log.info("eps=%g n=%d error %.4e", eps, n, err)
    slope = fit_rate(eps_list, errs)[0] if len(errs) >= 3 else float("nan")
    rep.set_column("slope", slope)
    rep.metadata.update(slope=slope, wall_time=time.perf_counter() - t0, a0=cells.homogenized(None).mandel.tolist())
    return rep


def solve_fine_incompressible(lame: IsotropicLameField, eps: float, n: int, forcing, z=None,
                              dirichlet="all", tol: float = 1e-9) -> tuple[FeField, FeField]:
    """Fine-scale P2/P0 penalty solve: 2 mu eps(u):eps(v) + p div v and
    (div u, q) = (p / lam, q) with mu, lam evaluated at (z; x, x/eps)."""
    d = lame.d
    zv = np.zeros(0) if z is None else np.asarray(z, float)
    space = FeSpace(Mesh(n, d), 2, "vector", dirichlet)
    qspace = FeSpace(space.mesh, 0, "scalar")
    k = nsym(d)
    y_of = lambda x: np.mod(x / eps, 1.0)
    kmat = assemble_elastic(space, lambda x: 2.0 * lame.mu(zv, x, y_of(x))[:, None, None] * np.eye(k))
    bmat = assemble_div_coupling(space, qspace)
    minv = assemble_weighted_mass(qspace, lambda x: 1.0 / lame.lam(zv, x, y_of(x)), degree=2)
    f = assemble_load(space, forcing)
    free = space.free_dofs
    u, p = solve_block([[kmat[free][:, free], bmat[:, free].T], [bmat[:, free], -minv]],
                       [f[free], np.zeros(qspace.n_dofs)], tol)
    return FeField(space, space.expand(u)), FeField(qspace, p)


def incompressible_corrector_error(lame: IsotropicLameField, forcing, eps: float, fine_factor: int = 8,
                                   macro_n: int = 32, y_n: int = 16, z=None, dirichlet="all") -> dict:
    """H1 distance between the fine nearly incompressible solution and the
    interpolated corrector u0 + eps N(x, x/eps) e(u0) built from the mixed
    cell problems and a locking-free homogenized solve."""
    d = lame.d
    yspace = FeSpace(Mesh(y_n, d), 2, "vector", periodic=True)
    cells = CellTableField(lame, yspace, z, incompressible=True)
    macro = FeSpace(Mesh(macro_n, d), 2, "vector", dirichlet)
    u0, _ = solve_homogenized_mixed(macro, cells, forcing)
    n = int(round(fine_factor / eps))
    uh, ph = solve_fine_incompressible(lame, eps, n, forcing, z, dirichlet)
    corr, _ = incompressible_corrector(u0, cells, eps)
    diff = uh.values - corr.nodal_values(uh.space)
    h1 = h1_matrix(uh.space)
    err = float(np.sqrt(diff @ (h1 @ diff)))
    ref = float(np.sqrt(uh.values @ (h1 @ uh.values)))
    return {"eps": float(eps), "h_fine": 1.0 / n, "error_H1": err, "relative_H1": err / ref,
            "lambda_min": lame.lambdabar_min}


def lambda_robustness_study(lame_for, lambda_list, forcing, eps: float, **kw) -> ConvergenceReport:
    """Incompressible corrector error at fixed eps for a family of Lame
    fields ``lame_for(lambda_min)`` sharing the ratio lambda_max / lambda_min."""
    rep = ConvergenceReport(["lambda_min", "eps", "error_H1", "relative_H1"])
    for lm in lambda_list:
        r = incompressible_corrector_error(lame_for(float(lm)), forcing, eps, **kw)
        rep.add(lambda_min=float(lm), eps=r["eps"], error_H1=r["error_H1"], relative_H1=r["relative_H1"])
    e = rep.column("error_H1")
    rep.metadata["spread"] = float(e.max() / e.min())
    return rep
