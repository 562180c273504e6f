"""Parametric displacement solves, the two-scale homogenized problem, gpc
projection and the coupled stochastic Galerkin system."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem_core import (FeField, FeSpace, Mesh, SolverBreakdown, assemble_elastic, assemble_load,
                       batches, h1_matrix, rigid_body_modes, solve_block, solve_spd, start_vector, strain_matrix)
from .gpc import (BoundSequence, GpcExpansion, IndexSet, MultiIndex, best_n_indices, bound_tail,
                  chaos_matrix, coupling_matrices, tensor_rule)
from .homogenization import cell_operators, cell_tensor, homogenize
from .report import ConvergenceReport, fit_rate
from .tensor_fields import (AffineElasticTensor, IsotropicLameField, TensorField, as_zvec, nsym,
                            validate_uniform_ellipticity)

log = logging.getLogger(__name__)


class ResolutionWarning(UserWarning):
    pass


class QuadratureTooLow(UserWarning):
    pass


@dataclass
class DisplacementProblem:
    """Clamped (by default) elasticity on the unit square or interval.

    ``forcing`` is a constant vector or a callable points -> (n, d).  With a
    y-dependent tensor the coefficient is a(z; x, x/eps)."""
    tensor: AffineElasticTensor
    forcing: object
    n: int = 16
    order: int = 1
    dirichlet: str = "all"
    eps: float | None = None
    y_n: int = 16
    y_order: int = 1
    n_scales: int = 1
    midpoint: bool = False
    validate: bool = True
    _models: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if isinstance(self.tensor, IsotropicLameField):
            self.tensor = self.tensor.to_affine()
        if self.n_scales != 1:
            raise NotImplementedError("n >= 2 scales go through reiterated_homogenize")
        if self.validate:
            self.report = validate_uniform_ellipticity(self.tensor)
        self._space = None

    @property
    def d(self) -> int:
        return self.tensor.d

    @property
    def space(self) -> FeSpace:
        if self._space is None:
            self._space = FeSpace(Mesh(self.n, self.d), self.order, "vector", self.dirichlet)
        return self._space

    @property
    def n_modes(self) -> int:
        return self.tensor.n_modes

    def model(self, eps: float | None = None) -> "DisplacementModel":
        eps = self.eps if eps is None else eps
        key = None if not self.tensor.y_dependent else float(eps)
        if key not in self._models:
            self._models[key] = DisplacementModel(self, eps)
        return self._models[key]

    def yspace(self) -> FeSpace:
        return FeSpace(Mesh(self.y_n, self.d), self.y_order, "vector", periodic=True)


def _oscillating(field: TensorField, eps: float | None, d: int):
    if not field.y_dependent:
        return lambda x: field(x, np.zeros((len(x), d)))
    if eps is None:
        raise ValueError("the tensor oscillates; a scale eps is required")
    return lambda x: field(x, np.mod(x / eps, 1.0))


class DisplacementModel:
    """Component stiffness matrices K_0 (mean) and K_m (modes) on the free
    dofs, so that K(z) = K_0 + sum z_m K_m, plus the load vector."""

    def __init__(self, problem: DisplacementProblem, eps: float | None):
        self.problem = problem
        self.eps = eps
        sp_ = problem.space
        self.space = sp_
        d = problem.d
        if problem.tensor.y_dependent and eps is not None and sp_.mesh.h > eps / 8 * (1 + 1e-12):
            warnings.warn(f"mesh size {sp_.mesh.h:.3g} does not resolve eps={eps:.3g} (h > eps/8)",
                          ResolutionWarning, stacklevel=3)
        free = sp_.free_dofs
        self.components = []
        for fld in problem.tensor.component_fields():
            k = assemble_elastic(sp_, _oscillating(fld, eps, d), midpoint=problem.midpoint)
            self.components.append(k[free][:, free].tocsr())
        self.load = assemble_load(sp_, problem.forcing)[free]
        self._h1 = None
        self._dense = None

    @property
    def n_free(self) -> int:
        return self.components[0].shape[0]

    @property
    def h1(self) -> sp.csr_matrix:
        if self._h1 is None:
            f = self.space.free_dofs
            self._h1 = h1_matrix(self.space)[f][:, f].tocsr()
        return self._h1

    def matrix(self, z) -> sp.csr_matrix:
        zv = as_zvec(z, self.problem.n_modes)
        k = self.components[0].copy()
        for m, zm in enumerate(zv):
            if zm != 0.0:
                k = k + zm * self.components[m + 1]
        return k

    def solve(self, z, tol: float = 1e-10) -> np.ndarray:
        near = rigid_body_modes(self.space)[self.space.free_dofs] if self.n_free > 250_000 else None
        return solve_spd(self.matrix(z), self.load, tol, near_null=near)

    def solve_many(self, zs: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Free-dof solutions (nz, n_free); batched dense solves for small systems."""
        zs = np.atleast_2d(np.asarray(zs, float))
        n = self.n_free
        if n > 1500:
            return np.array([self.solve(z) for z in zs])
        if self._dense is None:
            self._dense = np.stack([c.toarray() for c in self.components])
        out = np.empty((len(zs), n))
        m = self.problem.n_modes
        for s in range(0, len(zs), chunk):
            zz = np.zeros((len(zs[s:s + chunk]), m))
            zz[:, :zs.shape[1]] = zs[s:s + chunk, :m]
            mats = self._dense[0] + np.einsum("qm,mij->qij", zz, self._dense[1:])
            out[s:s + chunk] = np.linalg.solve(mats, np.broadcast_to(self.load, (len(zz), n))[..., None])[..., 0]
        return out

    def v_norm(self, u: np.ndarray) -> np.ndarray:
        """H^1 norms of free-dof vectors (rows)."""
        u = np.atleast_2d(u)
        return np.sqrt(np.einsum("qi,qi->q", u @ self.h1, u))


def solve_displacement_at_z(problem: DisplacementProblem, z, eps: float | None = None,
                            tol: float = 1e-10) -> FeField:
    model = problem.model(eps)
    return FeField(model.space, model.space.expand(model.solve(z, tol)))


# ---------------------------------------------------------------------------
# two-scale homogenized problem (u0, u1)

@dataclass
class TwoScaleField:
    """u0 on the macro space and u1 at macro quadrature points.

    ``u1[q]`` holds the Y-space coefficients of u1(x_q, .); the macro
    quadrature is the one used to assemble the problem."""
    u0: FeField
    u1: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    yspace: FeSpace
    info: dict = field(default_factory=dict)

    def u1_at(self, q: int) -> FeField:
        return FeField(self.yspace, self.u1[q])


def _macro_quadrature(space: FeSpace, degree: int | None = None):
    """Points, weights, per-point strain matrices (k, L) and dofs (L,)."""
    pts, wts, bms, dofs = [], [], [], []
    for b in batches(space, degree):
        nc, nq = b.w.shape
        pts.append(b.points)
        wts.append(b.w.ravel())
        bms.append(strain_matrix(b.dphi).reshape(nc * nq, nsym(space.mesh.d), -1))
        dofs.append(np.repeat(b.dofs, nq, axis=0))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(bms), np.concatenate(dofs)


class _CellOpsAtPoints:
    """Cell operators frozen at macro points; shared when a is x-independent."""

    def __init__(self, tensor: AffineElasticTensor, z, yspace: FeSpace):
        self.tensor, self.z, self.yspace = tensor, z, yspace
        self.shared = None if tensor.x_dependent else cell_operators(yspace, cell_tensor(tensor, tensor.d, z))
        self.cache = {}

    def __call__(self, x):
        if self.shared is not None:
            return self.shared
        key = np.asarray(x, float).tobytes()
        if key not in self.cache:
            self.cache[key] = cell_operators(self.yspace, cell_tensor(self.tensor, self.tensor.d, self.z, x))
        return self.cache[key]


def solve_two_scale_homogenized_at_z(problem: DisplacementProblem, z, coupled: bool = False,
                                     tol: float = 1e-10) -> TwoScaleField:
    """Find (u0, u1) with b(z; (u0,u1), (v0,v1)) = (f, v0).

    By default u1 is eliminated exactly (cell problems at each macro
    quadrature point); ``coupled=True`` assembles and solves the full
    sparse system instead (small problems)."""
    if coupled:
        return _two_scale_coupled(problem, z, tol)
    space = problem.space
    yspace = problem.yspace()
    ops_at = _CellOpsAtPoints(problem.tensor, z, yspace)
    d = problem.d
    k = nsym(d)
    homog = {}

    def a0(x):
        out = np.empty((len(x), k, k))
        for i, xi in enumerate(x):
            key = xi.tobytes() if ops_at.shared is None else None
            if key not in homog:
                homog[key] = homogenize(cell_tensor(problem.tensor, d, z, xi), yspace)
            out[i] = homog[key].mandel
        return out
    kmat = assemble_elastic(space, a0)
    f = assemble_load(space, problem.forcing)
    free = space.free_dofs
    u0 = space.expand(solve_spd(kmat[free][:, free], f[free], tol))
    pts, wts, bms, dofs = _macro_quadrature(space)
    strains = np.einsum("qkl,ql->qk", bms, u0[dofs])
    u1 = np.empty((len(pts), yspace.n_dofs))
    for q, x in enumerate(pts):
        from .homogenization import solve_cell_problems
        key = ("table", x.tobytes() if ops_at.shared is None else None)
        if key not in homog:
            homog[key] = solve_cell_problems(problem.tensor, yspace, z, x)
        u1[q] = strains[q] @ homog[key].mandel_solutions
    return TwoScaleField(FeField(space, u0), u1, pts, wts, yspace, {"method": "condensed"})


def two_scale_system(problem: DisplacementProblem, z):
    """Sparse coupled system over [u0 free dofs, u1 per quadrature point,
    mean multipliers]; returns (matrix, rhs, layout)."""
    space = problem.space
    yspace = problem.yspace()
    d = problem.d
    ops_at = _CellOpsAtPoints(problem.tensor, z, yspace)
    pts, wts, bms, dofs = _macro_quadrature(space)
    nq, ny, nd = len(pts), yspace.n_dofs, space.n_dofs
    L = bms.shape[2]
    # u0-u0 block: sum_q w_q B_q^T Abar(x_q) B_q
    rows0, cols0, vals0 = [], [], []
    rows1, cols1, vals1 = [], [], []
    k11, c11 = [], []
    for q in range(nq):
        ops = ops_at(pts[q])
        bq = bms[q]
        ke = wts[q] * bq.T @ ops.mean @ bq
        rows0.append(np.repeat(dofs[q], L))
        cols0.append(np.tile(dofs[q], L))
        vals0.append(ke.ravel())
        ce = wts[q] * bq.T @ ops.loads                          # (L, ny)
        rows1.append(np.repeat(dofs[q], ny))
        cols1.append(np.tile(q * ny + np.arange(ny), L))
        vals1.append(ce.ravel())
        k11.append(wts[q] * ops.stiffness)
        c11.append(ops.constraint)
    a00 = sp.csr_matrix((np.concatenate(vals0), (np.concatenate(rows0), np.concatenate(cols0))), shape=(nd, nd))
    a01 = sp.csr_matrix((np.concatenate(vals1), (np.concatenate(rows1), np.concatenate(cols1))),
                        shape=(nd, nq * ny))
    a11 = sp.block_diag(k11, format="csr")
    cc = sp.block_diag(c11, format="csr")
    free = space.free_dofs
    a00, a01 = a00[free][:, free], a01[free]
    mat = sp.bmat([[a00, a01, None], [a01.T, a11, cc.T], [None, cc, None]], format="csr")
    f = assemble_load(space, problem.forcing)[free]
    rhs = np.concatenate([f, np.zeros(nq * ny + cc.shape[0])])
    layout = {"n0": len(free), "n1": nq * ny, "nc": cc.shape[0], "points": pts, "weights": wts,
              "yspace": yspace, "constraint": cc}
    return mat, rhs, layout


def _two_scale_coupled(problem, z, tol):
    mat, rhs, lay = two_scale_system(problem, z)
    n0, n1 = lay["n0"], lay["n1"]
    x = solve_block([[mat]], [rhs], tol)[0]
    space = problem.space
    u0 = space.expand(x[:n0])
    u1 = x[n0:n0 + n1].reshape(len(lay["points"]), -1)
    return TwoScaleField(FeField(space, u0), u1, lay["points"], lay["weights"], lay["yspace"],
                         {"method": "coupled", "matrix": mat, "rhs": rhs, "solution": x})


def two_scale_energy(problem: DisplacementProblem, z, field_: TwoScaleField) -> float:
    """b(z; u, u) evaluated with the cell operators at the stored points."""
    ops_at = _CellOpsAtPoints(problem.tensor, z, field_.yspace)
    pts, wts, bms, dofs = _macro_quadrature(problem.space)
    u0 = field_.u0.values
    total = 0.0
    for q in range(len(pts)):
        ops = ops_at(pts[q])
        s = bms[q] @ u0[dofs[q]]
        v = field_.u1[q]
        total += wts[q] * (s @ ops.mean @ s + 2 * s @ (ops.loads @ v) + v @ (ops.stiffness @ v))
    return float(total)


# ---------------------------------------------------------------------------
# gpc projection and stochastic Galerkin

def project_gpc(problem: DisplacementProblem, index_set: IndexSet, quad_points=None, solver=None,
                eps: float | None = None, n_dims: int | None = None) -> GpcExpansion:
    """u_nu = int u(z) L_nu(z) d rho(z) by tensor Gauss-Legendre quadrature.

    ``quad_points`` is a per-dimension point count (int or sequence); the
    default is max order + 1 per active dimension.  ``solver(zs)`` returns
    free-dof solutions (nz, n) and defaults to the at-z displacement solve."""
    m = index_set.max_dim if n_dims is None else n_dims
    need = index_set.max_order_per_dim(m) + 1
    if quad_points is None:
        npd = need
    else:
        npd = np.broadcast_to(np.asarray(quad_points, int), (m,))
    low = np.flatnonzero(npd < need)
    info = {}
    if len(low):
        msg = f"quadrature with {npd.tolist()} points per dimension is below max order + 1 in dims {(low + 1).tolist()}"
        warnings.warn(msg, QuadratureTooLow, stacklevel=2)
        info["warning"] = msg
    zs, w = tensor_rule(npd)
    model = problem.model(eps)
    sol = model.solve_many(zs) if solver is None else np.asarray(solver(zs))
    lmat = chaos_matrix(index_set, zs)
    coeffs = (lmat * w[:, None]).T @ sol
    info.update(points_per_dim=np.asarray(npd).tolist(), n_solves=len(zs))
    return GpcExpansion(index_set, coeffs, "free", m, info)


def _galerkin_matrix(components, index_set: IndexSet, n_dims: int):
    gm = coupling_matrices(index_set, n_dims)
    a = sp.kron(sp.identity(len(index_set)), components[0], format="csr")
    for g, k in zip(gm, components[1:]):
        if g.nnz:
            a = a + sp.kron(g, k, format="csr")
    return a


def _condition_estimate(a: sp.spmatrix, limit: int = 60_000) -> float | None:
    n = a.shape[0]
    try:
        if n <= 2000:
            ev = np.linalg.eigvalsh(a.toarray())
            return float(ev[-1] / ev[0])
        if n > limit:
            return None
        hi = spla.eigsh(a, k=1, which="LA", v0=start_vector(n), return_eigenvectors=False)[0]
        lo = spla.eigsh(a, k=1, sigma=0.0, which="LM", v0=start_vector(n), return_eigenvectors=False)[0]
        return float(hi / lo)
    except Exception as exc:  # conditioning is informative only
        log.info("condition estimate failed: %s", exc)
        return None


def solve_semidiscrete_galerkin(problem: DisplacementProblem, index_set: IndexSet, eps: float | None = None,
                                tol: float = 1e-10, condition: bool = True) -> GpcExpansion:
    """Coupled system kron(I, K_0) + sum_m kron(G_m, K_m) over Lambda."""
    if len(index_set) == 0:
        raise ValueError("index set is empty")
    model = problem.model(eps)
    m = problem.n_modes
    if index_set.max_dim > m:
        raise ValueError(f"index set uses dimension {index_set.max_dim} beyond the {m} modes")
    a = _galerkin_matrix(model.components, index_set, m)
    n = model.n_free
    rhs = np.zeros(len(index_set) * n)
    zero = MultiIndex.zero()
    if zero in index_set:
        p = index_set.position(zero)
        rhs[p * n:(p + 1) * n] = model.load
    u = solve_spd(a, rhs, tol)
    info = {"matrix_size": a.shape[0], "asymmetry": float(abs(a - a.T).max()) if a.nnz else 0.0}
    if condition:
        info["condition"] = _condition_estimate(a)
    return GpcExpansion(index_set, u.reshape(len(index_set), n), "free", m, info)


def galerkin_orthogonality_residual(matrix_at, load, expansion: GpcExpansion, points_per_dim) -> float:
    """max_nu || int L_nu(z) [F - K(z) u_Lambda(z)] d rho || / ||F||.

    Exact (up to rounding) when the rule integrates the polynomial degree of
    the integrand; for non-affine K it reproduces the rule used to build the
    Galerkin blocks."""
    zs, w = tensor_rule(np.broadcast_to(np.asarray(points_per_dim, int), (expansion.n_dims,)))
    lmat = chaos_matrix(expansion.index_set, zs)
    r = np.zeros_like(expansion.coeffs)
    for q, z in enumerate(zs):
        res = load - matrix_at(z) @ (lmat[q] @ expansion.coeffs)
        r += w[q] * np.outer(lmat[q], res)
    return float(np.abs(r).max() / np.abs(load).max())


def b_energy_error(model: DisplacementModel, expansion: GpcExpansion, zs, w, reference: np.ndarray) -> float:
    """sqrt(sum_q w_q (u - u_Lambda)^T K(z_q) (u - u_Lambda))."""
    approx = chaos_matrix(expansion.index_set, zs[:, :max(expansion.index_set.max_dim, 0)]
                          if expansion.index_set.max_dim else zs[:, :0]) @ expansion.coeffs
    err = reference - approx
    tot = 0.0
    for q, z in enumerate(zs):
        tot += w[q] * err[q] @ (model.matrix(z) @ err[q])
    return float(np.sqrt(tot))


@dataclass
class QuadratureReference:
    """Per-z solutions on a tensor Gauss rule, used as the error reference."""
    zs: np.ndarray
    weights: np.ndarray
    solutions: np.ndarray

    @classmethod
    def build(cls, model: DisplacementModel, n_dims: int, points_per_dim: int):
        zs, w = tensor_rule([points_per_dim] * n_dims)
        return cls(zs, w, model.solve_many(zs))

    def error(self, model: DisplacementModel, expansion: GpcExpansion) -> float:
        """L2(U; V) error of the expansion, V = H^1 on the free dofs."""
        md = expansion.index_set.max_dim
        approx = chaos_matrix(expansion.index_set, self.zs[:, :md]) @ expansion.coeffs
        e = model.v_norm(self.solutions - approx)
        return float(np.sqrt(np.sum(self.weights * e ** 2)))


def galerkin_error_study(problem: DisplacementProblem, bounds: BoundSequence, n_list, reference_points: int = 5,
                         eps: float | None = None) -> ConvergenceReport:
    """Best-N sets from the bound sequence, Galerkin solves, and the
    L2(U; V) error against a tensor-quadrature reference."""
    model = problem.model(eps)
    m = problem.n_modes
    ref = QuadratureReference.build(model, m, reference_points)
    rep = ConvergenceReport(["N", "error", "bound_tail", "fitted_slope"],
                            metadata={"reference_points": reference_points, "n_dims": m,
                                      "n_reference_solves": len(ref.zs)})
    errs = []
    for n in n_list:
        lam = best_n_indices(bounds, int(n))
        sol = solve_semidiscrete_galerkin(problem, lam, eps, condition=False)
        err = ref.error(model, sol)
        errs.append(err)
        rep.add(N=int(n), error=err, bound_tail=bound_tail(bounds, lam), fitted_slope=float("nan"))
    slope = fit_rate(np.asarray(n_list, float), np.asarray(errs))[0] if len(errs) > 2 and min(errs) > 0 else float("nan")
    rep.set_column("fitted_slope", slope)
    rep.metadata["slope"] = slope
    return rep


# ---------------------------------------------------------------------------
# two-scale Galerkin over Lambda (x-independent microstructure)

def _mandel_pair_matrices(space: FeSpace) -> list:
    """E_IJ[a, b] = int eps_I(phi_a) eps_J(phi_b) on the free dofs."""
    k = nsym(space.mesh.d)
    free = space.free_dofs
    out = {}
    for i in range(k):
        for j in range(k):
            e = np.zeros((k, k))
            e[i, j] = 1.0
            out[i, j] = assemble_elastic(space, lambda x, e=e: np.broadcast_to(e, (len(x), k, k)))[free][:, free]
    return out


def parametric_cell_operators(tensor: AffineElasticTensor, yspace: FeSpace, index_set: IndexSet):
    """Galerkin-in-z cell problem over Lambda and its condensed moduli.

    Returns (moduli, solutions) with moduli of shape (|Lambda| k, |Lambda| k)
    indexed [(nu, I), (mu, J)] and solutions (|Lambda| k columns) on the
    stacked Y-space unknowns."""
    if tensor.x_dependent:
        raise NotImplementedError("parametric cell operators need x-independent microstructure")
    d = tensor.d
    comps = [cell_operators(yspace, cell_tensor(f, d))
             for f in tensor.component_fields()]
    n_lam = len(index_set)
    gms = [sp.identity(n_lam, format="csr")] + coupling_matrices(index_set, tensor.n_modes)
    kk = sum(sp.kron(g, c.stiffness, format="csr") for g, c in zip(gms, comps))
    gg = sum(sp.kron(g, sp.csr_matrix(c.loads), format="csr") for g, c in zip(gms, comps))
    aa = sum(np.kron(g.toarray(), c.mean) for g, c in zip(gms, comps))
    cc = sp.kron(sp.identity(n_lam), comps[0].constraint, format="csr")
    mat = sp.bmat([[kk, cc.T], [cc, None]], format="csc")
    lu = spla.splu(mat)
    rhs = np.vstack([-gg.T.toarray(), np.zeros((cc.shape[0], gg.shape[0]))])
    sol = lu.solve(rhs)
    res = np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-9:
        raise SolverBreakdown(f"parametric cell residual {res:.2e}")
    nsol = sol[:kk.shape[0]]
    moduli = aa + gg @ nsol
    return 0.5 * (moduli + moduli.T), nsol


def solve_two_scale_galerkin(problem: DisplacementProblem, index_set: IndexSet, tol: float = 1e-10):
    """Galerkin approximation over Lambda of the (u0, u1) two-scale problem.

    u1 is eliminated exactly through the parametric cell problem; returns the
    u0 expansion (free dofs) with the cell solutions in ``info``."""
    space = problem.space
    yspace = problem.yspace()
    k = nsym(problem.d)
    n_lam = len(index_set)
    moduli, nsol = parametric_cell_operators(problem.tensor, yspace, index_set)
    mod4 = moduli.reshape(n_lam, k, n_lam, k)
    pairs = _mandel_pair_matrices(space)
    a = None
    for i in range(k):
        for j in range(k):
            blk = sp.kron(sp.csr_matrix(mod4[:, i, :, j]), pairs[i, j], format="csr")
            a = blk if a is None else a + blk
    n = len(space.free_dofs)
    f = assemble_load(space, problem.forcing)[space.free_dofs]
    rhs = np.zeros(n_lam * n)
    if MultiIndex.zero() in index_set:
        p = index_set.position(MultiIndex.zero())
        rhs[p * n:(p + 1) * n] = f
    u = solve_spd(a, rhs, tol)
    info = {"moduli": moduli, "cell_solutions": nsol, "yspace": yspace}
    return GpcExpansion(index_set, u.reshape(n_lam, n), "free", problem.n_modes, info)


def solve_homogenized_galerkin(problem: DisplacementProblem, index_set: IndexSet, points_per_dim: int | None = None,
                               tol: float = 1e-10) -> GpcExpansion:
    """Galerkin over Lambda for the single-scale homogenized problem.

    a0(z) is not affine in z, so the parametric blocks are integrated with a
    tensor Gauss rule: sum_q w_q L(z_q) L(z_q)^T (x) K0(z_q)."""
    if problem.tensor.x_dependent:
        raise NotImplementedError("homogenized Galerkin assumes x-independent microstructure")
    m = problem.n_modes
    npd = index_set.max_order_per_dim(m) + 2 if points_per_dim is None else np.full(m, points_per_dim)
    zs, w = tensor_rule(npd)
    yspace = problem.yspace()
    k = nsym(problem.d)
    a0s = np.array([homogenize(problem.tensor, yspace, z).mandel for z in zs])
    lmat = chaos_matrix(index_set, zs)
    pairs = _mandel_pair_matrices(problem.space)
    a = None
    for i in range(k):
        for j in range(k):
            g = np.einsum("q,qa,qb->ab", w * a0s[:, i, j], lmat, lmat)
            blk = sp.kron(sp.csr_matrix(g), pairs[i, j], format="csr")
            a = blk if a is None else a + blk
    space = problem.space
    n = len(space.free_dofs)
    f = assemble_load(space, problem.forcing)[space.free_dofs]
    rhs = np.zeros(len(index_set) * n)
    if MultiIndex.zero() in index_set:
        p = index_set.position(MultiIndex.zero())
        rhs[p * n:(p + 1) * n] = f
    u = solve_spd(a, rhs, tol)
    info = {"points_per_dim": np.asarray(npd).tolist(), "a0_at_nodes": a0s, "zs": zs, "weights": w}
    return GpcExpansion(index_set, u.reshape(len(index_set), n), "free", m, info)
