"""Mixed formulations: Hellinger-Reissner (stress/displacement) and the
penalty (displacement/pressure) form for nearly incompressible material,
at fixed z and as coupled Galerkin systems over an index set."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem_core import (EigSolverFailure, FeField, FeSpace, Mesh, assemble_div_coupling, assemble_elastic,
                       assemble_load, assemble_stress_strain, assemble_weighted_mass, estimate_inf_sup,
                       h1_matrix, korn_constant, solve_block, start_vector, strain_bound_constant)
from .gpc import GpcExpansion, IndexSet, MultiIndex, chaos_matrix, coupling_matrices, tensor_rule
from .report import ConvergenceReport, fit_rate
from .solvers_displacement import DisplacementProblem, _oscillating
from .tensor_fields import (IsotropicLameField, as_zvec, batched_inverse, kappa_from_ratio, nsym)

log = logging.getLogger(__name__)


class InfSupFailure(RuntimeError):
    pass


class AlphaStrongViolated(ValueError):
    pass


class FullDirichletRejected(ValueError):
    pass


class StabilityWarning(UserWarning):
    pass


def _quad_points(index_set: IndexSet, n_dims: int, extra: int = 2, points=None) -> np.ndarray:
    if points is not None:
        return np.broadcast_to(np.asarray(points, int), (n_dims,)).copy()
    return index_set.max_order_per_dim(n_dims) + extra


def _rhs_at_zero(index_set: IndexSet, block: np.ndarray) -> np.ndarray:
    out = np.zeros(len(index_set) * len(block))
    zero = MultiIndex.zero()
    if zero in index_set:
        p = index_set.position(zero)
        out[p * len(block):(p + 1) * len(block)] = block
    return out


def _cell_block_matrix(blocks: np.ndarray) -> sp.csr_matrix:
    """Block-diagonal sparse matrix from per-cell (k, k) blocks."""
    n = blocks.shape[0] * blocks.shape[1]
    return sp.bsr_matrix((blocks, np.arange(len(blocks)), np.arange(len(blocks) + 1)), shape=(n, n)).tocsr()


# ---------------------------------------------------------------------------
# Hellinger-Reissner

@dataclass
class HrSolution:
    sigma: FeField
    u: FeField
    form: str
    info: dict = field(default_factory=dict)


class HrModel:
    """P0 symmetric stresses with Lagrange displacements.

    With ``midpoint`` the moduli are frozen at cell centroids, so a eps(V_h)
    lies in the stress space and b1, b2 and the displacement form coincide."""

    def __init__(self, problem: DisplacementProblem, eps: float | None = None, midpoint: bool = True):
        self.problem = problem
        self.midpoint = midpoint
        self.eps = problem.eps if eps is None else eps
        self.vspace = problem.space
        self.sspace = FeSpace(self.vspace.mesh, 0, "sym")
        d = problem.d
        self.k = nsym(d)
        free = self.vspace.free_dofs
        self.free = free
        self.coupling = assemble_stress_strain(self.sspace, self.vspace)[:, free].tocsr()
        self.stress_mass = assemble_weighted_mass(self.sspace, 1.0)
        self.fields = [_oscillating(f, self.eps, d) for f in problem.tensor.component_fields()]
        self.load = assemble_load(self.vspace, problem.forcing)[free]
        mesh = self.vspace.mesh
        self.volumes = mesh.cell_volume
        if midpoint:
            cen = mesh.centroids()
            self.cell_moduli = np.stack([np.asarray(f(cen), float) for f in self.fields])   # (M+1, nc, k, k)
        self._coupling_a = None

    @property
    def n_modes(self) -> int:
        return self.problem.n_modes

    def tensor_points(self, z):
        zv = as_zvec(z, self.n_modes)

        def fn(x):
            out = np.array(self.fields[0](x), dtype=float)
            for m, zm in enumerate(zv):
                if zm != 0.0:
                    out = out + zm * self.fields[m + 1](x)
            return out
        return fn

    def cell_tensor(self, z) -> np.ndarray:
        zv = as_zvec(z, self.n_modes)
        zz = np.zeros(self.n_modes)
        zz[:len(zv)] = zv
        return self.cell_moduli[0] + np.einsum("m,mcij->cij", zz, self.cell_moduli[1:])

    def compliance_mass(self, z) -> sp.csr_matrix:
        """(a(z)^{-1} sigma, tau)."""
        if self.midpoint:
            inv = batched_inverse(self.cell_tensor(z))
            return _cell_block_matrix(inv * self.volumes[:, None, None])
        fn = self.tensor_points(z)
        return assemble_weighted_mass(self.sspace, lambda x: batched_inverse(fn(x)))

    def coupling_with_moduli(self) -> list:
        """[(tau, a_c eps(v))] for the mean and each mode (free v dofs)."""
        if self._coupling_a is None:
            self._coupling_a = [assemble_stress_strain(self.sspace, self.vspace, f, midpoint=self.midpoint)
                                [:, self.free].tocsr() for f in self.fields]
        return self._coupling_a

    def system(self, z, form: str):
        ns = self.sspace.n_dofs
        if form == "b1":
            top = self.compliance_mass(z)
            upper = -self.coupling
        elif form == "b2":
            zv = as_zvec(z, self.n_modes)
            ca = self.coupling_with_moduli()
            c = ca[0]
            for m, zm in enumerate(zv):
                if zm != 0.0:
                    c = c + zm * ca[m + 1]
            top = self.stress_mass
            upper = -c
        else:
            raise ValueError(f"unknown HR form {form!r}")
        mat = sp.bmat([[top, upper], [-self.coupling.T, None]], format="csr")
        rhs = np.concatenate([np.zeros(ns), -self.load])
        return mat, rhs


def solve_hr_at_z(problem: DisplacementProblem, z, form: str = "b1", eps: float | None = None,
                  midpoint: bool = True, tol: float = 1e-10, check_infsup: bool = False,
                  model: HrModel | None = None) -> HrSolution:
    model = HrModel(problem, eps, midpoint) if model is None else model
    if check_infsup:
        c = estimate_inf_sup(model.coupling.T, model.stress_mass, h1_matrix(model.vspace)[model.free][:, model.free])
        if c < 1e-8:
            raise InfSupFailure(f"stress/strain coupling inf-sup estimate {c:.2e}")
    mat, rhs = model.system(z, form)
    ns = model.sspace.n_dofs
    sig, u = solve_block([[mat[:ns, :ns], mat[:ns, ns:]], [mat[ns:, :ns], None]],
                         [rhs[:ns], rhs[ns:]], tol)
    return HrSolution(FeField(model.sspace, sig), FeField(model.vspace, model.vspace.expand(u)), form,
                      {"midpoint": midpoint})


def stress_consistency(model: HrModel, sol: HrSolution, z) -> float:
    """L2 norm of sigma - a eps(u) (cellwise, P0 stress, midpoint moduli)."""
    if not model.midpoint:
        raise ValueError("exact consistency needs midpoint moduli")
    mesh = model.vspace.mesh
    cen = mesh.centroids()
    eps_u = sol.u.strain(cen)
    s = sol.sigma.values.reshape(-1, model.k)
    diff = s - np.einsum("cij,cj->ci", model.cell_tensor(z), eps_u)
    return float(np.sqrt(np.sum(model.volumes[:, None] * diff ** 2)))


def alpha_strong_ratio(problem: DisplacementProblem) -> float:
    """sum beta_m (alpha0 + beta0) / alpha0^2; the strong condition needs < 1."""
    t = problem.tensor
    return t.beta_sum * (t.alpha0 + t.beta0) / t.alpha0 ** 2


def check_alpha_strong(problem: DisplacementProblem, kappa_tilde: float | None = None) -> float:
    """Returns the smallest admissible kappa~; raises when none exists or the
    supplied kappa~ is too small."""
    t = problem.tensor
    r = alpha_strong_ratio(problem)
    if r >= 1.0:
        raise AlphaStrongViolated(
            f"sum beta_m = {t.beta_sum:.4g} >= alpha0^2/(alpha0+beta0) = {t.alpha0 ** 2 / (t.alpha0 + t.beta0):.4g}")
    k = kappa_from_ratio(r)
    if kappa_tilde is not None and k > kappa_tilde * (1 + 1e-12):
        raise AlphaStrongViolated(f"condition needs kappa~ >= {k:.4g}, got {kappa_tilde:.4g}")
    return k


def _hr_split(expansion_coeffs, ns, index_set, n_modes, vspace, sspace, info):
    nl = len(index_set)
    x = expansion_coeffs.reshape(nl, -1)
    sig = GpcExpansion(index_set, x[:, :ns], "stress", n_modes, info)
    u = GpcExpansion(index_set, x[:, ns:], "free", n_modes, info)
    return sig, u


def solve_hr_galerkin(problem: DisplacementProblem, index_set: IndexSet, form: str = "b1", eps: float | None = None,
                      midpoint: bool = True, points_per_dim=None, kappa_tilde: float | None = None,
                      tol: float = 1e-9, model: HrModel | None = None):
    """Coupled HR Galerkin system over Lambda; returns (sigma, u) expansions.

    Unknowns are ordered per index: [sigma_nu, u_nu].  b1's compliance block
    is not affine in z and is integrated with a tensor Gauss rule; b2 is
    affine and uses the Legendre coupling matrices."""
    if len(index_set) == 0:
        raise ValueError("index set is empty")
    model = HrModel(problem, eps, midpoint) if model is None else model
    m = problem.n_modes
    nl = len(index_set)
    ns, nv = model.sspace.n_dofs, len(model.free)
    info = {"form": form}
    eye = sp.identity(nl, format="csr")
    if form == "b1":
        npd = _quad_points(index_set, m, 2, points_per_dim)
        zs, w = tensor_rule(npd)
        lmat = chaos_matrix(index_set, zs)
        top = None
        for q, z in enumerate(zs):
            blk = sp.kron(sp.csr_matrix(w[q] * np.outer(lmat[q], lmat[q])), model.compliance_mass(z), format="csr")
            top = blk if top is None else top + blk
        upper = -sp.kron(eye, model.coupling, format="csr")
        info["points_per_dim"] = npd.tolist()
    elif form == "b2":
        info["kappa_tilde"] = check_alpha_strong(problem, kappa_tilde)
        gms = [eye] + coupling_matrices(index_set, m)
        top = sp.kron(eye, model.stress_mass, format="csr")
        upper = -sum(sp.kron(g, c, format="csr") for g, c in zip(gms, model.coupling_with_moduli()))
    else:
        raise ValueError(f"unknown HR form {form!r}")
    lower = -sp.kron(eye, model.coupling.T, format="csr")
    rhs_u = _rhs_at_zero(index_set, -model.load)
    sig, u = solve_block([[top, upper], [lower, None]], [np.zeros(nl * ns), rhs_u], tol)
    info["matrix_size"] = nl * (ns + nv)
    stacked = np.hstack([sig.reshape(nl, ns), u.reshape(nl, nv)])
    info["stacked"] = GpcExpansion(index_set, stacked, "stress+free", m)
    return (GpcExpansion(index_set, sig.reshape(nl, ns), "stress", m, info),
            GpcExpansion(index_set, u.reshape(nl, nv), "free", m, info))


# ---------------------------------------------------------------------------
# penalty form

@dataclass
class PenaltyProblem:
    """Isotropic nearly incompressible problem with P2 displacement and P0
    pressure.  Dirichlet data only on part of the boundary."""
    lame: IsotropicLameField
    forcing: object
    n: int = 8
    dirichlet: str = "left"
    eps: float | None = None
    kappa0: float | None = None

    def __post_init__(self):
        d = self.lame.d
        sides = {"all": 2 * d}.get(self.dirichlet, len(self.dirichlet.split("+")))
        if self.dirichlet == "all" or sides >= 2 * d:
            raise FullDirichletRejected("the penalty form needs a traction (non-Dirichlet) boundary part")
        if self.kappa0 is not None and self.lame.kappa > self.kappa0 * (1 + 1e-12):
            raise ValueError(f"kappa {self.lame.kappa:.4g} exceeds kappa0 {self.kappa0:.4g}")
        self.vspace = FeSpace(Mesh(self.n, d), 2, "vector", self.dirichlet)
        self.qspace = FeSpace(self.vspace.mesh, 0, "scalar")

    @property
    def n_modes(self) -> int:
        return self.lame.n_modes

    @property
    def lambda_ref(self) -> float:
        return self.lame.lambdabar_min


@dataclass
class PenaltySolution:
    u: FeField
    p: FeField
    form: str
    info: dict = field(default_factory=dict)

    def norm(self) -> float:
        """||u||_V + ||p||_H."""
        return self.u.norms().h1 + self.p.norms().l2


def _scalar_field(fn, eps, d, y_dependent):
    if not y_dependent:
        return lambda x: np.asarray(fn(x, np.zeros_like(x)), float)
    return lambda x: np.asarray(fn(x, np.mod(x / eps, 1.0)), float)


class PenaltyModel:
    """Component blocks: K_c = int 2 mu_c eps:eps, B = int div u q, and the
    cellwise (midpoint) lambda components for the pressure rows."""

    def __init__(self, problem: PenaltyProblem, eps: float | None = None):
        self.problem = problem
        lame = problem.lame
        self.eps = problem.eps if eps is None else eps
        d = lame.d
        k = nsym(d)
        vs, qs = problem.vspace, problem.qspace
        self.free = vs.free_dofs
        ydep = lame.y_dependent
        mus = [lame.mubar] + [f for f, _ in lame.mu_modes]
        lams = [lame.lambdabar] + [f for f, _ in lame.lambda_modes]
        self.stiffness = []
        for f in mus:
            g = _scalar_field(f, self.eps, d, ydep)
            kmat = assemble_elastic(vs, lambda x, g=g: 2.0 * g(x)[:, None, None] * np.eye(k))
            self.stiffness.append(kmat[self.free][:, self.free].tocsr())
        self.div = assemble_div_coupling(vs, qs)[:, self.free].tocsr()
        cen = vs.mesh.centroids()
        self.cell_lambda = np.stack([_scalar_field(f, self.eps, d, ydep)(cen) for f in lams])  # (M+1, nc)
        self.volumes = vs.mesh.cell_volume
        self.load = assemble_load(vs, problem.forcing)[self.free]
        self.lambda_ref = problem.lambda_ref

    @property
    def n_modes(self) -> int:
        return self.problem.n_modes

    def lam(self, z) -> np.ndarray:
        zv = as_zvec(z, self.n_modes)
        out = self.cell_lambda[0].copy()
        for m, zm in enumerate(zv):
            out += zm * self.cell_lambda[m + 1]
        return out

    def stiffness_at(self, z) -> sp.csr_matrix:
        zv = as_zvec(z, self.n_modes)
        k = self.stiffness[0]
        for m, zm in enumerate(zv):
            if zm != 0.0:
                k = k + zm * self.stiffness[m + 1]
        return k

    def pressure_rows(self, z, form: str):
        """(coupling, mass) of the second row: b3 (B, |T|/lam), b4 (lam B, |T|)/lam_ref."""
        lam = self.lam(z)
        if form == "b3":
            return self.div, sp.diags(self.volumes / lam)
        if form == "b4":
            return sp.diags(lam / self.lambda_ref) @ self.div, sp.diags(self.volumes / self.lambda_ref)
        raise ValueError(f"unknown penalty form {form!r}")

    def system(self, z, form: str):
        b, mq = self.pressure_rows(z, form)
        mat = sp.bmat([[self.stiffness_at(z), self.div.T], [b, -mq]], format="csr")
        return mat, np.concatenate([self.load, np.zeros(self.div.shape[0])])


def solve_penalty_at_z(problem: PenaltyProblem, z, form: str = "b3", eps: float | None = None,
                       tol: float = 1e-10, model: PenaltyModel | None = None) -> PenaltySolution:
    model = PenaltyModel(problem, eps) if model is None else model
    b, mq = model.pressure_rows(z, form)
    u, p = solve_block([[model.stiffness_at(z), model.div.T], [b, -mq]],
                       [model.load, np.zeros(b.shape[0])], tol)
    return PenaltySolution(FeField(problem.vspace, problem.vspace.expand(u)), FeField(problem.qspace, p), form)


def penalty_identity_residual(model: PenaltyModel, sol: PenaltySolution, z) -> float:
    """max_q |(div u, q) - (p/lam, q)|, relative to the size of the terms
    that cancel in (div u, q)."""
    u = sol.u.values[model.free]
    lhs = model.div @ u
    rhs = model.volumes / model.lam(z) * sol.p.values
    scale = max((abs(model.div) @ np.abs(u)).max(), np.abs(rhs).max(), 1e-300)
    return float(np.abs(lhs - rhs).max() / scale)


def solve_penalty_galerkin(problem: PenaltyProblem, index_set: IndexSet, form: str = "b3", eps: float | None = None,
                           points_per_dim=None, tol: float = 1e-9, model: PenaltyModel | None = None,
                           check_stability: bool = False):
    """Coupled penalty Galerkin system over Lambda; returns (u, p) expansions.

    b3 carries the non-affine 1/lambda block (tensor Gauss rule); b4 is
    affine in z and uses the Legendre coupling matrices."""
    if len(index_set) == 0:
        raise ValueError("index set is empty")
    model = PenaltyModel(problem, eps) if model is None else model
    m = problem.n_modes
    nl = len(index_set)
    eye = sp.identity(nl, format="csr")
    gms = [eye] + coupling_matrices(index_set, m)
    kk = sum(sp.kron(g, k, format="csr") for g, k in zip(gms, model.stiffness))
    bt = sp.kron(eye, model.div.T, format="csr")
    info = {"form": form}
    if form == "b3":
        npd = _quad_points(index_set, m, 2, points_per_dim)
        zs, w = tensor_rule(npd)
        lmat = chaos_matrix(index_set, zs)
        inv = np.array([model.volumes / model.lam(z) for z in zs])                  # (nq, nc)
        blocks = np.einsum("q,qa,qb,qc->cab", w, lmat, lmat, inv)                   # per cell (nl, nl)
        nc = len(model.volumes)
        rows = (np.arange(nl)[:, None] * nc)[None, :, :] + np.arange(nc)[:, None, None]  # (nc, nl, 1)
        r = np.broadcast_to(rows, (nc, nl, nl))
        c = np.broadcast_to(np.swapaxes(rows, 1, 2), (nc, nl, nl))
        mq = sp.csr_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(nl * nc, nl * nc))
        lower = sp.kron(eye, model.div, format="csr")
        info["points_per_dim"] = npd.tolist()
    elif form == "b4":
        if check_stability:
            th = theta_surrogates(problem, model)
            info["theta"] = th
            if problem.lambda_ref <= th["theta1"]:
                warnings.warn(f"lambdabar_min = {problem.lambda_ref:.3g} is below the stability threshold "
                              f"surrogate {th['theta1']:.3g}", StabilityWarning, stacklevel=2)
        lower = sum(sp.kron(g, sp.diags(lc / model.lambda_ref) @ model.div, format="csr")
                    for g, lc in zip(gms, model.cell_lambda))
        mq = sp.kron(eye, sp.diags(model.volumes / model.lambda_ref), format="csr")
    else:
        raise ValueError(f"unknown penalty form {form!r}")
    nv, nq = len(model.free), model.div.shape[0]
    u, p = solve_block([[kk, bt], [lower, -mq]], [_rhs_at_zero(index_set, model.load), np.zeros(nl * nq)], tol)
    stacked = np.hstack([u.reshape(nl, nv), p.reshape(nl, nq)])
    info["stacked"] = GpcExpansion(index_set, stacked, "free+pressure", m)
    info["matrix"] = sp.bmat([[kk, bt], [lower, -mq]], format="csr")
    return (GpcExpansion(index_set, u.reshape(nl, nv), "free", m, info),
            GpcExpansion(index_set, p.reshape(nl, nq), "pressure", m, info))


def theta_surrogates(problem: PenaltyProblem, model: PenaltyModel | None = None) -> dict:
    """Computable stand-ins for the stability thresholds theta1, theta2.

    c0: discrete inf-sup constant of the divergence; c7: bound of the strain
    in the V norm; cK: Korn constant.  theta2 uses the closed form
    4 mu_max (1+kappa0)(1+mu_max/mu_min) c7^2/c0^2 and theta1 the form
    3 c3^2 (1+kappa0)/c1 with c1 = 2 mu_min cK^2, c3 = 4 mu_max c7^2/c0."""
    from .gpc import incompressible_constants
    model = PenaltyModel(problem) if model is None else model
    vs = problem.vspace
    hv = h1_matrix(vs)[model.free][:, model.free]
    mq = sp.diags(model.volumes)
    c0 = estimate_inf_sup(model.div, hv, mq)
    c7 = strain_bound_constant(vs)
    ck = korn_constant(vs)
    mu_min, mu_max, _, _ = problem.lame.bounds()
    kappa0 = problem.lame.kappa if problem.kappa0 is None else problem.kappa0
    consts = incompressible_constants(c0, c7, mu_min, mu_max, kappa0)
    c1 = 2 * mu_min * ck ** 2
    c3 = 4 * mu_max * c7 ** 2 / c0
    return {"c0": c0, "c7": c7, "korn": ck, "theta1": 3 * c3 ** 2 * (1 + kappa0) / c1,
            "theta2": consts["theta2"], "constants": consts}


# ---------------------------------------------------------------------------
# inf-sup instrumentation

def _smallest_abs_generalized(a: sp.spmatrix, x: sp.spmatrix, dense_limit: int = 2500) -> float:
    """min |lambda| of A v = lambda X v (A symmetric, X SPD)."""
    n = a.shape[0]
    if n <= dense_limit:
        import scipy.linalg as sla
        ev = sla.eigh(a.toarray(), x.toarray(), eigvals_only=True)
        return float(np.abs(ev).min())
    try:
        ev = spla.eigsh(sp.csc_matrix(a), k=1, M=sp.csc_matrix(x), sigma=0.0, which="LM",
                        v0=start_vector(a.shape[0]), return_eigenvectors=False)
    except Exception as exc:
        raise EigSolverFailure(str(exc)) from exc
    return float(abs(ev[0]))


def hr_full_infsup(model: HrModel, index_set: IndexSet, points_per_dim=None) -> float:
    """inf-sup constant of the whole b1 Galerkin operator in the
    (L2 x H1) product norm over Lambda."""
    nl = len(index_set)
    m = model.n_modes
    npd = _quad_points(index_set, m, 2, points_per_dim)
    zs, w = tensor_rule(npd)
    lmat = chaos_matrix(index_set, zs)
    top = sum(sp.kron(sp.csr_matrix(w[q] * np.outer(lmat[q], lmat[q])), model.compliance_mass(z), format="csr")
              for q, z in enumerate(zs))
    eye = sp.identity(nl, format="csr")
    c = sp.kron(eye, model.coupling, format="csr")
    a = sp.bmat([[top, -c], [-c.T, None]], format="csr")
    hv = h1_matrix(model.vspace)[model.free][:, model.free]
    x = sp.block_diag([sp.kron(eye, model.stress_mass), sp.kron(eye, hv)], format="csr")
    return _smallest_abs_generalized(a, x)


def penalty_full_infsup(model: PenaltyModel, index_set: IndexSet, points_per_dim=None) -> float:
    """inf-sup constant of the whole b3 Galerkin operator in the (H1 x L2) norm."""
    nl = len(index_set)
    m = model.n_modes
    npd = _quad_points(index_set, m, 2, points_per_dim)
    zs, w = tensor_rule(npd)
    lmat = chaos_matrix(index_set, zs)
    eye = sp.identity(nl, format="csr")
    gms = [eye] + coupling_matrices(index_set, m)
    kk = sum(sp.kron(g, k, format="csr") for g, k in zip(gms, model.stiffness))
    mq = sum(sp.kron(sp.csr_matrix(w[q] * np.outer(lmat[q], lmat[q])),
                     sp.diags(model.volumes / model.lam(z)), format="csr") for q, z in enumerate(zs))
    b = sp.kron(eye, model.div, format="csr")
    a = sp.bmat([[kk, b.T], [b, -mq]], format="csr")
    hv = h1_matrix(model.problem.vspace)[model.free][:, model.free]
    x = sp.block_diag([sp.kron(eye, hv), sp.kron(eye, sp.diags(model.volumes))], format="csr")
    return _smallest_abs_generalized(a, x)


def coupling_infsup(formulation: str, n: int, d: int = 2, dirichlet: str = "left",
                    details: dict | None = None) -> float:
    """Inf-sup constant of the coupling form alone on an n x n mesh.

    b1: inf_v sup_tau (tau, eps v)/(|tau| |v|_V), P0 stress / P1 displacement;
    b3: inf_q sup_v (div v, q)/(|v|_V |q|), P2 / P0;
    p1p1: the same divergence pairing with P1 / P1 (unstable control); its
    exact spurious pressure modes are skipped and counted in ``details``."""
    mesh = Mesh(n, d)
    if formulation == "b1":
        vs = FeSpace(mesh, 1, "vector", "all" if dirichlet == "left" else dirichlet)
        ss = FeSpace(mesh, 0, "sym")
        f = vs.free_dofs
        c = assemble_stress_strain(ss, vs)[:, f]
        return estimate_inf_sup(c.T, assemble_weighted_mass(ss, 1.0), h1_matrix(vs)[f][:, f])
    order_q = {"b3": 0, "p1p1": 1}[formulation]
    order_v = {"b3": 2, "p1p1": 1}[formulation]
    vs = FeSpace(mesh, order_v, "vector", dirichlet)
    qs = FeSpace(mesh, order_q, "scalar")
    f = vs.free_dofs
    b = assemble_div_coupling(vs, qs)[:, f]
    return estimate_inf_sup(b, h1_matrix(vs)[f][:, f], assemble_weighted_mass(qs, 1.0),
                            exclude_kernel=formulation == "p1p1", details=details)


def infsup_study(formulation: str, levels, index_sets=(), problem=None, tolerance: float = 0.2,
                 d: int = 2) -> ConvergenceReport:
    """Discrete inf-sup constants per mesh level (coupling form) and, given a
    problem, per index set (whole Galerkin operator at the coarsest level).

    Flags relative degradation beyond ``tolerance`` in the metadata."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("need at least two mesh levels")
    rep = ConvergenceReport(["formulation", "level", "n_lambda", "constant", "kernel_dim"])
    vals = []
    for n in levels:
        det = {}
        c = coupling_infsup(formulation, n, d, details=det)
        vals.append(c)
        rep.add(formulation, n, 1, c, det.get("kernel_dim", 0))
    lam_vals = []
    if problem is not None and index_sets:
        for lam in index_sets:
            if formulation == "b1":
                c = hr_full_infsup(HrModel(problem), lam)
            else:
                c = penalty_full_infsup(PenaltyModel(problem), lam)
            lam_vals.append(c)
            rep.add(formulation + "-full", problem.n, len(lam), c, 0)
    deg = 1.0 - min(vals) / max(vals) if max(vals) > 0 else 1.0
    rep.metadata.update(level_degradation=deg, level_flag=deg > tolerance, levels=levels)
    if lam_vals:
        dl = 1.0 - min(lam_vals) / max(lam_vals)
        rep.metadata.update(lambda_degradation=dl, lambda_flag=dl > tolerance)
    return rep


# ---------------------------------------------------------------------------
# penalty Galerkin error studies

def penalty_bounds(problem: PenaltyProblem, model: PenaltyModel | None = None, zeta: float = 0.5):
    """Incompressible coefficient-bound sequence with computed constants."""
    from .gpc import make_bound_sequence
    th = theta_surrogates(problem, model)
    mu_min, mu_max, lam_min, _ = problem.lame.bounds()
    kappa0 = problem.lame.kappa if problem.kappa0 is None else problem.kappa0
    return make_bound_sequence("incompressible", {
        "gammas": problem.lame.gammas, "deltas": problem.lame.deltas, "mu_min": mu_min,
        "lambda_min": lam_min, "zeta": zeta, "c0": th["c0"], "c7": th["c7"], "mu_max": mu_max,
        "kappa0": kappa0})


def asymptotic_penalty_bounds(lame: IsotropicLameField):
    """The incompressible bound sequence in the limit of large lambda with
    delta_m / lambdabar_min held fixed: max(gamma_m / mu_min, delta_m / lambda_min) / sqrt 3."""
    from .gpc import BoundSequence
    mu_min, _, lam_min, _ = lame.bounds()
    vals = np.maximum(lame.gammas / mu_min, lame.deltas / lam_min) / np.sqrt(3.0)
    return BoundSequence("incompressible", tuple(vals), {"limit": "large lambda"}, None)


def penalty_error_study(problem: PenaltyProblem, n_list, form: str = "b4", reference_points: int = 4,
                        index_sets: dict | None = None, bounds=None) -> ConvergenceReport:
    """L2(U; V) and L2(U; L2) errors of the penalty Galerkin solution on
    best-N sets, against per-z solves on a tensor Gauss rule.  Without
    ``index_sets``/``bounds`` the sets come from the bound sequence with the
    computed stability constants."""
    from .gpc import best_n_indices
    model = PenaltyModel(problem)
    m = problem.n_modes
    zs, w = tensor_rule([reference_points] * m)
    refs = [solve_penalty_at_z(problem, z, form, model=model) for z in zs]
    free = model.free
    hv = h1_matrix(problem.vspace)[free][:, free]
    vol = model.volumes
    ru = np.array([r.u.values[free] for r in refs])
    rp = np.array([r.p.values for r in refs])
    norm_u = np.sqrt(w @ np.einsum("qi,qi->q", ru @ hv, ru))
    norm_p = np.sqrt(w @ (rp ** 2 @ vol))
    if index_sets is None:
        bounds = penalty_bounds(problem, model) if bounds is None else bounds
        index_sets = {int(n): best_n_indices(bounds, int(n)) for n in n_list}
    rep = ConvergenceReport(["N", "error_u", "error_p", "relative_u", "relative_p"],
                            metadata={"form": form, "reference_points": reference_points,
                                      "lambda_min": problem.lambda_ref})
    for n in n_list:
        ue, pe = solve_penalty_galerkin(problem, index_sets[int(n)], form, model=model)
        du = ru - ue.evaluate(zs)
        dp = rp - pe.evaluate(zs)
        eu = float(np.sqrt(w @ np.einsum("qi,qi->q", du @ hv, du)))
        ep = float(np.sqrt(w @ (dp ** 2 @ vol)))
        rep.add(N=int(n), error_u=eu, error_p=ep, relative_u=eu / norm_u, relative_p=ep / norm_p)
    rep.metadata["index_sets"] = {int(n): index_sets[int(n)].to_text() for n in n_list}
    return rep


def hr_error_study(problem: DisplacementProblem, bounds, n_list, form: str = "b1", reference_points: int = 4,
                   midpoint: bool = True) -> ConvergenceReport:
    """L2(U; L2) stress and L2(U; V) displacement errors of the HR Galerkin
    solution on best-N sets, against per-z HR solves on a tensor Gauss rule."""
    from .gpc import best_n_indices
    model = HrModel(problem, midpoint=midpoint)
    m = problem.n_modes
    zs, w = tensor_rule([reference_points] * m)
    refs = [solve_hr_at_z(problem, z, form, model=model) for z in zs]
    free = model.free
    hv = h1_matrix(model.vspace)[free][:, free]
    ms = model.stress_mass
    rs = np.array([r.sigma.values for r in refs])
    ru = np.array([r.u.values[free] for r in refs])
    norm_s = np.sqrt(w @ np.einsum("qi,qi->q", rs @ ms, rs))
    norm_u = np.sqrt(w @ np.einsum("qi,qi->q", ru @ hv, ru))
    rep = ConvergenceReport(["N", "error_sigma", "error_u", "relative_sigma", "relative_u", "fitted_slope"],
                            metadata={"form": form, "reference_points": reference_points})
    errs = []
    for n in n_list:
        sg, ug = solve_hr_galerkin(problem, best_n_indices(bounds, int(n)), form, model=model)
        ds = rs - sg.evaluate(zs)
        du = ru - ug.evaluate(zs)
        es = float(np.sqrt(w @ np.einsum("qi,qi->q", ds @ ms, ds)))
        eu = float(np.sqrt(w @ np.einsum("qi,qi->q", du @ hv, du)))
        errs.append(es)
        rep.add(N=int(n), error_sigma=es, error_u=eu, relative_sigma=es / norm_s, relative_u=eu / norm_u,
                fitted_slope=float("nan"))
    ok = len(errs) > 2 and min(errs) > 0
    slope = fit_rate(np.asarray(n_list, float), np.asarray(errs))[0] if ok else float("nan")
    rep.set_column("fitted_slope", slope)
    rep.metadata["slope"] = slope
    return rep
