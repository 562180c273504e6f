"""Linear solvers, inf-sup and Korn estimates, and discrete norms."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..tensor_fields import nsym
from .assembly import assemble_elastic, assemble_gradgrad, assemble_weighted_mass, batches, strain_matrix
from .mesh import FeSpace

log = logging.getLogger(__name__)

# above this many unknowns, SPD systems go to AMG-preconditioned CG
DIRECT_LIMIT = 250_000


def start_vector(n: int) -> np.ndarray:
    """Fixed Krylov start vector so eigenvalue estimates are reproducible."""
    return np.random.default_rng(0).standard_normal(n)


class SolverBreakdown(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class IndefinitePivot(SolverBreakdown):
    pass


class EigSolverFailure(RuntimeError):
    pass


class DegenerateSpace(ValueError):
    pass


@dataclass
class LinearSystem:
    """1x1 or 2x2 block system; ``blocks[i][j]`` may be None for zero blocks."""
    blocks: list
    rhs: list
    symmetric: bool = True
    saddle: bool = False

    def matrix(self) -> sp.csr_matrix:
        return sp.bmat(self.blocks, format="csr")

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(r, float) for r in self.rhs])

    def sizes(self) -> list[int]:
        return [len(r) for r in self.rhs]


def _relres(a, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a @ x - b) / (nb if nb > 0 else 1.0))


def solve_spd(a, b=None, tol: float = 1e-10, near_null: np.ndarray | None = None,
              method: str = "auto") -> np.ndarray:
    """Solve an SPD system to relative residual ``tol``.

    Sparse direct factorisation up to DIRECT_LIMIT unknowns, smoothed
    aggregation AMG + CG beyond (``near_null`` seeds the aggregation)."""
    if isinstance(a, LinearSystem):
        a, b = a.matrix(), a.vector()
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if b.ndim == 2:
        return np.column_stack([solve_spd(a, b[:, j], tol, near_null, method) for j in range(b.shape[1])])
    if not np.any(b):
        return np.zeros(n)
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "amg"
    if method == "dense":
        x = sla.solve(a.toarray() if sp.issparse(a) else a, b, assume_a="pos")
        hist = [_relres(a, x, b)]
    elif method == "direct":
        a = sp.csc_matrix(a)
        lu = spla.splu(a, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        x = lu.solve(b)
        hist = [_relres(a, x, b)]
        for _ in range(3):
            if hist[-1] <= tol:
                break
            x = x + lu.solve(b - a @ x)
            hist.append(_relres(a, x, b))
    else:
        import pyamg
        a = sp.csr_matrix(a)
        ml = pyamg.smoothed_aggregation_solver(a, B=near_null, symmetry="symmetric", max_coarse=500)
        res = []
        x = ml.solve(b, tol=tol * 0.5, accel="cg", maxiter=400, residuals=res)
        hist = list(np.asarray(res) / max(np.linalg.norm(b), 1e-300))
        hist.append(_relres(a, x, b))
        log.info("AMG-CG: %d iterations, relres %.2e", len(res), hist[-1])
    if not np.all(np.isfinite(x)) or hist[-1] > tol:
        raise SolverBreakdown(f"relative residual {hist[-1]:.3e} > {tol:.1e}", hist)
    return x


def solve_block(blocks, rhs, tol: float = 1e-9) -> list[np.ndarray]:
    """Direct solve of a general block system; checks each block row residual."""
    a = sp.bmat(blocks, format="csc")
    sizes = [len(r) for r in rhs]
    b = np.concatenate([np.asarray(r, float) for r in rhs])
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        raise IndefinitePivot(f"factorisation failed: {exc}") from exc
    x = lu.solve(b)
    hist = []
    for _ in range(4):
        r = b - a @ x
        errs = _block_residuals(r, b, sizes)
        hist.append(max(errs))
        if hist[-1] <= tol:
            break
        x = x + lu.solve(r)
    if not np.all(np.isfinite(x)) or hist[-1] > tol:
        raise SolverBreakdown(f"block residual {hist[-1]:.3e} > {tol:.1e}", hist)
    return np.split(x, np.cumsum(sizes)[:-1])


def _block_residuals(r, b, sizes):
    out = []
    scale = max(np.linalg.norm(b), 1e-300)
    for rr, bb in zip(np.split(r, np.cumsum(sizes)[:-1]), np.split(b, np.cumsum(sizes)[:-1])):
        nb = np.linalg.norm(bb)
        out.append(np.linalg.norm(rr) / (nb if nb > 1e-12 * scale else scale))
    return out


def solve_saddle(a, b=None, c=None, f=None, g=None, bt=None, tol: float = 1e-9):
    """Solve [[A, B^T], [B, -C]] (x, y) = (f, g); ``bt`` replaces B^T for
    nonsymmetric variants.  Accepts a LinearSystem as first argument."""
    if isinstance(a, LinearSystem):
        x, y = solve_block(a.blocks, a.rhs, tol)
        return x, y
    nq = b.shape[0]
    cc = sp.csr_matrix((nq, nq)) if c is None else -sp.csr_matrix(c)
    upper = b.T if bt is None else bt
    g = np.zeros(nq) if g is None else g
    x, y = solve_block([[a, upper], [b, cc]], [f, g], tol)
    return x, y


def solve_constrained(k, cmat, f, tol: float = 1e-9):
    """Minimise with linear constraints cmat x = 0 via multipliers; returns x."""
    x, _ = solve_saddle(k, sp.csr_matrix(cmat), None, f, None, tol=tol)
    return x


# ---------------------------------------------------------------------------
# spectral estimates

def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def estimate_inf_sup(b, mv, mq, dense_limit: int = 6000, exclude_kernel: bool = False,
                     details: dict | None = None) -> float:
    """Smallest sigma with B Mv^{-1} B^T q = sigma^2 Mq q (B has shape (nq, nv)).

    With ``exclude_kernel`` the exact kernel of B^T (spurious modes) is
    skipped and the smallest nonzero sigma is returned; ``details`` receives
    the kernel dimension."""
    b = sp.csr_matrix(b)
    nq = b.shape[0]
    if b.nnz == 0:
        return 0.0
    if nq > dense_limit:
        raise EigSolverFailure(f"q-space of size {nq} beyond the dense limit {dense_limit}")
    mv = sp.csc_matrix(mv)
    lu = spla.splu(mv)
    x = lu.solve(_dense(b.T))
    s = _dense(b @ x)
    s = 0.5 * (s + s.T)
    try:
        ev = sla.eigh(s, _dense(mq), eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigSolverFailure(str(exc)) from exc
    top = max(ev.max(), 1e-300)
    kernel = ev < 1e-11 * top
    if details is not None:
        details["kernel_dim"] = int(kernel.sum())
    if exclude_kernel:
        return float(np.sqrt(ev[~kernel].min())) if (~kernel).any() else 0.0
    if kernel.any():
        return 0.0
    return float(np.sqrt(ev.min()))


def smallest_generalized(k, m, constraint=None, dense_limit: int = 5000) -> float:
    """Smallest eigenvalue of K x = lam M x on {constraint x = 0}."""
    n = k.shape[0]
    if constraint is not None:
        z = sla.null_space(_dense(constraint))
        kd = z.T @ _dense(k) @ z
        md = z.T @ _dense(m) @ z
        return float(sla.eigh(kd, md, eigvals_only=True, subset_by_index=[0, 0])[0])
    if n <= dense_limit:
        return float(sla.eigh(_dense(k), _dense(m), eigvals_only=True, subset_by_index=[0, 0])[0])
    try:
        val = spla.eigsh(sp.csc_matrix(k), k=1, M=sp.csc_matrix(m), sigma=0.0, which="LM",
                         v0=start_vector(k.shape[0]), return_eigenvectors=False)
    except Exception as exc:
        raise EigSolverFailure(str(exc)) from exc
    return float(val[0])


def h1_matrix(space: FeSpace) -> sp.csr_matrix:
    return (assemble_weighted_mass(space, 1.0) + assemble_gradgrad(space)).tocsr()


def korn_constant(space: FeSpace) -> float:
    """Discrete c with ||eps(v)|| >= c ||v||_{H^1} on the constrained space."""
    ke = assemble_elastic(space, 1.0)
    mh = h1_matrix(space)
    if space.periodic:
        lam = smallest_generalized(ke, mh, space.mean_constraint())
    else:
        f = space.free_dofs
        lam = smallest_generalized(ke[f][:, f], mh[f][:, f])
    if lam < 1e-12:
        raise DegenerateSpace(f"rigid motions survive the constraints (eigenvalue {lam:.2e})")
    return float(np.sqrt(lam))


def strain_bound_constant(space: FeSpace) -> float:
    """Discrete c7 = sup ||eps(v)|| / ||v||_V on the free dofs."""
    ke = assemble_elastic(space, 1.0)
    mh = h1_matrix(space)
    f = space.free_dofs if not space.periodic else slice(None)
    k, m = ke[f][:, f], mh[f][:, f]
    if k.shape[0] <= 5000:
        return float(np.sqrt(sla.eigh(_dense(k), _dense(m), eigvals_only=True)[-1]))
    val = spla.eigsh(sp.csc_matrix(k), k=1, M=sp.csc_matrix(m), which="LA", v0=start_vector(k.shape[0]),
                     return_eigenvectors=False)
    return float(np.sqrt(val[0]))


# ---------------------------------------------------------------------------
# norms

@dataclass
class Norms:
    l2: float
    h1_semi: float
    h1: float
    energy: float | None = None

    def as_tuple(self):
        return (self.l2, self.h1_semi, self.h1, self.energy)


def norms(space: FeSpace, u: np.ndarray, tensor_at=None, degree: int | None = None,
          exact=None, exact_grad=None) -> Norms:
    """Quadrature norms of u_h (or of u_h - exact when closures are given).

    The energy norm uses ``tensor_at`` (points -> Mandel) and needs a vector space."""
    from .assembly import as_point_tensor
    c = space.ncomp
    d = space.mesh.d
    u = np.asarray(u, float)
    l2 = semi = en = 0.0
    if degree is None:
        degree = 2 * max(space.order, 1) + 2
    fn = None if tensor_at is None else as_point_tensor(tensor_at, d)
    for b in batches(space, degree):
        nc, nq = b.w.shape
        ue = u[b.dofs].reshape(nc, -1, c)
        val = np.einsum("qa,cai->cqi", b.phi, ue)
        grad = np.einsum("cqaj,cai->cqij", b.dphi, ue)
        if exact is not None:
            val = val - np.asarray(exact(b.points), float).reshape(nc, nq, c)
        if exact_grad is not None:
            grad = grad - np.asarray(exact_grad(b.points), float).reshape(nc, nq, c, d)
        l2 += float(np.einsum("cq,cqi,cqi->", b.w, val, val))
        semi += float(np.einsum("cq,cqij,cqij->", b.w, grad, grad))
        if fn is not None and space.arity == "vector":
            eps = _mandel_strain(grad)
            a = fn(b.points).reshape(nc, nq, nsym(d), nsym(d))
            en += float(np.einsum("cq,cqi,cqij,cqj->", b.w, eps, a, eps))
    return Norms(np.sqrt(l2), np.sqrt(semi), np.sqrt(l2 + semi), np.sqrt(en) if fn is not None else None)


def _mandel_strain(grad: np.ndarray) -> np.ndarray:
    """Mandel strain vectors from displacement gradients (..., d, d)."""
    d = grad.shape[-1]
    if d == 1:
        return grad[..., 0, :]
    return np.stack([grad[..., 0, 0], grad[..., 1, 1],
                     (grad[..., 0, 1] + grad[..., 1, 0]) / np.sqrt(2.0)], axis=-1)


mandel_strain = _mandel_strain
