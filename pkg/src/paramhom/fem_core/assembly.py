"""Vectorised, chunked assembly of bilinear and linear forms."""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

from ..tensor_fields import SQ2, SymTensor4, nsym
from .mesh import FeSpace
from .quadrature import simplex_rule

CHUNK = 131072


class AssemblyFailure(RuntimeError):
    pass


class NonpositiveWeight(ValueError):
    pass


def default_degree(space: FeSpace) -> int:
    return {0: 2, 1: 2, 2: 4}[space.order]


class CellBatch:
    """Geometry and basis data of a chunk of cells at quadrature points."""

    def __init__(self, space: FeSpace, cells: np.ndarray, pts: np.ndarray, wts: np.ndarray):
        m = space.mesh
        self.cells = cells
        jac = m.jacobian(cells)
        det = np.abs(np.linalg.det(jac)) if m.d == 2 else np.abs(jac[:, 0, 0])
        jinv = np.linalg.inv(jac)
        self.x = m.cell_origin(cells)[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
        self.w = det[:, None] * wts[None, :]
        self.phi = space.element.values(pts)                       # (nq, nloc)
        dref = space.element.gradients(pts)                        # (nq, nloc, d)
        self.dphi = np.einsum("qak,ckj->cqaj", dref, jinv)          # (nc, nq, nloc, d)
        self.dofs = space.cell_dofs[cells]

    @property
    def points(self) -> np.ndarray:
        return self.x.reshape(-1, self.x.shape[-1])


def batches(space: FeSpace, degree: int | None = None, chunk: int = CHUNK) -> Iterator[CellBatch]:
    pts, wts = simplex_rule(space.mesh.d, default_degree(space) if degree is None else degree)
    n = space.mesh.n_cells
    for start in range(0, n, chunk):
        yield CellBatch(space, np.arange(start, min(n, start + chunk)), pts, wts)


def strain_matrix(dphi: np.ndarray) -> np.ndarray:
    """Mandel strain of vector basis functions: (..., nsym, nloc*d)."""
    d = dphi.shape[-1]
    nloc = dphi.shape[-2]
    out = np.zeros(dphi.shape[:-2] + (nsym(d), nloc * d))
    if d == 1:
        out[..., 0, :] = dphi[..., 0]
        return out
    out[..., 0, 0::2] = dphi[..., 0]
    out[..., 1, 1::2] = dphi[..., 1]
    out[..., 2, 0::2] = dphi[..., 1] / SQ2
    out[..., 2, 1::2] = dphi[..., 0] / SQ2
    return out


def divergence_row(dphi: np.ndarray) -> np.ndarray:
    """div of vector basis functions: (..., nloc*d)."""
    return dphi.reshape(dphi.shape[:-2] + (-1,))


def _accumulate(total, rows, cols, vals, shape):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    return m if total is None else total + m


def as_point_tensor(tensor, d: int) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize coefficient inputs to a callable points -> Mandel (n, k, k)."""
    k = nsym(d)
    if isinstance(tensor, SymTensor4):
        m = tensor.mandel
        return lambda x: np.broadcast_to(m, (len(x), k, k))
    if np.isscalar(tensor):
        c = float(tensor)
        return lambda x: np.broadcast_to(c * np.eye(k), (len(x), k, k))
    return tensor


def _eval_tensor(fn, x, k):
    try:
        vals = np.asarray(fn(x), dtype=float)
    except Exception as exc:  # pragma: no cover - message path
        raise AssemblyFailure(f"tensor evaluation failed: {exc}") from exc
    vals = np.broadcast_to(vals, (len(x), k, k))
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals).all(axis=(1, 2)))[0])
        raise AssemblyFailure(f"non-finite tensor at quadrature point {x[bad].tolist()}")
    return vals


def assemble_elastic(space: FeSpace, tensor_at, degree: int | None = None,
                     midpoint: bool = False) -> sp.csr_matrix:
    """K[u, v] = int a(x) eps(u) : eps(v) dx on all dofs (constraints not applied).

    ``tensor_at`` maps points (n, d) to Mandel matrices, or is a SymTensor4 /
    scalar multiple of the identity.  ``midpoint`` evaluates the tensor once
    per cell at the centroid.
    """
    if space.arity != "vector":
        raise ValueError("elastic form needs a vector space")
    d = space.mesh.d
    k = nsym(d)
    fn = as_point_tensor(tensor_at, d)
    n = space.n_dofs
    total = None
    for b in batches(space, degree):
        bm = strain_matrix(b.dphi)                                   # (nc, nq, k, L)
        nc, nq = b.w.shape
        if midpoint:
            cen = space.mesh.centroids()[b.cells]
            a = np.repeat(_eval_tensor(fn, cen, k)[:, None], nq, axis=1)
        else:
            a = _eval_tensor(fn, b.points, k).reshape(nc, nq, k, k)
        ab = np.einsum("cqij,cqjb->cqib", a, bm)
        ke = np.einsum("cq,cqia,cqib->cab", b.w, bm, ab)
        rows = np.repeat(b.dofs[:, :, None], b.dofs.shape[1], axis=2)
        cols = np.repeat(b.dofs[:, None, :], b.dofs.shape[1], axis=1)
        total = _accumulate(total, rows, cols, ke, (n, n))
    return total


def assemble_gradgrad(space: FeSpace, degree: int | None = None) -> sp.csr_matrix:
    """K[u, v] = int grad u : grad v dx (componentwise)."""
    n = space.n_dofs
    c = space.ncomp
    total = None
    for b in batches(space, degree):
        ks = np.einsum("cq,cqaj,cqbj->cab", b.w, b.dphi, b.dphi)
        ke = np.einsum("cab,ij->caibj", ks, np.eye(c)).reshape(len(b.cells), ks.shape[1] * c, -1)
        rows = np.repeat(b.dofs[:, :, None], b.dofs.shape[1], axis=2)
        cols = np.repeat(b.dofs[:, None, :], b.dofs.shape[1], axis=1)
        total = _accumulate(total, rows, cols, ke, (n, n))
    return total


def assemble_weighted_mass(space: FeSpace, weight=1.0, degree: int | None = None,
                           midpoint: bool = False, check_positive: bool = True) -> sp.csr_matrix:
    """M[s, t] = int w s : t dx with scalar w, or w a tensor (Mandel) for sym spaces."""
    n = space.n_dofs
    c = space.ncomp
    tensor_weight = False
    if isinstance(weight, SymTensor4) or (callable(weight) and space.arity == "sym"):
        tensor_weight = True
        fn = as_point_tensor(weight, space.mesh.d)
    elif np.isscalar(weight):
        wc = float(weight)
        fn = lambda x: np.full(len(x), wc)
    else:
        fn = weight
    if degree is None:
        degree = 2 * space.order + (0 if midpoint else 2)
    total = None
    for b in batches(space, degree):
        nc, nq = b.w.shape
        pts = np.repeat(space.mesh.centroids()[b.cells], nq, axis=0) if midpoint else b.points
        vals = np.asarray(fn(pts), dtype=float)
        if tensor_weight:
            vals = np.broadcast_to(vals, (len(pts), c, c)).reshape(nc, nq, c, c)
            if check_positive and np.linalg.eigvalsh(vals.reshape(-1, c, c)).min() <= 0:
                raise NonpositiveWeight("tensor weight is not positive definite")
            mloc = np.einsum("cq,qa,qb,cqij->caibj", b.w, b.phi, b.phi, vals)
        else:
            vals = np.broadcast_to(vals, (len(pts),)).reshape(nc, nq)
            if check_positive and vals.min() <= 0:
                raise NonpositiveWeight(f"weight {vals.min():.3g} <= 0")
            ms = np.einsum("cq,qa,qb,cq->cab", b.w, b.phi, b.phi, vals)
            mloc = np.einsum("cab,ij->caibj", ms, np.eye(c))
        L = b.dofs.shape[1]
        mloc = mloc.reshape(nc, L, L)
        rows = np.repeat(b.dofs[:, :, None], L, axis=2)
        cols = np.repeat(b.dofs[:, None, :], L, axis=1)
        total = _accumulate(total, rows, cols, mloc, (n, n))
    return total


def assemble_div_coupling(vspace: FeSpace, qspace: FeSpace, weight=None,
                          degree: int | None = None) -> sp.csr_matrix:
    """B[q, v] = int w div v q dx, shape (qspace dofs, vspace dofs)."""
    if vspace.arity != "vector" or qspace.arity != "scalar":
        raise ValueError("div coupling needs a vector space and a scalar space")
    if vspace.mesh is not qspace.mesh and vspace.mesh.n != qspace.mesh.n:
        raise ValueError("spaces live on different meshes")
    if degree is None:
        degree = vspace.order - 1 + qspace.order + (2 if weight is not None else 0)
    pts, wts = simplex_rule(vspace.mesh.d, max(degree, 1))
    total = None
    n = vspace.mesh.n_cells
    for start in range(0, n, CHUNK):
        cells = np.arange(start, min(n, start + CHUNK))
        bv = CellBatch(vspace, cells, pts, wts)
        qphi = qspace.element.values(pts)
        div = divergence_row(bv.dphi)                               # (nc, nq, Lv)
        w = bv.w
        if weight is not None:
            w = w * np.asarray(weight(bv.points), float).reshape(w.shape)
        be = np.einsum("cq,qa,cqb->cab", w, qphi, div)
        qd = qspace.cell_dofs[cells]
        rows = np.repeat(qd[:, :, None], bv.dofs.shape[1], axis=2)
        cols = np.repeat(bv.dofs[:, None, :], qd.shape[1], axis=1)
        total = _accumulate(total, rows, cols, be, (qspace.n_dofs, vspace.n_dofs))
    return total


def assemble_stress_strain(sspace: FeSpace, vspace: FeSpace, tensor_at=None,
                           midpoint: bool = False, degree: int | None = None) -> sp.csr_matrix:
    """C[tau, v] = int tau : a eps(v) dx (a = identity when omitted).

    Shape (sspace dofs, vspace dofs); sspace holds symmetric tensors."""
    if sspace.arity != "sym" or vspace.arity != "vector":
        raise ValueError("need a symmetric-tensor space and a vector space")
    d = vspace.mesh.d
    k = nsym(d)
    fn = None if tensor_at is None else as_point_tensor(tensor_at, d)
    if degree is None:
        degree = sspace.order + vspace.order - 1 + (0 if fn is None or midpoint else 2)
    pts, wts = simplex_rule(d, max(degree, 1))
    total = None
    n = vspace.mesh.n_cells
    for start in range(0, n, CHUNK):
        cells = np.arange(start, min(n, start + CHUNK))
        bv = CellBatch(vspace, cells, pts, wts)
        sphi = sspace.element.values(pts)                            # (nq, Ls)
        bm = strain_matrix(bv.dphi)                                  # (nc, nq, k, Lv)
        nc, nq = bv.w.shape
        if fn is not None:
            if midpoint:
                cen = vspace.mesh.centroids()[cells]
                a = np.repeat(_eval_tensor(fn, cen, k)[:, None], nq, axis=1)
            else:
                a = _eval_tensor(fn, bv.points, k).reshape(nc, nq, k, k)
            bm = np.einsum("cqij,cqjb->cqib", a, bm)
        ce = np.einsum("cq,qs,cqib->csib", bv.w, sphi, bm).reshape(nc, -1, bm.shape[-1])
        sd = sspace.cell_dofs[cells]
        rows = np.repeat(sd[:, :, None], bv.dofs.shape[1], axis=2)
        cols = np.repeat(bv.dofs[:, None, :], sd.shape[1], axis=1)
        total = _accumulate(total, rows, cols, ce, (sspace.n_dofs, vspace.n_dofs))
    return total


def assemble_load(space: FeSpace, f, degree: int | None = None) -> np.ndarray:
    """F[v] = int f . v dx for f(points) -> (n, ncomp) (or a constant vector)."""
    c = space.ncomp
    if not callable(f):
        const = np.broadcast_to(np.asarray(f, float), (c,)).copy()
        f = lambda x: np.broadcast_to(const, (len(x), c))
    if degree is None:
        degree = space.order + 2
    out = np.zeros(space.n_dofs)
    for b in batches(space, degree):
        nc, nq = b.w.shape
        fv = np.asarray(f(b.points), float).reshape(nc, nq, c)
        fe = np.einsum("cq,qa,cqi->cai", b.w, b.phi, fv).reshape(nc, -1)
        np.add.at(out, b.dofs.ravel(), fe.ravel())
    return out


def assemble_strain_load(space: FeSpace, tensor_at, strain, degree: int | None = None) -> np.ndarray:
    """F[v] = int a(x) E : eps(v) dx for a fixed Mandel strain vector E
    (or a callable points -> (n, k) strain field)."""
    d = space.mesh.d
    k = nsym(d)
    fn = as_point_tensor(tensor_at, d)
    out = np.zeros(space.n_dofs)
    for b in batches(space, degree):
        nc, nq = b.w.shape
        a = _eval_tensor(fn, b.points, k).reshape(nc, nq, k, k)
        e = strain(b.points).reshape(nc, nq, k) if callable(strain) else np.broadcast_to(strain, (nc, nq, k))
        ae = np.einsum("cqij,cqj->cqi", a, e)
        fe = np.einsum("cq,cqib,cqi->cb", b.w, strain_matrix(b.dphi), ae)
        np.add.at(out, b.dofs.ravel(), fe.ravel())
    return out


def rigid_body_modes(space: FeSpace) -> np.ndarray:
    """Translations and (d=2) the infinitesimal rotation, on all dofs."""
    x = space.node_coords
    d = space.mesh.d
    modes = []
    for c in range(d):
        m = np.zeros((space.n_nodes, d))
        m[:, c] = 1.0
        modes.append(m.ravel())
    if d == 2:
        m = np.stack([-x[:, 1], x[:, 0]], axis=1)
        modes.append(m.ravel())
    return np.stack(modes, axis=1)
