"""Uniform simplicial meshes of the unit interval/square and Lagrange function spaces."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from ..tensor_fields import nsym

SIDES = ("left", "right", "bottom", "top")


class Mesh:
    """n x n squares each cut into two triangles along the (i,j)-(i+1,j+1)
    diagonal (d=2), or n intervals (d=1).  Cells of square (i, j) have ids
    2k and 2k+1 with k = i + n j."""

    def __init__(self, n: int, d: int = 2):
        if n < 1:
            raise ValueError("n must be positive")
        if d not in (1, 2):
            raise ValueError("only d = 1, 2 are supported")
        self.n = int(n)
        self.d = d
        self.h = 1.0 / n
        t = np.linspace(0.0, 1.0, n + 1)
        if d == 1:
            self.vertices = t[:, None]
            self.cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
        else:
            xx, yy = np.meshgrid(t, t, indexing="xy")
            self.vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)
            i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
            i, j = i.ravel(), j.ravel()
            v = lambda a, b: a + (n + 1) * b
            lower = np.stack([v(i, j), v(i + 1, j), v(i + 1, j + 1)], axis=1)
            upper = np.stack([v(i, j), v(i + 1, j + 1), v(i, j + 1)], axis=1)
            self.cells = np.empty((2 * n * n, 3), dtype=np.int64)
            self.cells[0::2] = lower
            self.cells[1::2] = upper

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_origin(self, idx=slice(None)) -> np.ndarray:
        return self.vertices[self.cells[idx, 0]]

    def jacobian(self, idx=slice(None)) -> np.ndarray:
        """Affine-map Jacobians (nc, d, d); columns are edge vectors."""
        v = self.vertices[self.cells[idx]]
        return np.stack([v[:, k + 1] - v[:, 0] for k in range(self.d)], axis=2)

    @cached_property
    def cell_volume(self) -> np.ndarray:
        j = self.jacobian()
        det = np.linalg.det(j) if self.d == 2 else j[:, 0, 0]
        vol = det / (2.0 if self.d == 2 else 1.0)
        if np.any(vol <= 0):
            raise ValueError("mesh has nonpositive cell volumes")
        return vol

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def to_physical(self, cell_ids: np.ndarray, ref: np.ndarray) -> np.ndarray:
        j = self.jacobian(cell_ids)
        return self.cell_origin(cell_ids) + np.einsum("cij,cj->ci", j, ref)

    def locate(self, points: np.ndarray, periodic: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Cell ids and reference coordinates of points in the closed domain."""
        p = np.asarray(points, dtype=float).reshape(-1, self.d)
        if periodic:
            p = p - np.floor(p)
        s = p * self.n
        ij = np.clip(np.floor(s).astype(np.int64), 0, self.n - 1)
        loc = s - ij
        if self.d == 1:
            return ij[:, 0], loc
        k = ij[:, 0] + self.n * ij[:, 1]
        lower = loc[:, 1] <= loc[:, 0]
        cell = 2 * k + (~lower)
        ref = np.where(lower[:, None], np.stack([loc[:, 0] - loc[:, 1], loc[:, 1]], axis=1),
                       np.stack([loc[:, 0], loc[:, 1] - loc[:, 0]], axis=1))
        return cell, ref

    def side_mask(self, points: np.ndarray, side: str, tol: float = 1e-12) -> np.ndarray:
        c = {"left": (0, 0.0), "right": (0, 1.0), "bottom": (1, 0.0), "top": (1, 1.0)}[side]
        if c[0] >= self.d:
            return np.zeros(len(points), dtype=bool)
        return np.abs(points[:, c[0]] - c[1]) < tol


# ---------------------------------------------------------------------------
# reference Lagrange elements

def _bary(xi: np.ndarray) -> np.ndarray:
    return np.concatenate([1.0 - xi.sum(axis=1, keepdims=True), xi], axis=1)


class LagrangeElement:
    def __init__(self, d: int, order: int):
        self.d, self.order = d, order
        if order == 0:
            self.ref_nodes = np.full((1, d), 1.0 / (d + 1))
        elif d == 1:
            self.ref_nodes = np.array([[0.0], [1.0]] + ([[0.5]] if order == 2 else []))
        elif order == 1:
            self.ref_nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        elif order == 2:
            self.ref_nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
                                       [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
        else:
            raise ValueError("element order must be 0, 1 or 2")
        self.n_local = len(self.ref_nodes)
        # edges (vertex pairs) of the P2 edge nodes, ordered as ref_nodes
        self._edges = [(0, 1)] if d == 1 else [(0, 1), (1, 2), (0, 2)]

    def values(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        if self.order == 0:
            return np.ones((len(xi), 1))
        lam = _bary(xi)
        if self.order == 1:
            return lam
        out = [lam[:, k] * (2 * lam[:, k] - 1) for k in range(self.d + 1)]
        out += [4 * lam[:, a] * lam[:, b] for a, b in self._edges]
        return np.stack(out, axis=1)

    def gradients(self, xi: np.ndarray) -> np.ndarray:
        """Reference gradients (nq, n_local, d)."""
        xi = np.atleast_2d(xi)
        nq = len(xi)
        if self.order == 0:
            return np.zeros((nq, 1, self.d))
        lam = _bary(xi)
        dlam = np.vstack([-np.ones((1, self.d)), np.eye(self.d)])  # (d+1, d)
        if self.order == 1:
            return np.broadcast_to(dlam, (nq, self.d + 1, self.d)).copy()
        out = [(4 * lam[:, k] - 1)[:, None] * dlam[k] for k in range(self.d + 1)]
        out += [4 * (lam[:, a][:, None] * dlam[b] + lam[:, b][:, None] * dlam[a]) for a, b in self._edges]
        return np.stack(out, axis=1)


# ---------------------------------------------------------------------------
# spaces

ARITY = ("scalar", "vector", "sym")


class FeSpace:
    """Lagrange space of order 0, 1 or 2 with scalar, vector or symmetric
    tensor values.  Dofs are numbered node-major: dof = node * ncomp + comp.

    ``dirichlet`` lists the sides carrying homogeneous Dirichlet data
    ("left", "right", "bottom", "top"); the shorthands "all" and "none"
    are accepted.  With ``periodic`` set, nodes on opposite faces are
    identified and the space carries mean-value constraint rows.
    """

    def __init__(self, mesh: Mesh, order: int = 1, arity: str = "vector",
                 dirichlet="none", periodic: bool = False):
        if arity not in ARITY:
            raise ValueError(f"arity must be one of {ARITY}")
        self.mesh = mesh
        self.order = order
        self.arity = arity
        self.periodic = periodic
        self.element = LagrangeElement(mesh.d, order)
        d = mesh.d
        self.ncomp = {"scalar": 1, "vector": d, "sym": nsym(d)}[arity]
        if isinstance(dirichlet, str):
            dirichlet = {"all": SIDES, "none": (), "left": ("left",)}.get(dirichlet, tuple(dirichlet.split("+")))
        self.dirichlet = tuple(s for s in dirichlet if s in SIDES[: 2 * d])
        if periodic and self.dirichlet:
            raise ValueError("periodic spaces carry no Dirichlet sides")
        self._build_nodes()

    def _build_nodes(self):
        m = self.mesh
        d = m.d
        if self.order == 0:
            self.cell_nodes = np.arange(m.n_cells)[:, None]
            self.node_coords = m.centroids()
            self.n_nodes = m.n_cells
            self.boundary_nodes = np.zeros(self.n_nodes, dtype=bool)
            return
        p = self.order
        r = p * m.n
        ref = self.element.ref_nodes
        # lattice coordinates of each local node of each cell
        jac = m.jacobian()
        org = m.cell_origin()
        phys = org[:, None, :] + np.einsum("cij,kj->cki", jac, ref)
        lat = np.rint(phys * r).astype(np.int64)
        if self.periodic:
            lat = lat % r
            mult = r ** np.arange(d)
            self.n_nodes = r ** d
            axis = np.arange(r)
        else:
            mult = (r + 1) ** np.arange(d)
            self.n_nodes = (r + 1) ** d
            axis = np.arange(r + 1)
        self.cell_nodes = (lat * mult).sum(axis=2)
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        coords = np.stack([g.ravel(order="F") for g in grids], axis=1) / r
        # np.meshgrid with ij + Fortran ravel gives first coordinate fastest
        self.node_coords = coords
        self.lattice_size = r

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.ncomp

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        c = self.ncomp
        return (self.cell_nodes[:, :, None] * c + np.arange(c)).reshape(len(self.cell_nodes), -1)

    @cached_property
    def constrained_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        if self.order > 0:
            for s in self.dirichlet:
                mask |= self.mesh.side_mask(self.node_coords, s)
        return np.repeat(mask, self.ncomp)

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained_mask)

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_dofs if u_free.ndim == 1 else (self.n_dofs,) + u_free.shape[1:])
        out[self.free_dofs] = u_free
        return out

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.free_dofs]

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of a callable f(points) -> (n,) or (n, ncomp)."""
        vals = np.asarray(f(self.node_coords), dtype=float).reshape(self.n_nodes, self.ncomp)
        out = vals.ravel().copy()
        out[self.constrained_mask] = 0.0
        return out

    def nodal_values(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).reshape(self.n_nodes, self.ncomp)

    def _locate(self, points):
        return self.mesh.locate(points, periodic=self.periodic)

    def evaluate(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Values (np, ncomp) at arbitrary points."""
        cell, ref = self._locate(points)
        u = np.asarray(u).reshape(self.n_nodes, self.ncomp)
        if self.order == 0:
            return u[cell]
        phi = self.element.values(ref)
        return np.einsum("pa,pac->pc", phi, u[self.cell_nodes[cell]])

    def gradient(self, u: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Gradients (np, ncomp, d) at arbitrary points (cellwise, from the containing cell)."""
        cell, ref = self._locate(points)
        u = np.asarray(u).reshape(self.n_nodes, self.ncomp)
        if self.order == 0:
            return np.zeros((len(cell), self.ncomp, self.mesh.d))
        dref = self.element.gradients(ref)
        jinv = np.linalg.inv(self.mesh.jacobian(cell))
        dphys = np.einsum("pak,pkj->paj", dref, jinv)
        return np.einsum("paj,pac->pcj", dphys, u[self.cell_nodes[cell]])

    def mean_constraint(self, cell_chunk: int = 200000):
        """Sparse matrix (ncomp, n_dofs) with rows v -> int v_c dx."""
        import scipy.sparse as sp
        from .quadrature import simplex_rule
        pts, w = simplex_rule(self.mesh.d, max(self.order, 1))
        phi = self.element.values(pts)
        loc = (w[:, None] * phi).sum(axis=0)  # reference integrals of basis
        vol = self.mesh.cell_volume * (2.0 if self.mesh.d == 2 else 1.0)
        vals = np.zeros(self.n_nodes)
        np.add.at(vals, self.cell_nodes.ravel(), (vol[:, None] * loc[None, :]).ravel())
        rows, cols, data = [], [], []
        for c in range(self.ncomp):
            rows.append(np.full(self.n_nodes, c))
            cols.append(np.arange(self.n_nodes) * self.ncomp + c)
            data.append(vals)
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.ncomp, self.n_dofs))

    def export_csv(self, u: np.ndarray, path) -> None:
        vals = self.nodal_values(u)
        names = ["x", "y"][: self.mesh.d] + [f"u{c}" for c in range(self.ncomp)]
        data = np.hstack([self.node_coords, vals])
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(names) + "\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    def __repr__(self) -> str:
        kind = "periodic " if self.periodic else ""
        return (f"FeSpace({kind}P{self.order} {self.arity}, n={self.mesh.n}, d={self.mesh.d}, "
                f"dofs={self.n_dofs}, dirichlet={self.dirichlet})")


def PeriodicFeSpace(n: int, order: int = 1, arity: str = "vector", d: int = 2) -> FeSpace:
    """Periodic space on the unit cell with mean-value constraint rows."""
    return FeSpace(Mesh(n, d), order, arity, periodic=True)


class FeField:
    """A discrete field: a space plus coefficients on all of its dofs."""

    def __init__(self, space: FeSpace, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got {values.shape}")
        self.space = space
        self.values = values

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.space.evaluate(self.values, points)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return self.space.gradient(self.values, points)

    def strain(self, points: np.ndarray) -> np.ndarray:
        """Mandel strain (np, nsym) of a vector field."""
        from .linalg import mandel_strain
        return mandel_strain(self.gradient(points))

    def norms(self, tensor_at=None, **kw):
        from .linalg import norms
        return norms(self.space, self.values, tensor_at, **kw)

    def __sub__(self, other: "FeField") -> "FeField":
        return FeField(self.space, self.values - other.values)

    def __repr__(self) -> str:
        return f"FeField({self.space!r})"


def recovered_strain(field: FeField) -> FeField:
    """Continuous strain field: cellwise strains at the Lagrange nodes,
    averaged over the cells sharing each node (Clement-type recovery)."""
    from .linalg import mandel_strain
    sp_ = field.space
    if sp_.arity != "vector":
        raise ValueError("strain recovery needs a vector field")
    target = FeSpace(sp_.mesh, max(sp_.order, 1), "sym", "none", sp_.periodic)
    el = sp_.element
    ref = target.element.ref_nodes
    dref = el.gradients(ref)                                    # (nn, nloc, d)
    jinv = np.linalg.inv(sp_.mesh.jacobian())
    u = field.values.reshape(sp_.n_nodes, sp_.ncomp)[sp_.cell_nodes]  # (nc, nloc, d)
    grads = np.einsum("nak,ckj,cai->cnij", dref, jinv, u)        # (nc, nn, d, d)
    eps = mandel_strain(grads)                                   # (nc, nn, k)
    k = eps.shape[-1]
    acc = np.zeros((target.n_nodes, k))
    cnt = np.zeros(target.n_nodes)
    np.add.at(acc, target.cell_nodes.ravel(), eps.reshape(-1, k))
    np.add.at(cnt, target.cell_nodes.ravel(), 1.0)
    return FeField(target, (acc / cnt[:, None]).ravel())
