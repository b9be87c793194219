"""Continuous Lagrange spaces of order 1-5 on triangle meshes."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import OUTFLOW, INFLOW, Mesh
from .problem import Coefficients

__all__ = [
    "FunctionSpace",
    "FEFunction",
    "build_space",
    "lagrange_nodes",
    "lagrange_basis",
    "eval_basis",
    "interpolate",
    "apply_adjoint_to_basis",
]


@functools.lru_cache(maxsize=None)
def lagrange_nodes(k: int) -> np.ndarray:
    """Barycentric multi-indices of the local nodes, shape ``(nloc, 3)``.

    Order: vertices, then edge nodes of (v0,v1), (v1,v2), (v2,v0) walking
    from the first vertex to the second, then interior nodes.
    """
    nodes = [(k, 0, 0), (0, k, 0), (0, 0, k)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for m in range(1, k):
            idx = [0, 0, 0]
            idx[a] = k - m
            idx[b] = m
            nodes.append(tuple(idx))
    for i in range(1, k):
        for j in range(1, k - i):
            nodes.append((k - i - j, i, j))
    out = np.array(nodes, dtype=np.int64)
    out.setflags(write=False)
    return out


def _factor(k, n, t):
    """prod_{m<n} (k t - m) / (m + 1) and its t-derivative."""
    val = np.ones_like(t)
    der = np.zeros_like(t)
    for m in range(n):
        f = (k * t - m) / (m + 1)
        der = der * f + val * (k / (m + 1))
        val = val * f
    return val, der


def lagrange_basis(k: int, bary: np.ndarray):
    """Values ``(..., nloc)`` and barycentric derivatives ``(..., nloc, 3)``."""
    bary = np.asarray(bary, dtype=float)
    nodes = lagrange_nodes(k)
    vals = np.empty(bary.shape[:-1] + (len(nodes),))
    ders = np.empty(bary.shape[:-1] + (len(nodes), 3))
    cache = {}
    for a in range(3):
        for n in range(k + 1):
            cache[a, n] = _factor(k, n, bary[..., a])
    for i, node in enumerate(nodes):
        f = [cache[a, node[a]] for a in range(3)]
        vals[..., i] = f[0][0] * f[1][0] * f[2][0]
        ders[..., i, 0] = f[0][1] * f[1][0] * f[2][0]
        ders[..., i, 1] = f[0][0] * f[1][1] * f[2][0]
        ders[..., i, 2] = f[0][0] * f[1][0] * f[2][1]
    return vals, ders


def _lead(arr, nel, nlead):
    """Insert singleton axes after the element axes so ``arr`` has ``nlead`` leading axes."""
    shape = arr.shape
    return arr.reshape(shape[:nel] + (1,) * (nlead - nel) + shape[nel:])


@dataclass(eq=False)
class FunctionSpace:
    """Lagrange space of order ``order`` on ``mesh``.

    Dofs are numbered vertices first, then edges, then cell interiors.
    ``free`` maps full dof numbers to reduced numbers (``-1`` for a
    constrained dof); ``dim`` counts the free ones.
    """

    mesh: Mesh
    order: int
    element_dofs: np.ndarray
    dof_coords: np.ndarray
    constrained: np.ndarray
    free: np.ndarray
    constrain_outflow: bool = False
    constrain_inflow: bool = False

    @property
    def ndofs(self) -> int:
        return len(self.dof_coords)

    @property
    def dim(self) -> int:
        return self.ndofs - len(self.constrained)

    @property
    def nloc(self) -> int:
        return self.element_dofs.shape[1]

    @cached_property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.free >= 0)

    def expand(self, coefficients) -> np.ndarray:
        """Full dof vector with constrained entries set to zero."""
        full = np.zeros(self.ndofs)
        full[self.free_dofs] = coefficients
        return full

    def restrict(self, full) -> np.ndarray:
        return np.asarray(full)[self.free_dofs]

    def physical_gradients(self, elements, dbary) -> np.ndarray:
        """Map barycentric derivatives ``(*E, *Q, nloc, 3)`` to physical gradients."""
        elements = np.asarray(elements)
        g = _lead(self.mesh.bary_gradients[elements], elements.ndim, dbary.ndim - 2)
        return np.einsum("...ia,...ad->...id", dbary, g)


def build_space(mesh: Mesh, order: int, constrain_outflow: bool = False,
                constrain_inflow: bool = False) -> FunctionSpace:
    """Continuous Lagrange space; optional zero trace on the closed outflow (or inflow) boundary."""
    if not 1 <= order <= 5:
        raise ValueError("order must be between 1 and 5")
    k = order
    nodes = lagrange_nodes(k)
    nloc = len(nodes)
    tri = mesh.triangles
    te = mesh.triangle_edges
    edges = mesh.edges
    nv, ne, nt = mesh.nv, len(edges), mesh.nt
    nedge = k - 1
    nint = nloc - 3 - 3 * nedge

    dofs = np.empty((nt, nloc), dtype=np.int64)
    dofs[:, :3] = tri
    col = 3
    for loc, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        eid = te[:, loc]
        forward = tri[:, a] < tri[:, b]
        for m in range(1, k):
            pos = np.where(forward, m - 1, k - 1 - m)
            dofs[:, col] = nv + eid * nedge + pos
            col += 1
    if nint:
        dofs[:, col:] = nv + ne * nedge + np.arange(nt)[:, None] * nint + np.arange(nint)
    ndofs = nv + ne * nedge + nt * nint

    coords = np.empty((ndofs, 2))
    pts = mesh.to_physical(np.arange(nt)[:, None], np.broadcast_to(nodes / k, (nt, nloc, 3)))
    coords[dofs.ravel()] = pts.reshape(-1, 2)

    mask = np.zeros(ndofs, dtype=bool)
    for flag, label in ((constrain_outflow, OUTFLOW), (constrain_inflow, INFLOW)):
        if not flag:
            continue
        sel = mesh.boundary_labels == label
        owner, local = mesh.boundary_edge_elements
        for el, loc in zip(owner[sel], local[sel]):
            a, b = ((0, 1), (1, 2), (2, 0))[loc]
            mask[dofs[el, [a, b]]] = True
            mask[dofs[el, 3 + loc * nedge: 3 + (loc + 1) * nedge]] = True
    constrained = np.flatnonzero(mask)
    free = np.full(ndofs, -1, dtype=np.int64)
    free[~mask] = np.arange(ndofs - len(constrained))
    for arr in (dofs, coords, constrained, free):
        arr.setflags(write=False)
    return FunctionSpace(mesh, k, dofs, coords, constrained, free,
                         constrain_outflow, constrain_inflow)


def eval_basis(space: FunctionSpace, triangle, bary):
    """Basis values ``(..., nloc)`` and physical gradients ``(..., nloc, 2)``."""
    vals, ders = lagrange_basis(space.order, bary)
    return vals, space.physical_gradients(triangle, ders)


def apply_adjoint_to_basis(space: FunctionSpace, coeffs: Coefficients, triangle, bary):
    """``-b . grad(psi_i) + sigma psi_i`` for each local basis function."""
    vals, grads = eval_basis(space, triangle, bary)
    triangle = np.asarray(triangle)
    sigma = _lead(coeffs.sigma_for_tags(space.mesh.inside[triangle]), triangle.ndim, vals.ndim - 1)
    return -grads @ coeffs.b + sigma[..., None] * vals


@dataclass(eq=False)
class FEFunction:
    """Finite element function; constrained dofs are implicitly zero."""

    space: FunctionSpace
    coefficients: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @cached_property
    def full(self) -> np.ndarray:
        return self.space.expand(self.coefficients)

    def evaluate(self, elements, bary) -> np.ndarray:
        """Values at barycentric points; ``elements`` broadcasts against ``bary[..., 0]``."""
        vals, _ = lagrange_basis(self.space.order, bary)
        elements = np.asarray(elements)
        local = _lead(self.full[self.space.element_dofs[elements]], elements.ndim, vals.ndim - 1)
        return np.sum(vals * local, axis=-1)

    def evaluate_gradient(self, elements, bary) -> np.ndarray:
        _, ders = lagrange_basis(self.space.order, bary)
        elements = np.asarray(elements)
        grads = self.space.physical_gradients(elements, ders)
        local = _lead(self.full[self.space.element_dofs[elements]], elements.ndim, ders.ndim - 2)
        return np.einsum("...i,...id->...d", local, grads)

    def __call__(self, points) -> np.ndarray:
        from .mesh import locate
        points = np.asarray(points, dtype=float)
        el, lam = locate(self.mesh, points.reshape(-1, 2))
        vals, _ = lagrange_basis(self.space.order, lam)
        local = self.full[self.space.element_dofs[el]]
        return np.sum(vals * local, axis=-1).reshape(points.shape[:-1])


def interpolate(space: FunctionSpace, f) -> FEFunction:
    """Nodal interpolant of ``f``; constrained dofs are zero."""
    values = np.asarray(f(space.dof_coords), dtype=float)
    values = np.broadcast_to(values, (space.ndofs,))
    return FEFunction(space, space.restrict(values).copy())
