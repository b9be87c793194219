"""Sparse assembly of the least-squares matrices and right-hand sides.

Row index ``i`` runs over the test space Z (basis ``psi_i``), column
index ``j`` over the trial space U (basis ``phi_j``):

* ``L[i, j] = <phi_j, L* psi_i>``
* ``H[i, j] = <L* psi_j, L* psi_i>``
* ``M[i, j] = <phi_j, phi_i>``

Cross-mesh assembly loops over the Z mesh, which must equal the U mesh or
be a uniform refinement of it, so every integrand is polynomial per cell.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .problem import Coefficients
from .quadrature import edge_rule, quadrature_rule
from .space import FEFunction, FunctionSpace, lagrange_basis

__all__ = [
    "assemble_L",
    "assemble_primal_L",
    "assemble_H",
    "assemble_mass",
    "assemble_rhs_weak",
    "assemble_rhs_strong",
    "inflow_lifting",
    "lifted_rhs",
    "is_symmetric",
    "write_coo",
]

_CHUNK_ENTRIES = 3_000_000


def _chunks(n, per_element):
    size = max(1, _CHUNK_ENTRIES // max(1, per_element))
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


def _restrict(full, rows: FunctionSpace, cols: FunctionSpace):
    out = full.tocsr()[rows.free_dofs][:, cols.free_dofs]
    out.sort_indices()
    return out


def _to_csr(rows, cols, vals, shape):
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _symmetric_part(A):
    # duplicate summation order differs between (i, j) and (j, i); average to make A == A.T bitwise
    out = (0.5 * (A + A.T)).tocsr()
    out.sort_indices()
    return out


def _weights(mesh, elements, rule):
    return 2.0 * mesh.signed_areas[elements][:, None] * rule.weights[None, :]


def _adjoint_values(z_space, coeffs, elements, rule):
    """``L* psi_i`` at the rule's points on each element, shape (E, Q, nZ)."""
    vals, ders = lagrange_basis(z_space.order, rule.points)
    grads = np.einsum("qia,ead->eqid", ders, z_space.mesh.bary_gradients[elements])
    sigma = coeffs.sigma_for_tags(z_space.mesh.inside[elements])
    return -grads @ coeffs.b + sigma[:, None, None] * vals[None]


def _trial_on_fine(u_space, z_mesh, elements, rule, with_gradients=False):
    """U basis on fine elements: (values (E,Q,nU), gradients or None, U element ids)."""
    if z_mesh is u_space.mesh:
        parents = elements
        vals, ders = lagrange_basis(u_space.order, rule.points)
        vals = np.broadcast_to(vals, (len(elements),) + vals.shape)
        ders = np.broadcast_to(ders, (len(elements),) + ders.shape)
    else:
        parents = z_mesh.ancestor_map(u_space.mesh)[elements]
        x = z_mesh.to_physical(elements[:, None], rule.points[None])
        lam = u_space.mesh.to_bary(parents, x)
        vals, ders = lagrange_basis(u_space.order, lam)
    grads = None
    if with_gradients:
        grads = np.einsum("eqia,ead->eqid", ders, u_space.mesh.bary_gradients[parents])
    return vals, grads, parents


def _check_nested(u_space, z_space):
    if z_space.mesh.depth_to(u_space.mesh) is None:
        raise ValueError("Z mesh must equal the U mesh or be a uniform refinement of it")


def _assemble_cross_full(u_space, z_space, coeffs, primal=False):
    _check_nested(u_space, z_space)
    zmesh = z_space.mesh
    rule = quadrature_rule(u_space.order + z_space.order)
    rows, cols, vals = [], [], []
    nz, nu = z_space.nloc, u_space.nloc
    for el in _chunks(zmesh.nt, len(rule) * (nz + nu) * 3):
        w = _weights(zmesh, el, rule)
        phi, dphi, parents = _trial_on_fine(u_space, zmesh, el, rule, with_gradients=primal)
        if primal:
            psi, _ = lagrange_basis(z_space.order, rule.points)
            sigma = coeffs.sigma_for_tags(zmesh.inside[el])
            trial = dphi @ coeffs.b + sigma[:, None, None] * phi
            local = np.einsum("eq,eqj,qi->eij", w, trial, psi)
        else:
            test = _adjoint_values(z_space, coeffs, el, rule)
            local = np.einsum("eq,eqj,eqi->eij", w, phi, test)
        r = z_space.element_dofs[el]
        c = u_space.element_dofs[parents]
        rows.append(np.repeat(r, nu, axis=1).ravel())
        cols.append(np.tile(c, (1, nz)).ravel())
        vals.append(local.ravel())
    return _to_csr(rows, cols, vals, (z_space.ndofs, u_space.ndofs))


def assemble_L(u_space: FunctionSpace, z_space: FunctionSpace, coeffs: Coefficients):
    """``L[i, j] = <phi_j, L* psi_i>`` restricted to free dofs, shape (dim Z, dim U)."""
    return _restrict(_assemble_cross_full(u_space, z_space, coeffs), z_space, u_space)


def assemble_primal_L(u_space: FunctionSpace, z_space: FunctionSpace, coeffs: Coefficients,
                      full_columns: bool = False):
    """``<L phi_j, psi_i>`` via the primal action (equals ``L`` on D(L) x D(L*))."""
    full = _assemble_cross_full(u_space, z_space, coeffs, primal=True)
    if full_columns:
        out = full.tocsr()[z_space.free_dofs]
        out.sort_indices()
        return out
    return _restrict(full, z_space, u_space)


def assemble_H(z_space: FunctionSpace, coeffs: Coefficients, validate: bool = False):
    """``H[i, j] = <L* psi_j, L* psi_i>``; ``validate`` factorizes to confirm SPD."""
    mesh = z_space.mesh
    rule = quadrature_rule(2 * z_space.order)
    nz = z_space.nloc
    rows, cols, vals = [], [], []
    for el in _chunks(mesh.nt, len(rule) * nz * 4):
        w = _weights(mesh, el, rule)
        t = _adjoint_values(z_space, coeffs, el, rule)
        local = np.einsum("eq,eqj,eqi->eij", w, t, t)
        d = z_space.element_dofs[el]
        rows.append(np.repeat(d, nz, axis=1).ravel())
        cols.append(np.tile(d, (1, nz)).ravel())
        vals.append(local.ravel())
    H = _symmetric_part(_restrict(_to_csr(rows, cols, vals, (z_space.ndofs,) * 2),
                                  z_space, z_space))
    if validate:
        from .linalg import SPDFactor
        SPDFactor(H)
    return H


def assemble_mass(u_space: FunctionSpace):
    """Mass matrix ``<phi_j, phi_i>`` on free dofs."""
    mesh = u_space.mesh
    rule = quadrature_rule(2 * u_space.order)
    vals_ref, _ = lagrange_basis(u_space.order, rule.points)
    nu = u_space.nloc
    rows, cols, vals = [], [], []
    for el in _chunks(mesh.nt, len(rule) * nu * 2):
        w = _weights(mesh, el, rule)
        local = np.einsum("eq,qj,qi->eij", w, vals_ref, vals_ref)
        d = u_space.element_dofs[el]
        rows.append(np.repeat(d, nu, axis=1).ravel())
        cols.append(np.tile(d, (1, nu)).ravel())
        vals.append(local.ravel())
    return _symmetric_part(_restrict(_to_csr(rows, cols, vals, (u_space.ndofs,) * 2),
                                     u_space, u_space))


def _volume_load(space: FunctionSpace, f, degree):
    mesh = space.mesh
    rule = quadrature_rule(min(degree, 12))
    psi, _ = lagrange_basis(space.order, rule.points)
    out = np.zeros(space.ndofs)
    for el in _chunks(mesh.nt, len(rule) * (space.nloc + 2)):
        w = _weights(mesh, el, rule)
        x = mesh.to_physical(el[:, None], rule.points[None])
        fx = np.broadcast_to(np.asarray(f(x), dtype=float), w.shape)
        local = np.einsum("eq,eq,qi->ei", w, fx, psi)
        np.add.at(out, space.element_dofs[el].ravel(), local.ravel())
    return out


def _inflow_boundary_load(space: FunctionSpace, coeffs: Coefficients):
    """``-int_{inflow} (b.n) g psi_i ds`` for every full dof."""
    from .mesh import INFLOW
    mesh = space.mesh
    sel = mesh.boundary_labels == INFLOW
    owner, local_edge = mesh.boundary_edge_elements
    owner, local_edge = owner[sel], local_edge[sel]
    edges = mesh.boundary_edges[sel]
    degree = space.order + (1 if coeffs.constant_g else 6)
    t, wt = edge_rule(degree)
    pa, pb = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    e = pb - pa
    length = np.linalg.norm(e, axis=1)
    normal = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
    bn = normal @ coeffs.b
    x = pa[:, None, :] + t[None, :, None] * e[:, None, :]
    g = coeffs.inflow_value(x)
    pairs = np.array([[0, 1], [1, 2], [2, 0]])[local_edge]
    # boundary edges run in the owner's counterclockwise direction
    tri = mesh.triangles[owner]
    a_first = tri[np.arange(len(owner)), pairs[:, 0]] == edges[:, 0]
    if not np.all(a_first):
        raise ValueError("boundary edge orientation does not match its triangle")
    lam = np.zeros((len(owner), len(t), 3))
    rows = np.arange(len(owner))[:, None]
    lam[rows, :, pairs[:, 0:1]] = 1.0 - t[None, :]
    lam[rows, :, pairs[:, 1:2]] = t[None, :]
    psi, _ = lagrange_basis(space.order, lam)
    local = np.einsum("q,e,eq,eqi->ei", wt, -bn * length, g, psi)
    out = np.zeros(space.ndofs)
    np.add.at(out, space.element_dofs[owner].ravel(), local.ravel())
    return out


def assemble_rhs_weak(z_space: FunctionSpace, coeffs: Coefficients) -> np.ndarray:
    """``<r, psi_i> - int_{inflow} (b g).n psi_i ds`` on free Z dofs."""
    out = _inflow_boundary_load(z_space, coeffs)
    if coeffs.r is not None:
        out += _volume_load(z_space, coeffs.source, z_space.order + 6)
    return z_space.restrict(out)


def assemble_rhs_strong(z_space: FunctionSpace, f, degree: int | None = None) -> np.ndarray:
    """Volume load ``<f, psi_i>`` on free Z dofs."""
    if degree is None:
        degree = z_space.order + 6
    return z_space.restrict(_volume_load(z_space, f, degree))


def inflow_lifting(u_space: FunctionSpace, coeffs: Coefficients) -> FEFunction:
    """U-space function equal to the interpolant of ``g`` at closed-inflow nodes, zero elsewhere.

    The function lives on the unconstrained companion of ``u_space``.
    """
    from .space import build_space
    full_space = build_space(u_space.mesh, u_space.order)
    inflow_space = build_space(u_space.mesh, u_space.order, constrain_inflow=True)
    values = np.zeros(full_space.ndofs)
    nodes = inflow_space.constrained
    values[nodes] = coeffs.inflow_value(full_space.dof_coords[nodes])
    return FEFunction(full_space, values)


def lifted_rhs(u_space: FunctionSpace, z_space: FunctionSpace, coeffs: Coefficients):
    """Strong-BC data: ``(<r - L G, psi_i>, G)`` for the inflow lifting ``G``."""
    lift = inflow_lifting(u_space, coeffs)
    primal = assemble_primal_L(lift.space, z_space, coeffs, full_columns=True)
    rhs = -(primal @ lift.full)
    if coeffs.r is not None:
        rhs = rhs + assemble_rhs_strong(z_space, coeffs.source)
    return rhs, lift


def is_symmetric(A, tol: float = 1e-12) -> bool:
    A = sp.csr_matrix(A)
    scale = abs(A).max()
    if scale == 0:
        return True
    diff = A - A.T
    return (abs(diff).max() if diff.nnz else 0.0) <= tol * scale


def write_coo(A, path) -> None:
    """Write ``row col value`` lines with 1-based indices."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
