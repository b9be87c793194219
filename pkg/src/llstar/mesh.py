"""Conforming triangulations of the unit square resolving the inner rectangle."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Mesh",
    "INFLOW",
    "OUTFLOW",
    "generate_square_mesh",
    "uniform_refine",
    "locate",
    "write_mesh",
    "read_mesh",
]

INFLOW = 0
OUTFLOW = 1
_LABEL_NAMES = {INFLOW: "Inflow", OUTFLOW: "Outflow"}
_TAG_NAMES = {True: "In", False: "Out"}

DEFAULT_B = np.array([math.cos(3 * math.pi / 16), math.sin(3 * math.pi / 16)])
OMEGA_IN = ((0.25, 0.75), (0.25, 0.75))


@dataclass(eq=False)
class Mesh:
    """Triangle mesh of the unit square.

    ``inside`` marks triangles in the inner rectangle.  ``boundary_labels``
    holds INFLOW/OUTFLOW per boundary edge.  A refined mesh keeps the
    ``coarse`` mesh and the ``parent`` triangle of each child.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    inside: np.ndarray
    coarse: Optional["Mesh"] = None
    parent: Optional[np.ndarray] = None
    jitter: float = 0.0

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "boundary_labels", "inside"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(nt, 2, 2) affine map columns ``[p1 - p0, p2 - p0]``."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def bary_gradients(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the barycentric coordinates."""
        g12 = self.inverse_jacobians  # rows: grad lambda_1, grad lambda_2
        g0 = -g12.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g12], axis=1)

    @cached_property
    def _edge_data(self):
        local = np.array([[0, 1], [1, 2], [2, 0]])
        all_edges = self.triangles[:, local].reshape(-1, 2)
        key = np.sort(all_edges, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """(nt, 3) edge index of local edges (v0,v1), (v1,v2), (v2,v0)."""
        return self._edge_data[1]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices[self.edges]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    @property
    def h(self) -> float:
        return float(self.edge_lengths.max())

    @cached_property
    def boundary_edge_elements(self):
        """Owning triangle and local edge number for each boundary edge."""
        key = np.sort(self.boundary_edges, axis=1)
        lookup = {tuple(e): i for i, e in enumerate(self.edges)}
        edge_ids = np.array([lookup[tuple(k)] for k in key])
        owner = np.full(len(self.edges), -1)
        owner_local = np.full(len(self.edges), -1)
        te = self.triangle_edges
        for loc in range(3):
            owner[te[:, loc]] = np.arange(self.nt)
            owner_local[te[:, loc]] = loc
        return owner[edge_ids], owner_local[edge_ids]

    def depth_to(self, other: "Mesh") -> Optional[int]:
        """Number of uniform refinements from ``other`` to this mesh, or None."""
        mesh, depth = self, 0
        while mesh is not None:
            if mesh is other:
                return depth
            mesh, depth = mesh.coarse, depth + 1
        return None

    def ancestor_map(self, other: "Mesh") -> np.ndarray:
        """Triangle of ``other`` containing each triangle of this mesh."""
        depth = self.depth_to(other)
        if depth is None:
            raise ValueError("meshes are not nested")
        idx = np.arange(self.nt)
        mesh = self
        for _ in range(depth):
            idx = mesh.parent[idx]
            mesh = mesh.coarse
        return idx

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def to_physical(self, elements, bary) -> np.ndarray:
        """Map barycentric points ``(..., 3)`` on ``elements`` to physical points."""
        p = self.vertices[self.triangles[elements]]  # (..., 3, 2)
        return (np.asarray(bary, dtype=float)[..., None, :] @ p)[..., 0, :]

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    def to_bary(self, elements, points) -> np.ndarray:
        """Barycentric coordinates of physical points in the given triangles.

        ``points`` is ``(E, 2)`` (one point per element) or ``(E, Q, 2)``.
        """
        elements = np.asarray(elements)
        points = np.asarray(points, dtype=float)
        p0 = self.vertices[self.triangles[elements, 0]]
        inv = self.inverse_jacobians[elements]
        if points.ndim == p0.ndim + 1:
            lam12 = (points - p0[:, None, :]) @ np.swapaxes(inv, 1, 2)
        else:
            lam12 = np.einsum("...ij,...j->...i", inv, points - p0)
        lam0 = 1.0 - lam12.sum(axis=-1, keepdims=True)
        return np.concatenate([lam0, lam12], axis=-1)


def _label_edges(vertices, edges, b):
    a, c = vertices[edges[:, 0]], vertices[edges[:, 1]]
    mid = 0.5 * (a + c)
    normals = np.zeros_like(mid)
    tol = 1e-12
    normals[np.abs(mid[:, 0]) < tol] = (-1.0, 0.0)
    normals[np.abs(mid[:, 0] - 1.0) < tol] = (1.0, 0.0)
    normals[np.abs(mid[:, 1]) < tol] = (0.0, -1.0)
    normals[np.abs(mid[:, 1] - 1.0) < tol] = (0.0, 1.0)
    bn = normals @ np.asarray(b, dtype=float)
    if np.any(np.abs(bn) < 1e-14):
        raise ValueError("flow field is tangential to part of the boundary")
    return np.where(bn < 0, INFLOW, OUTFLOW)


def _in_omega_in(points):
    (x0, x1), (y0, y1) = OMEGA_IN
    return (points[..., 0] > x0) & (points[..., 0] < x1) & \
        (points[..., 1] > y0) & (points[..., 1] < y1)


def _on_interface(points, tol=1e-12):
    (x0, x1), (y0, y1) = OMEGA_IN
    x, y = points[:, 0], points[:, 1]
    in_y = (y >= y0 - tol) & (y <= y1 + tol)
    in_x = (x >= x0 - tol) & (x <= x1 + tol)
    vert = ((np.abs(x - x0) < tol) | (np.abs(x - x1) < tol)) & in_y
    horiz = ((np.abs(y - y0) < tol) | (np.abs(y - y1) < tol)) & in_x
    return vert | horiz


def generate_square_mesh(n: int, jitter: float = 0.2, b=None, seed: int = 0) -> Mesh:
    """Jittered structured mesh of the unit square with alternating diagonals.

    Interior vertices off the inner-rectangle boundary are moved by
    ``jitter / n`` in a pseudo-random direction drawn from ``seed``.
    """
    if n < 4 or n % 4:
        raise ValueError("n must be a positive multiple of 4")
    if not 0.0 <= jitter < 0.3:
        raise ValueError("jitter must lie in [0, 0.3)")
    b = DEFAULT_B if b is None else np.asarray(b, dtype=float)

    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    base = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    I, J = I.ravel(), J.ravel()
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    even = (I + J) % 2 == 0
    t1 = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    triangles = np.empty((2 * len(I), 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2

    boundary = (base[:, 0] == 0) | (base[:, 0] == 1) | (base[:, 1] == 0) | (base[:, 1] == 1)
    movable = ~boundary & ~_on_interface(base)
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=len(base))
    direction = np.column_stack([np.cos(theta), np.sin(theta)])

    k = np.arange(n)
    bedges = np.concatenate([
        np.column_stack([vid(k, 0), vid(k + 1, 0)]),          # south
        np.column_stack([vid(n, k), vid(n, k + 1)]),          # east
        np.column_stack([vid(k + 1, n), vid(k, n)]),          # north
        np.column_stack([vid(0, k + 1), vid(0, k)]),          # west
    ])
    labels = _label_edges(base, bedges, b)

    amount = jitter
    for _ in range(2):
        vertices = base + (amount / n) * direction * movable[:, None]
        mesh = Mesh(vertices, triangles.copy(), bedges.copy(), labels.copy(),
                    _in_omega_in(vertices[triangles].mean(axis=1)), jitter=amount)
        if np.all(mesh.signed_areas > 0):
            return mesh
        amount *= 0.5
    raise ValueError("jitter produced inverted triangles")


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints."""
    edges = mesh.edges
    te = mesh.triangle_edges
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.concatenate([mesh.vertices, mids])
    m = mesh.nv + te  # midpoint vertex ids of (v0v1, v1v2, v2v0)
    t = mesh.triangles
    children = np.stack([
        np.column_stack([t[:, 0], m[:, 0], m[:, 2]]),
        np.column_stack([m[:, 0], t[:, 1], m[:, 1]]),
        np.column_stack([m[:, 2], m[:, 1], t[:, 2]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.nt), 4)

    lookup = {tuple(e): i for i, e in enumerate(edges)}
    bmid = mesh.nv + np.array([lookup[tuple(sorted(e))] for e in mesh.boundary_edges])
    be = mesh.boundary_edges
    bedges = np.stack([np.column_stack([be[:, 0], bmid]),
                       np.column_stack([bmid, be[:, 1]])], axis=1).reshape(-1, 2)
    blabels = np.repeat(mesh.boundary_labels, 2)
    return Mesh(vertices, children, bedges, blabels, mesh.inside[parent].copy(),
                coarse=mesh, parent=parent, jitter=mesh.jitter)


def locate(mesh: Mesh, points, tol: float = 1e-12):
    """Containing triangle (lowest index on ties) and barycentric coordinates."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(points < -tol) or np.any(points > 1 + tol):
        raise ValueError("point outside the unit square")
    tree = _centroid_tree(mesh)
    k = min(16, mesh.nt)
    _, cand = tree.query(points, k=k)
    cand = np.sort(cand.reshape(len(points), k), axis=1)
    found = np.full(len(points), -1)
    bary = np.zeros((len(points), 3))
    for col in range(k):
        todo = found < 0
        if not np.any(todo):
            break
        el = cand[todo, col]
        lam = mesh.to_bary(el, points[todo])
        ok = np.all(lam >= -tol, axis=1)
        idx = np.flatnonzero(todo)[ok]
        found[idx] = el[ok]
        bary[idx] = lam[ok]
    for i in np.flatnonzero(found < 0):
        lam = mesh.to_bary(np.arange(mesh.nt), np.broadcast_to(points[i], (mesh.nt, 2)))
        hits = np.flatnonzero(np.all(lam >= -tol, axis=1))
        if not len(hits):
            raise ValueError(f"point {points[i]} not found in mesh")
        found[i] = hits[0]
        bary[i] = lam[hits[0]]
    return found, bary


_TREES: dict = {}


def _centroid_tree(mesh):
    tree = _TREES.get(id(mesh))
    if tree is None or tree[0] is not mesh:
        tree = (mesh, cKDTree(mesh.centroids()))
        _TREES[id(mesh)] = tree
    return tree[1]


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh: header ``nv nt nb``, vertices, triangles with tag, edges with label."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.nv} {mesh.nt} {len(mesh.boundary_edges)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for tri, ins in zip(mesh.triangles, mesh.inside):
            fh.write(f"{tri[0]} {tri[1]} {tri[2]} {_TAG_NAMES[bool(ins)]}\n")
        for e, lab in zip(mesh.boundary_edges, mesh.boundary_labels):
            fh.write(f"{e[0]} {e[1]} {_LABEL_NAMES[int(lab)]}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    nv, nt, nb = (int(x) for x in lines[0])
    verts = np.array([[float(a), float(b)] for a, b in lines[1:1 + nv]])
    tri_lines = lines[1 + nv:1 + nv + nt]
    tris = np.array([[int(x) for x in ln[:3]] for ln in tri_lines], dtype=np.int64)
    inside = np.array([ln[3] == "In" for ln in tri_lines])
    edge_lines = lines[1 + nv + nt:1 + nv + nt + nb]
    bedges = np.array([[int(x) for x in ln[:2]] for ln in edge_lines], dtype=np.int64)
    names = {v: k for k, v in _LABEL_NAMES.items()}
    labels = np.array([names[ln[2]] for ln in edge_lines])
    return Mesh(verts, tris, bedges, labels, inside)
