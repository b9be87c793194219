import numpy as np
import pytest
import scipy.sparse as sp

from llstar import assembly
from llstar.mesh import INFLOW, Mesh, uniform_refine
from llstar.problem import Coefficients, model_problem
from llstar.space import build_space, interpolate
from conftest import mesh
from oracles import dense_cross_matrix, dense_load, dense_mass


def spaces(n=4, ku=1, kz=2, refine=0):
    u = build_space(mesh(n), ku)
    zm = mesh(n, refinements=refine)
    return u, build_space(zm, kz, constrain_outflow=True)


def test_L_matches_dense_oracle():
    u, z = spaces(8, 1, 2)
    c = model_problem(1e4)
    L = assembly.assemble_L(u, z, c)
    assert L.shape == (z.dim, u.dim)
    ref = dense_cross_matrix(u, z, c, 3)
    assert np.abs(L.toarray() - ref).max() <= 1e-13 * np.abs(ref).max()


def test_L_without_absorption_is_pure_advection():
    u, z = spaces(4, 1, 1)
    c = Coefficients(sigma_in=0.0, sigma_out=0.0)
    L = assembly.assemble_L(u, z, c).toarray()
    # single element, linear psi: the entry is -<phi_j, b.grad psi_i> with constant gradient
    m = u.mesh
    grads = m.bary_gradients
    area = m.signed_areas
    expect = np.zeros((z.ndofs, u.ndofs))
    for e, tri in enumerate(m.triangles):
        for a in range(3):
            for b in range(3):
                expect[tri[a], tri[b]] -= (grads[e, a] @ c.b) * area[e] / 3
    assert np.allclose(L, expect[np.ix_(z.free_dofs, u.free_dofs)], atol=1e-14)


def test_L_row_sums_with_absorption():
    u, z = spaces(4, 1, 2)
    c = model_problem(7.0, 7.0)
    rows = assembly.assemble_L(u, z, c) @ np.ones(u.dim)
    mass_part = 7.0 * assembly.assemble_rhs_strong(z, lambda p: np.ones(p.shape[:-1]))
    still = Coefficients(sigma_in=0.0, sigma_out=0.0)
    adv = assembly.assemble_L(u, z, still) @ np.ones(u.dim)
    assert np.allclose(rows, mass_part + adv, atol=1e-13)


def test_H_symmetric_positive_definite():
    _, z = spaces(8, 1, 2)
    c = model_problem(10.0)
    H = assembly.assemble_H(z, c, validate=True)
    assert assembly.is_symmetric(H)
    assert np.linalg.eigvalsh(H.toarray()).min() > 0
    assert np.all(H.diagonal() > 0)


def test_H_rejects_unconstrained_space():
    from llstar.linalg import NotSPDError
    z = build_space(mesh(4), 1)
    with pytest.raises(NotSPDError):
        assembly.assemble_H(z, model_problem(0.0, 0.0), validate=True)


def test_mass_matrix():
    u = build_space(mesh(4), 2)
    M = assembly.assemble_mass(u)
    assert M.sum() == pytest.approx(1.0, abs=1e-13)
    assert (M != M.T).nnz == 0
    np.linalg.cholesky(M.toarray())
    x = np.random.default_rng(0).standard_normal(u.dim)
    ref = dense_mass(u, 6)
    assert x @ (M @ x) == pytest.approx(x @ ref @ x, rel=1e-12)


def test_single_triangle_mass():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = Mesh(v, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]),
             np.array([INFLOW, 1, INFLOW]), np.array([False]))
    M = assembly.assemble_mass(build_space(m, 1)).toarray()
    area = 0.5
    assert np.allclose(np.diag(M), area / 6)
    assert np.allclose(M[~np.eye(3, dtype=bool)], area / 12)


def test_weak_rhs_examples():
    _, z = spaces(4, 1, 1)
    zero = Coefficients(g=0.0)
    assert np.all(assembly.assemble_rhs_weak(z, zero) == 0)
    c = model_problem()
    rhs = assembly.assemble_rhs_weak(z, c)
    assert np.all(np.isfinite(rhs)) and np.all(rhs >= 0)
    # analytic P1 edge integrals: each inflow edge gives -(b.n)|e|/2 to both ends
    m = z.mesh
    expect = np.zeros(z.ndofs)
    for (a, b), lab in zip(m.boundary_edges, m.boundary_labels):
        if lab != INFLOW:
            continue
        e = m.vertices[b] - m.vertices[a]
        n = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        share = -(n @ c.b) * np.linalg.norm(e) / 2
        expect[[a, b]] += share
    assert np.allclose(rhs, z.restrict(expect), atol=1e-15)
    assert rhs.sum() == pytest.approx(expect[z.free_dofs].sum(), abs=1e-14)
    full = build_space(m, 2)
    total = assembly.assemble_rhs_weak(full, c).sum()
    assert total == pytest.approx(np.cos(c.alpha) + np.sin(c.alpha), abs=1e-14)


def test_strong_rhs_examples():
    _, z = spaces(4, 1, 2)
    assert np.all(assembly.assemble_rhs_strong(z, lambda p: np.zeros(p.shape[:-1])) == 0)
    full = build_space(mesh(4), 2)
    ones = assembly.assemble_rhs_strong(full, lambda p: np.ones(p.shape[:-1]))
    assert ones.sum() == pytest.approx(1.0, abs=1e-14)
    coef = np.random.default_rng(2).standard_normal(6)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return np.tensordot(coef, np.stack([np.ones_like(x), x, y, x * x, x * y, y * y]), 1)

    got = assembly.assemble_rhs_strong(z, f)
    assert np.abs(got - dense_load(z, f, 4)).max() < 1e-12


@pytest.mark.parametrize("ku,kz", [(1, 2), (2, 3)])
def test_adjoint_consistency(ku, kz):
    m = mesh(4)
    u = build_space(m, ku, constrain_inflow=True)
    z = build_space(m, kz, constrain_outflow=True)
    c = model_problem(1e4)
    L = assembly.assemble_L(u, z, c)
    P = assembly.assemble_primal_L(u, z, c)
    assert np.abs((L - P).toarray()).max() <= 1e-12 * np.abs(L.toarray()).max()


def test_cross_mesh_matches_refined_interpolation():
    coarse = mesh(4)
    fine = uniform_refine(coarse)
    u = build_space(coarse, 1)
    u_fine = build_space(fine, 1)
    z = build_space(fine, 2, constrain_outflow=True)
    c = model_problem(10.0)
    L_cross = assembly.assemble_L(u, z, c).toarray()
    L_fine = assembly.assemble_L(u_fine, z, c)
    # columns of the prolongation are interpolants of coarse basis functions
    P = np.column_stack([
        interpolate(u_fine, lambda p, j=j: _basis(u, j)(p)).coefficients for j in range(u.dim)])
    assert np.abs(L_cross - L_fine @ P).max() <= 1e-12 * np.abs(L_cross).max()


def _basis(space, j):
    from llstar.space import FEFunction
    e = np.zeros(space.dim)
    e[j] = 1.0
    return FEFunction(space, e)


def test_cross_mesh_rejects_unrelated_meshes():
    u = build_space(mesh(4), 1)
    z = build_space(mesh(8), 1, constrain_outflow=True)
    with pytest.raises(ValueError):
        assembly.assemble_L(u, z, model_problem())


def test_null_space_relation():
    # L v = 0 exactly when v is L2-orthogonal to L*(Z); compare ranks of L and A
    u, z = spaces(4, 2, 1)
    c = model_problem(1e4)
    L = assembly.assemble_L(u, z, c).toarray()
    H = assembly.assemble_H(z, c).toarray()
    A = L.T @ np.linalg.solve(H, L)
    assert np.linalg.matrix_rank(L) == np.linalg.matrix_rank(A)
    assert np.linalg.matrix_rank(L) <= z.dim < u.dim


def test_lifting_and_strong_rhs():
    u, z = spaces(4, 1, 2)
    c = model_problem(10.0)
    rhs, lift = assembly.lifted_rhs(u, z, c)
    inflow = build_space(u.mesh, 1, constrain_inflow=True)
    assert np.all(lift.full[inflow.constrained] == 1.0)
    assert np.count_nonzero(lift.full) == len(inflow.constrained)
    assert rhs.shape == (z.dim,)


def test_write_coo(tmp_path):
    A = sp.csr_matrix(np.array([[1.0, 0.0], [2.5, -3.0]]))
    assembly.write_coo(A, tmp_path / "a.txt")
    assert (tmp_path / "a.txt").read_text().splitlines() == ["1 1 1.0", "2 1 2.5", "2 2 -3.0"]
