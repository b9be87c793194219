import numpy as np
import pytest

from llstar import assembly
from llstar.analysis import l2_error, schur_dense
from llstar.mesh import INFLOW, OUTFLOW, Mesh
from llstar.methods import (DerivedFunction, MethodKind, SingularSystemError, build_problem,
                            solve, solve_llstar, solve_llstar_inverse, solve_single_stage,
                            solve_two_stage)
from llstar.problem import Coefficients
from llstar.space import build_space
from conftest import mesh, problem

ALL = list(MethodKind)


def dense_parts(p):
    H = p.H.toarray()
    L = p.L.toarray()
    M = p.M.toarray()
    A = schur_dense(p.L, p.H)
    f = L.T @ np.linalg.solve(H, p.rhs)
    return H, L, M, A, f


def test_parse_aliases():
    assert MethodKind.parse("LL*") is MethodKind.LLSTAR
    assert MethodKind.parse("two-stage") is MethodKind.TWO_STAGE
    assert MethodKind.parse("ss") is MethodKind.SINGLE_STAGE
    assert MethodKind.parse("llstar_inverse") is MethodKind.LLSTAR_INVERSE
    with pytest.raises(ValueError):
        MethodKind.parse("galerkin")


def test_zero_rhs_gives_zero():
    p = problem(4)
    zero = np.zeros_like(p.rhs)
    assert not solve_llstar(p.H, zero).z.any()
    assert not solve_two_stage(p.H, p.L, p.M, zero).u_coeffs.any()
    ss = solve_single_stage(p.H, p.L, p.M, zero)
    assert not ss.u_coeffs.any() and not ss.z.any()
    for path in ("block", "schur"):
        assert not solve_llstar_inverse(p.H, p.L, zero, path, M=p.M).u_coeffs.any()


def test_solution_fields_match_kind():
    p = problem(4)
    for kind in ALL:
        sol = solve(p, kind)
        assert (sol.u is None) == (kind is MethodKind.LLSTAR)
        assert (sol.z is None) == (kind is MethodKind.TWO_STAGE)
        assert sol.approximation is not None
        assert sol.report.residual_history


def test_llstar_residual_and_best_approximation():
    p = problem(4)
    sol = solve(p, MethodKind.LLSTAR)
    assert np.abs(p.H @ sol.z - p.rhs).max() <= 1e-10 * np.abs(p.rhs).max()
    best = l2_error(sol.derived_u, p.coeffs)
    rng = np.random.default_rng(0)
    for _ in range(20):
        dz = rng.standard_normal(len(sol.z)) * 1e-2 * np.abs(sol.z).max()
        other = DerivedFunction(p.z_space, p.coeffs, sol.z + dz)
        assert best <= l2_error(other, p.coeffs) + 1e-12


def test_two_stage_is_mass_projection_of_llstar():
    p = problem(4)
    z = solve(p, MethodKind.LLSTAR).z
    ref = np.linalg.solve(p.M.toarray(), p.L.T @ z)
    u = solve(p, MethodKind.TWO_STAGE).u_coeffs
    assert np.abs(u - ref).max() <= 1e-10 * np.abs(ref).max()


def _one_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    return Mesh(v, np.array([[0, 1, 2]]), edges, np.array([INFLOW, OUTFLOW, INFLOW]),
                np.array([False]))


def test_two_stage_reproduces_llstar_when_trial_space_contains_it():
    m = _one_triangle()
    c = Coefficients(sigma_in=2.0, sigma_out=2.0)
    p = build_problem(c, m, 2, 2)
    assert p.z_space.dim == 3
    ll = solve(p, MethodKind.LLSTAR).derived_u
    ts = solve(p, MethodKind.TWO_STAGE).u
    lam = np.random.default_rng(1).dirichlet([1, 1, 1], size=20)
    pts = m.to_physical(np.zeros(20, dtype=int), lam)
    assert np.abs(ll(pts) - ts(pts)).max() < 1e-10


def test_single_stage_tends_to_two_stage():
    p = problem(8)
    ts = solve(p, MethodKind.TWO_STAGE).u_coeffs
    ss = solve(p, MethodKind.SINGLE_STAGE, omega=1e6, tol=1e-13).u_coeffs
    d = ss - ts
    assert np.sqrt(d @ (p.M @ d)) <= 1e-4 * np.sqrt(ts @ (p.M @ ts))


def test_single_stage_rejects_bad_omega():
    p = problem(4)
    for w in (0.0, -1.0, np.inf):
        with pytest.raises(ValueError):
            solve_single_stage(p.H, p.L, p.M, p.rhs, omega=w)


def test_inverse_matches_dense_and_paths_agree():
    p = problem(4)
    _, _, _, A, f = dense_parts(p)
    ref = np.linalg.solve(A, f)
    block = solve(p, MethodKind.LLSTAR_INVERSE, tol=1e-12).u_coeffs
    schur = solve(p, MethodKind.LLSTAR_INVERSE, solver="schur", tol=1e-12).u_coeffs
    assert np.linalg.norm(block - ref) <= 1e-8 * np.linalg.norm(ref)
    assert np.linalg.norm(schur - block) <= 1e-6 * np.linalg.norm(block)
    assert np.abs(A @ block - f).max() <= 1e-8


def test_inverse_refuses_singular_configuration():
    p = problem(4, order_u=2, order_z=1)
    with pytest.raises(SingularSystemError):
        solve(p, MethodKind.LLSTAR_INVERSE)


def test_methods_minimize_their_functionals():
    p = problem(4)
    H, L, M, A, f = dense_parts(p)
    omega = 1.0
    s = (omega + 1) / omega
    funcs = {
        MethodKind.LLSTAR_INVERSE: lambda v: v @ A @ v - 2 * v @ f,
        MethodKind.TWO_STAGE: lambda v: v @ M @ v - 2 * v @ f,
        MethodKind.SINGLE_STAGE: lambda v: v @ A @ v - 2 * v @ f + s * (v @ M @ v - v @ A @ v),
    }
    rng = np.random.default_rng(2)
    for kind, J in funcs.items():
        u = solve(p, kind, omega=omega, tol=1e-12).u_coeffs
        j0 = J(u)
        for _ in range(200):
            du = rng.standard_normal(len(u)) * 1e-3
            assert j0 <= J(u + du) + 1e-12
    z = solve(p, MethodKind.LLSTAR).z
    J = lambda w: w @ H @ w - 2 * w @ p.rhs  # noqa: E731
    for _ in range(200):
        assert J(z) <= J(z + rng.standard_normal(len(z)) * 1e-3) + 1e-12


def test_derived_function_cell_values_match_pointwise():
    p = problem(4, z_refinements=1)
    sol = solve(p, MethodKind.LLSTAR)
    fine = p.z_space.mesh
    lam = np.random.default_rng(3).dirichlet([1, 1, 1], size=(fine.nt, 2))
    pts = fine.to_physical(np.arange(fine.nt)[:, None], lam)
    cells = sol.derived_u.cell_values(fine, np.arange(fine.nt), pts)
    assert np.abs(cells - sol.derived_u(pts)).max() < 1e-9


def test_strong_boundary_mode_adds_lifting():
    c = problem(8).coeffs
    weak = build_problem(c, mesh(8), 1, 2, bc="weak")
    strong = build_problem(c, mesh(8), 1, 2, bc="strong")
    assert strong.lift is not None and weak.lift is None
    pts = np.array([[0.0, 0.3], [0.6, 0.0]])
    u = solve(strong, MethodKind.TWO_STAGE).u
    assert u(pts) == pytest.approx(solve(weak, MethodKind.TWO_STAGE).u(pts), abs=0.2)
    with pytest.raises(ValueError):
        build_problem(c, mesh(8), 1, 2, bc="mixed")


def test_cross_mesh_problem_shapes():
    p = problem(4, order_u=1, order_z=1, z_refinements=1)
    assert p.L.shape == (p.z_space.dim, p.u_space.dim)
    assert p.z_space.dim > p.u_space.dim
    assembly.assemble_L(p.u_space, build_space(p.z_space.mesh, 1, constrain_outflow=True),
                        p.coeffs)
