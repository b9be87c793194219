import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llstar.problem import Coefficients, exact_solution, model_problem
from llstar.space import (FEFunction, apply_adjoint_to_basis, build_space, eval_basis,
                          interpolate, lagrange_basis, lagrange_nodes)
from llstar.analysis import l2_error
from conftest import mesh

simplex = st.tuples(st.floats(0, 1), st.floats(0, 1)).filter(lambda p: p[0] + p[1] <= 1).map(
    lambda p: np.array([1 - p[0] - p[1], p[0], p[1]]))


def test_p1_and_p2_dimensions():
    m = mesh(4)
    assert build_space(m, 1).dim == 25
    assert build_space(m, 2).dim == m.nv + len(m.edges)
    assert build_space(m, 1, constrain_outflow=True).dim == 25 - 9


def test_order_range():
    with pytest.raises(ValueError):
        build_space(mesh(4), 6)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_outflow_closure_constrained(k):
    s = build_space(mesh(4), k, constrain_outflow=True)
    c = s.dof_coords
    on_out = (np.isclose(c[:, 0], 1.0)) | (np.isclose(c[:, 1], 1.0))
    assert set(np.flatnonzero(on_out)) == set(s.constrained)
    assert s.dim == s.ndofs - len(s.constrained)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
@settings(max_examples=10, deadline=None)
@given(lam=simplex)
def test_partition_of_unity(k, lam):
    s = build_space(mesh(4), k)
    vals, grads = eval_basis(s, 3, lam)
    assert vals.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.abs(grads.sum(axis=0)).max() < 1e-11


def test_p3_kronecker():
    nodes = lagrange_nodes(3) / 3.0
    vals, _ = lagrange_basis(3, nodes)
    assert np.abs(vals - np.eye(len(nodes))).max() < 1e-12


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_continuity_across_edges(k):
    m = mesh(4)
    s = build_space(m, k)
    f = FEFunction(s, np.random.default_rng(k).standard_normal(s.dim))
    for e in range(len(m.edges)):
        a, b = m.vertices[m.edges[e]]
        p = a + 0.37 * (b - a)
        owners = np.flatnonzero(np.any(m.triangle_edges == e, axis=1))
        values = [f.evaluate(t, m.to_bary(t, p)) for t in owners]
        assert np.ptp(values) < 1e-12


def test_interpolation_examples():
    m = mesh(8)
    s = build_space(m, 1)
    assert np.all(interpolate(s, lambda p: np.ones(len(p))).coefficients == 1.0)
    lin = interpolate(s, lambda p: p[:, 0] + p[:, 1])
    pts = np.random.default_rng(0).random((200, 2))
    assert np.abs(lin(pts) - pts.sum(axis=1)).max() < 1e-14
    c = build_space(m, 2, constrain_outflow=True)
    one = interpolate(c, lambda p: np.ones(len(p)))
    assert np.all(one.full[c.constrained] == 0.0)


def test_lagrange_property():
    s = build_space(mesh(4), 3, constrain_outflow=True)
    f = FEFunction(s, np.random.default_rng(1).standard_normal(s.dim))
    assert np.allclose(f(s.dof_coords[s.free_dofs]), f.coefficients, atol=1e-12)


def test_interpolant_error_decreases():
    c = model_problem(1e4)
    errors = [l2_error(interpolate(build_space(mesh(n), 1), lambda p: exact_solution(c, p)), c)
              for n in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_adjoint_basis_examples():
    m = mesh(4)
    s = build_space(m, 2)
    lam = np.array([0.2, 0.3, 0.5])
    flat = Coefficients(sigma_in=3.0, sigma_out=3.0)
    vals, _ = eval_basis(s, 5, lam)
    assert apply_adjoint_to_basis(s, flat, 5, lam).sum() == pytest.approx(3.0 * vals.sum())
    # gradient orthogonal to b on P1 with no absorption
    p1 = build_space(m, 1)
    still = Coefficients(sigma_in=0.0, sigma_out=0.0)
    grads = eval_basis(p1, 0, lam)[1]
    perp = np.array([-still.b[1], still.b[0]])
    coef = np.linalg.lstsq(grads.T, perp, rcond=None)[0]
    assert abs(apply_adjoint_to_basis(p1, still, 0, lam) @ coef) < 1e-12


def test_adjoint_basis_against_finite_differences():
    m = mesh(8)
    s = build_space(m, 2)
    c = model_problem(10.0)
    rng = np.random.default_rng(3)
    for el in rng.integers(0, m.nt, 5):
        lam = rng.dirichlet([2, 2, 2])
        x = m.to_physical(el, lam)
        got = apply_adjoint_to_basis(s, c, el, lam)
        step = 1e-6
        fwd = eval_basis(s, el, m.to_bary(el, x + step * c.b))[0]
        bwd = eval_basis(s, el, m.to_bary(el, x - step * c.b))[0]
        vals = eval_basis(s, el, lam)[0]
        sigma = c.sigma_in if m.inside[el] else c.sigma_out
        fd = -(fwd - bwd) / (2 * step) + sigma * vals
        assert np.abs(got - fd).max() < 1e-6


def test_coarse_function_on_fine_mesh():
    from llstar.mesh import uniform_refine
    coarse = mesh(4)
    fine = uniform_refine(coarse)
    s = build_space(coarse, 2)
    f = FEFunction(s, np.random.default_rng(0).standard_normal(s.dim))
    cents = fine.centroids()
    direct = f.evaluate(fine.parent, coarse.to_bary(fine.parent, cents))
    assert np.abs(direct - f(cents)).max() < 1e-12
