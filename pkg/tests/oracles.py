"""Independent reference computations used only by the tests."""
from __future__ import annotations

import math

import numpy as np

from llstar.quadrature import quadrature_rule

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def box_sigma(points, sigma_in, sigma_out, box=((0.25, 0.75), (0.25, 0.75))):
    (x0, x1), (y0, y1) = box
    x, y = points[..., 0], points[..., 1]
    inside = (x > x0) & (x < x1) & (y > y0) & (y < y1)
    return np.where(inside, sigma_in, sigma_out)


def backward_exit(points, b):
    """Distance travelled against ``b`` until the unit square is left."""
    s = np.full(len(points), np.inf)
    for d in range(2):
        if b[d] > 0:
            s = np.minimum(s, points[:, d] / b[d])
        elif b[d] < 0:
            s = np.minimum(s, (points[:, d] - 1.0) / b[d])
    return s


def ode_transport(points, alpha, sigma_in, sigma_out, g=1.0, rtol=1e-13, atol=1e-14):
    """Integrate ``d psi/dt = -sigma psi`` from the inflow foot to each point.

    Works with ``y = log psi`` so that absorption of order 1e4 is not stiff.
    Steps are clipped at the parameters where the ray crosses one of the
    four interface lines, so no step straddles a jump of ``sigma``.
    """
    points = np.asarray(points, dtype=float)
    b = np.array([math.cos(alpha), math.sin(alpha)])
    S = backward_exit(points, b)
    foot = points - S[:, None] * b

    def rhs(idx, t):
        x = foot[idx] + t[:, None] * b
        return -box_sigma(x, sigma_in, sigma_out)

    n = len(points)
    breaks = [S]
    for d in range(2):
        if b[d] != 0:
            for level in (0.25, 0.75):
                tc = (level - foot[:, d]) / b[d]
                breaks.append(np.where((tc > 0) & (tc < S), tc, S))
    breaks = np.sort(np.stack(breaks, axis=1), axis=1)
    t = np.zeros(n)
    y = np.zeros(n)
    h = np.minimum(S, 0.01)
    h = np.where(h > 0, h, 1.0)
    active = S > 0
    for _ in range(200000):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        ti = t[idx]
        nxt = breaks[idx]
        nxt = np.where(nxt > ti[:, None] * (1 + 1e-15) + 1e-300, nxt, np.inf).min(axis=1)
        hh = np.minimum(h[idx], nxt - ti)
        landing = h[idx] >= nxt - ti
        k = np.empty((7, len(idx)))
        for s in range(7):
            k[s] = rhs(idx, t[idx] + _C[s] * hh)
            # y does not enter the right-hand side, so stage values are not needed
        y5 = y[idx] + hh * (_B5 @ k)
        err = np.abs(hh * ((_B5 - _B4) @ k))
        scale = atol + rtol * np.maximum(np.abs(y[idx]), np.abs(y5))
        ratio = err / scale
        ok = ratio <= 1.0
        acc = idx[ok]
        t[acc] = np.where(landing[ok], nxt[ok], t[acc] + hh[ok])
        y[acc] = y5[ok]
        factor = np.where(ratio == 0, 5.0, np.clip(0.9 * ratio ** -0.2, 0.1, 5.0))
        h[idx] = np.maximum(hh * factor, 1e-300)
        active[acc] = t[acc] < S[acc]
    else:
        raise RuntimeError("ODE oracle did not finish")
    return g * np.exp(y)


def dense_cross_matrix(u_space, z_space, coeffs, degree):
    """``<phi_j, L* psi_i>`` by explicit per-element loops on a shared mesh."""
    from llstar.space import apply_adjoint_to_basis, eval_basis
    mesh = z_space.mesh
    rule = quadrature_rule(degree)
    full = np.zeros((z_space.ndofs, u_space.ndofs))
    for e in range(mesh.nt):
        area = abs(mesh.signed_areas[e])
        for q in range(len(rule)):
            lam = rule.points[q]
            w = 2.0 * area * rule.weights[q]
            phi, _ = eval_basis(u_space, e, lam)
            lpsi = apply_adjoint_to_basis(z_space, coeffs, e, lam)
            full[np.ix_(z_space.element_dofs[e], u_space.element_dofs[e])] += w * np.outer(lpsi, phi)
    return full[np.ix_(z_space.free_dofs, u_space.free_dofs)]


def dense_mass(space, degree):
    from llstar.space import eval_basis
    mesh = space.mesh
    rule = quadrature_rule(degree)
    full = np.zeros((space.ndofs, space.ndofs))
    for e in range(mesh.nt):
        area = abs(mesh.signed_areas[e])
        for q in range(len(rule)):
            phi, _ = eval_basis(space, e, rule.points[q])
            d = space.element_dofs[e]
            full[np.ix_(d, d)] += 2.0 * area * rule.weights[q] * np.outer(phi, phi)
    return full[np.ix_(space.free_dofs, space.free_dofs)]


def dense_load(space, f, degree):
    from llstar.space import eval_basis
    mesh = space.mesh
    rule = quadrature_rule(degree)
    full = np.zeros(space.ndofs)
    for e in range(mesh.nt):
        area = abs(mesh.signed_areas[e])
        for q in range(len(rule)):
            phi, _ = eval_basis(space, e, rule.points[q])
            x = mesh.to_physical(e, rule.points[q])
            full[space.element_dofs[e]] += 2.0 * area * rule.weights[q] * f(x) * phi
    return full[space.free_dofs]


def monomial_integral(a, b):
    """Integral of ``x^a y^b`` over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
