"""Quadrature on the reference triangle and on edges."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["QuadratureRule", "quadrature_rule", "edge_rule", "MAX_DEGREE"]

MAX_DEGREE = 12


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights summing to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit(a, b, c):
    return {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}


# fully symmetric rules with positive weights and interior points
# (Strang-Fix / Dunavant), weights normalised to area 1
_TABLES = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322)],
    5: [((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827)],
    6: [((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374)],
    8: [((1 / 3, 1 / 3, 1 / 3), 0.144315607677787),
        ((0.081414823414554, 0.459292588292723, 0.459292588292723), 0.095091634267285),
        ((0.658861384496480, 0.170569307751760, 0.170569307751760), 0.103217370534718),
        ((0.898905543365938, 0.050547228317031, 0.050547228317031), 0.032458497623198),
        ((0.008394777409958, 0.263112829634638, 0.728492392955404), 0.027230314174435)],
}


def _from_table(entries):
    pts, wts = [], []
    for gen, w in entries:
        orbit = sorted(_orbit(*gen))
        for p in orbit:
            pts.append(p)
            wts.append(w)
    pts = np.array(pts, dtype=float)
    pts /= pts.sum(axis=1, keepdims=True)
    return pts, 0.5 * np.array(wts)


def _collapsed_gauss(degree):
    """Symmetrised conical product rule, exact for total degree ``degree``."""
    m = degree // 2 + 1
    # Gauss-Jacobi in the collapsed direction absorbs the Duffy Jacobian (1 - u)
    u, wu = roots_jacobi(m, 1.0, 0.0)
    v, wv = roots_jacobi(m, 0.0, 0.0)
    u = 0.5 * (u + 1.0)
    wu = wu / 4.0
    v = 0.5 * (v + 1.0)
    wv = wv / 2.0
    acc = {}
    for ui, wui in zip(u, wu):
        for vi, wvi in zip(v, wv):
            x, y = ui, vi * (1.0 - ui)
            orbit = _orbit(1.0 - x - y, x, y)
            for p in orbit:
                key = tuple(np.round(p, 14))
                entry = acc.setdefault(key, [np.array(p), 0.0])
                entry[1] += wui * wvi / len(orbit)
    keys = sorted(acc)
    pts = np.array([acc[k][0] for k in keys])
    wts = np.array([acc[k][1] for k in keys])
    return pts, wts


@functools.lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Symmetric positive rule on the reference triangle, exact up to ``degree``."""
    degree = int(degree)
    if degree < 1:
        degree = 1
    if degree > MAX_DEGREE:
        raise ValueError(f"quadrature degree {degree} exceeds {MAX_DEGREE}")
    degree_used = {3: 4, 7: 8}.get(degree, degree)
    if degree_used in _TABLES:
        pts, wts = _from_table(_TABLES[degree_used])
    else:
        pts, wts = _collapsed_gauss(degree_used)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree)


@functools.lru_cache(maxsize=None)
def edge_rule(degree: int):
    """Gauss-Legendre on [0, 1]: (parameters, weights) with weights summing to 1."""
    n = max(1, int(degree) // 2 + 1)
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w
