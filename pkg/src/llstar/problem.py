"""Advection-reaction model problem: coefficients, operator actions, exact solution.

The model is ``b . grad(psi) + sigma psi = r`` in the unit square with
``psi = g`` on the inflow boundary.  ``b`` is a constant unit vector and
``sigma`` is piecewise constant, ``sigma_in`` inside the square
``omega_in`` and ``sigma_out`` elsewhere.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "Coefficients",
    "OperatorSide",
    "model_problem",
    "sigma_at",
    "exact_solution",
    "apply_operator",
    "characteristic_foot",
]

Source = Optional[Callable[[np.ndarray], np.ndarray]]


class OperatorSide(enum.Enum):
    PRIMAL = "primal"
    ADJOINT = "adjoint"


@dataclass(frozen=True)
class Coefficients:
    """Data of the advection-reaction problem.

    Parameters
    ----------
    alpha : float
        Flow angle; the flow field is ``b = (cos alpha, sin alpha)``.
    sigma_in, sigma_out : float
        Absorption inside and outside ``omega_in``.
    omega_in : tuple
        ``((x0, x1), (y0, y1))`` bounds of the inner rectangle.
    r : callable or None
        Source term evaluated on an ``(..., 2)`` array of points.
        ``None`` means ``r = 0``.
    g : float or callable
        Inflow boundary datum.
    """

    alpha: float = 3.0 * math.pi / 16.0
    sigma_in: float = 1.0e4
    sigma_out: float = 1.0e-4
    omega_in: tuple = ((0.25, 0.75), (0.25, 0.75))
    r: Source = None
    g: Union[float, Callable[[np.ndarray], np.ndarray]] = 1.0
    b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma_in < 0 or self.sigma_out < 0:
            raise ValueError("absorption coefficients must be nonnegative")
        b = np.array([math.cos(self.alpha), math.sin(self.alpha)])
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    def sigma_for_tags(self, inside: np.ndarray) -> np.ndarray:
        """Per-element absorption from boolean "inside omega_in" tags."""
        return np.where(np.asarray(inside, dtype=bool), self.sigma_in, self.sigma_out)

    def source(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.r is None:
            return np.zeros(points.shape[:-1])
        return np.broadcast_to(self.r(points), points.shape[:-1]).astype(float)

    def inflow_value(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if callable(self.g):
            return np.broadcast_to(self.g(points), points.shape[:-1]).astype(float)
        return np.full(points.shape[:-1], float(self.g))

    @property
    def constant_g(self) -> bool:
        return not callable(self.g)

    def replace(self, **changes) -> "Coefficients":
        kwargs = dict(alpha=self.alpha, sigma_in=self.sigma_in, sigma_out=self.sigma_out,
                      omega_in=self.omega_in, r=self.r, g=self.g)
        kwargs.update(changes)
        return Coefficients(**kwargs)


def model_problem(sigma_in: float = 1.0e4, sigma_out: float = 1.0e-4,
                  alpha: float = 3.0 * math.pi / 16.0) -> Coefficients:
    """The two-region test configuration with ``r = 0`` and ``g = 1``."""
    return Coefficients(alpha=alpha, sigma_in=sigma_in, sigma_out=sigma_out)


def _inside(coeffs: Coefficients, points: np.ndarray) -> np.ndarray:
    (x0, x1), (y0, y1) = coeffs.omega_in
    x = points[..., 0]
    y = points[..., 1]
    return (x > x0) & (x < x1) & (y > y0) & (y < y1)


def sigma_at(coeffs: Coefficients, points) -> np.ndarray:
    """Absorption at points; points on the interface get ``sigma_out``."""
    points = np.asarray(points, dtype=float)
    return np.where(_inside(coeffs, points), coeffs.sigma_in, coeffs.sigma_out)


def apply_operator(side: OperatorSide, coeffs: Coefficients, value, gradient, point):
    """``b.grad + sigma`` (primal) or ``-b.grad + sigma`` (adjoint) from point data."""
    gradient = np.asarray(gradient, dtype=float)
    advect = gradient @ coeffs.b
    react = sigma_at(coeffs, point) * np.asarray(value, dtype=float)
    if side is OperatorSide.PRIMAL:
        return advect + react
    return -advect + react


def characteristic_foot(b: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Backward travel distance from each point to the boundary of the unit square."""
    points = np.asarray(points, dtype=float)
    s = np.full(points.shape[:-1], np.inf)
    for d in range(2):
        if b[d] > 0:
            s = np.minimum(s, points[..., d] / b[d])
        elif b[d] < 0:
            s = np.minimum(s, (points[..., d] - 1.0) / b[d])
    return np.maximum(s, 0.0)


def _chord_in_box(points, b, s_exit, box):
    """Length of ``{x - s b : 0 <= s <= s_exit}`` inside ``box`` (slab clipping)."""
    lo = np.zeros_like(s_exit)
    hi = s_exit.copy()
    for d in range(2):
        a0, a1 = box[d]
        p = points[..., d]
        if b[d] == 0.0:
            outside = (p <= a0) | (p >= a1)
            hi = np.where(outside, -np.inf, hi)
            continue
        # x_d(s) = p - s b_d lies in (a0, a1)
        t0 = (p - a1) / b[d]
        t1 = (p - a0) / b[d]
        lo = np.maximum(lo, np.minimum(t0, t1))
        hi = np.minimum(hi, np.maximum(t0, t1))
    return np.maximum(hi - lo, 0.0)


def exact_solution(coeffs: Coefficients, points) -> np.ndarray:
    """Exact solution of the model problem by characteristic path lengths.

    Only valid for ``r = 0`` and constant ``g``.  The value is
    ``g exp(-sigma_out l_out - sigma_in l_in)`` where ``l_in`` and ``l_out``
    are the lengths of the backward characteristic inside and outside
    ``omega_in``.
    """
    if coeffs.r is not None:
        raise ValueError("exact solution is only available for r = 0")
    if not coeffs.constant_g:
        raise ValueError("exact solution is only available for constant g")
    points = np.asarray(points, dtype=float)
    s_exit = characteristic_foot(coeffs.b, points)
    l_in = _chord_in_box(points, coeffs.b, s_exit, coeffs.omega_in)
    l_out = s_exit - l_in
    return float(coeffs.g) * np.exp(-coeffs.sigma_out * l_out - coeffs.sigma_in * l_in)
