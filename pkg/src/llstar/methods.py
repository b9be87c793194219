"""The four least-squares solution methods and the discrete problem they share."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import assembly
from .linalg import (SolveReport, SPDFactor, block_precond_inv, block_precond_ss, cg, gmres,
                     saddle_matrix, schur_operator, single_stage_matrix)
from .mesh import Mesh
from .problem import Coefficients
from .space import FEFunction, FunctionSpace, build_space, lagrange_basis

__all__ = [
    "MethodKind",
    "MethodSolution",
    "DerivedFunction",
    "SumFunction",
    "DiscreteProblem",
    "build_problem",
    "solve_llstar",
    "solve_two_stage",
    "solve_single_stage",
    "solve_llstar_inverse",
    "solve",
    "SingularSystemError",
]


class SingularSystemError(ValueError):
    """The requested method is singular for the given pair of spaces."""


class MethodKind(enum.Enum):
    LLSTAR = "llstar"
    TWO_STAGE = "two_stage"
    SINGLE_STAGE = "single_stage"
    LLSTAR_INVERSE = "llstar_inverse"

    @classmethod
    def parse(cls, text: str) -> "MethodKind":
        key = text.strip().lower().replace("-", "_").replace("*", "star")
        aliases = {"ll": cls.LLSTAR, "ts": cls.TWO_STAGE, "ss": cls.SINGLE_STAGE,
                   "inv": cls.LLSTAR_INVERSE, "llstarinverse": cls.LLSTAR_INVERSE,
                   "twostage": cls.TWO_STAGE, "singlestage": cls.SINGLE_STAGE}
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def has_u(self) -> bool:
        return self is not MethodKind.LLSTAR


@dataclass
class MethodSolution:
    """Result of one method.

    ``u_coeffs`` holds U-space coefficients (not for LL*), ``z`` holds
    Z-space coefficients (LL*, single-stage, (LL*)^-1).  ``u`` and
    ``derived_u`` are evaluable functions attached when spaces are known.
    """

    kind: MethodKind
    report: SolveReport
    u_coeffs: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    omega: Optional[float] = None
    u: object = None
    derived_u: object = None

    @property
    def approximation(self):
        """The method's approximation of the exact solution."""
        return self.derived_u if self.kind is MethodKind.LLSTAR else self.u


def _direct_report(start, rhs, residual):
    norm0 = float(np.linalg.norm(rhs))
    return SolveReport(0, True, [norm0, float(np.linalg.norm(residual))],
                       time.perf_counter() - start)


def _factor(H, inner):
    return inner if inner is not None else SPDFactor(H)


def solve_llstar(H, rhs, inner=None) -> MethodSolution:
    """``H z = rhs``; the approximation is ``L* z``."""
    start = time.perf_counter()
    inner = _factor(H, inner)
    z = inner.solve(rhs)
    return MethodSolution(MethodKind.LLSTAR, _direct_report(start, rhs, rhs - H @ z), z=z)


def solve_two_stage(H, L, M, rhs, inner=None, tol: float = 1e-12) -> MethodSolution:
    """Mass projection of the LL* solution: ``M u = L^T H^{-1} rhs``."""
    start = time.perf_counter()
    inner = _factor(H, inner)
    f = L.T @ inner.solve(rhs)
    d = 1.0 / M.diagonal()
    u, report = cg(M, f, lambda r: d * r, tol=tol, maxit=max(500, M.shape[0]), norm="true")
    report.elapsed = time.perf_counter() - start
    return MethodSolution(MethodKind.TWO_STAGE, report, u_coeffs=u)


def solve_single_stage(H, L, M, rhs, omega: float = 1.0, inner=None, Z_ss=1.0,
                       tol: float = 1e-10, maxit: int = 500, norm: str = "true"
                       ) -> MethodSolution:
    """Block CG on ``[[(w+1)H, -L], [-L^T, M]] [z; u] = [w rhs; 0]``.

    ``norm`` selects the monitored residual (see :func:`llstar.linalg.cg`).
    """
    if not (np.isfinite(omega) and omega > 0):
        raise ValueError("omega must be finite and positive")
    inner = _factor(H, inner)
    m = H.shape[0]
    system = single_stage_matrix(H, L, M, omega)
    precond = block_precond_ss(inner, L, Z_ss, omega)
    b = np.concatenate([omega * np.asarray(rhs, dtype=float), np.zeros(L.shape[1])])
    x, report = cg(system, b, precond, tol=tol, maxit=maxit, norm=norm)
    return MethodSolution(MethodKind.SINGLE_STAGE, report, u_coeffs=x[m:], z=x[:m], omega=omega)


def solve_llstar_inverse(H, L, rhs, solver: str = "block", inner=None, Z_inv=-1.0, M=None,
                         tol: float = 1e-10, restart: int = 30, maxit: int = 2000,
                         norm: str = "true") -> MethodSolution:
    """Saddle-point solve of ``[[H, L], [L^T, 0]] [z; u] = [rhs; 0]``.

    ``solver="block"`` runs GMRES with the block preconditioner;
    ``solver="schur"`` runs CG on ``L^T H^{-1} L`` preconditioned by the
    mass matrix ``M`` (required for that path).
    """
    m, n = L.shape
    if n > m:
        raise SingularSystemError(f"dim U = {n} exceeds dim Z = {m}; the Schur complement is singular")
    inner = _factor(H, inner)
    rhs = np.asarray(rhs, dtype=float)
    if solver == "block":
        system = saddle_matrix(H, L)
        precond = block_precond_inv(inner, L, Z_inv)
        b = np.concatenate([rhs, np.zeros(n)])
        x, report = gmres(system, b, precond, restart=restart, tol=tol, maxit=maxit)
        return MethodSolution(MethodKind.LLSTAR_INVERSE, report, u_coeffs=x[m:], z=x[:m])
    if solver == "schur":
        if M is None:
            raise ValueError("the Schur path needs the mass matrix")
        f = L.T @ inner.solve(rhs)
        mass = SPDFactor(M)
        u, report = cg(schur_operator(L, inner), f, mass.solve, tol=tol, maxit=maxit, norm=norm)
        z = inner.solve(rhs - L @ u)
        return MethodSolution(MethodKind.LLSTAR_INVERSE, report, u_coeffs=u, z=z)
    raise ValueError(f"unknown solver {solver!r}")


@dataclass(eq=False)
class DerivedFunction:
    """``sum_i z_i L* psi_i``, evaluable pointwise or on cells of a refining mesh."""

    z_space: FunctionSpace
    coeffs: Coefficients
    z: np.ndarray

    @cached_property
    def full(self) -> np.ndarray:
        return self.z_space.expand(self.z)

    @property
    def mesh(self) -> Mesh:
        return self.z_space.mesh

    def _on_own_cells(self, elements, bary):
        vals, ders = lagrange_basis(self.z_space.order, bary)
        # b . grad of each basis function, via barycentric gradients projected on b
        bgrad = self.mesh.bary_gradients[elements] @ self.coeffs.b
        adv = (ders @ bgrad[:, None, :, None])[..., 0]
        sigma = self.coeffs.sigma_for_tags(self.mesh.inside[elements])
        adj = sigma[:, None, None] * vals - adv
        local = self.full[self.z_space.element_dofs[elements]]
        return (adj @ local[:, :, None])[..., 0]

    def cell_values(self, mesh: Mesh, elements, points):
        """Values at physical ``points`` (E, Q, 2) inside ``elements`` of a refinement ``mesh``."""
        elements = np.asarray(elements)
        own = elements if mesh is self.mesh else mesh.ancestor_map(self.mesh)[elements]
        return self._on_own_cells(own, self.mesh.to_bary(own, points))

    def __call__(self, points):
        from .mesh import locate
        points = np.asarray(points, dtype=float)
        el, lam = locate(self.mesh, points.reshape(-1, 2))
        return self._on_own_cells(el, lam[:, None, :])[:, 0].reshape(points.shape[:-1])


@dataclass(eq=False)
class SumFunction:
    """Pointwise sum of evaluable functions (used to add a boundary lifting)."""

    parts: tuple

    @property
    def mesh(self) -> Mesh:
        return max((p.mesh for p in self.parts), key=lambda m: m.nt)

    def cell_values(self, mesh, elements, points):
        from .analysis import cell_values
        return sum(cell_values(p, mesh, elements, points) for p in self.parts)

    def __call__(self, points):
        return sum(p(points) for p in self.parts)


@dataclass(eq=False)
class DiscreteProblem:
    """Spaces, matrices and right-hand side for one discretization level."""

    coeffs: Coefficients
    u_space: FunctionSpace
    z_space: FunctionSpace
    H: sp.csr_matrix
    L: sp.csr_matrix
    M: sp.csr_matrix
    rhs: np.ndarray
    bc: str = "weak"
    lift: Optional[FEFunction] = None
    timings: dict = field(default_factory=dict)

    @cached_property
    def h_factor(self) -> SPDFactor:
        return SPDFactor(self.H)

    @cached_property
    def m_factor(self) -> SPDFactor:
        return SPDFactor(self.M)

    @property
    def dims(self):
        return self.u_space.dim, self.z_space.dim

    def z_block(self, name: str):
        """Inverse of a named Schur-block approximation: ``identity`` or ``mass`` (signed)."""
        if name == "identity":
            return 1.0
        if name == "mass":
            return self.m_factor.solve
        raise ValueError(f"unknown Schur block {name!r}")

    def _finish(self, sol: MethodSolution) -> MethodSolution:
        if sol.z is not None:
            sol.derived_u = DerivedFunction(self.z_space, self.coeffs, sol.z)
            if self.lift is not None:
                sol.derived_u = SumFunction((sol.derived_u, self.lift))
        if sol.u_coeffs is not None:
            sol.u = FEFunction(self.u_space, sol.u_coeffs)
            if self.lift is not None:
                sol.u = SumFunction((sol.u, self.lift))
        return sol


def build_problem(coeffs: Coefficients, u_mesh: Mesh, order_u: int, order_z: int,
                  z_mesh: Optional[Mesh] = None, bc: str = "weak",
                  constrain_inflow: bool = False) -> DiscreteProblem:
    """Assemble everything needed by the four methods.

    ``z_mesh`` defaults to ``u_mesh`` and must otherwise refine it.  With
    ``bc="strong"`` the inflow datum is moved to the right-hand side via an
    interpolant lifting, which is added back to every approximation.
    """
    if bc not in ("weak", "strong"):
        raise ValueError("bc must be 'weak' or 'strong'")
    z_mesh = u_mesh if z_mesh is None else z_mesh
    timings = {}
    t = time.perf_counter()
    u_space = build_space(u_mesh, order_u, constrain_inflow=constrain_inflow)
    z_space = build_space(z_mesh, order_z, constrain_outflow=True)
    H = assembly.assemble_H(z_space, coeffs)
    L = assembly.assemble_L(u_space, z_space, coeffs)
    M = assembly.assemble_mass(u_space)
    lift = None
    if bc == "weak":
        rhs = assembly.assemble_rhs_weak(z_space, coeffs)
    else:
        rhs, lift = assembly.lifted_rhs(u_space, z_space, coeffs)
        if not lift.full.any():
            lift = None
    timings["assembly"] = time.perf_counter() - t
    return DiscreteProblem(coeffs, u_space, z_space, H, L, M, rhs, bc, lift, timings)


def solve(problem: DiscreteProblem, kind: MethodKind, *, omega: float = 1.0,
          tol: float = 1e-10, solver: str = "block", z_block: str = "identity",
          restart: int = 30, maxit: Optional[int] = None, norm: str = "true"
          ) -> MethodSolution:
    """Run ``kind`` on an assembled problem and attach evaluable approximations."""
    p = problem
    inner = p.h_factor
    if kind is MethodKind.LLSTAR:
        sol = solve_llstar(p.H, p.rhs, inner)
    elif kind is MethodKind.TWO_STAGE:
        sol = solve_two_stage(p.H, p.L, p.M, p.rhs, inner)
    elif kind is MethodKind.SINGLE_STAGE:
        zs = p.z_block(z_block)
        sol = solve_single_stage(p.H, p.L, p.M, p.rhs, omega, inner, zs, tol,
                                 maxit if maxit is not None else 500, norm)
    elif kind is MethodKind.LLSTAR_INVERSE:
        zb = p.z_block(z_block)
        z_inv = -1.0 if zb == 1.0 else (lambda x: -zb(x))
        sol = solve_llstar_inverse(p.H, p.L, p.rhs, solver, inner, z_inv, p.M, tol, restart,
                                   maxit if maxit is not None else 2000, norm)
    else:
        raise ValueError(kind)
    return p._finish(sol)
