"""Krylov solvers, the inner SPD solver, block operators and preconditioners."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator, splu

__all__ = [
    "NotSPDError",
    "IndefiniteOperatorError",
    "SolveReport",
    "SPDFactor",
    "IterativeSPDSolver",
    "inner_solve_H",
    "cg",
    "gmres",
    "schur_operator",
    "schur_A_apply",
    "saddle_matrix",
    "single_stage_matrix",
    "block_precond_inv",
    "block_precond_ss",
    "dense_generalized_eig",
]


class NotSPDError(np.linalg.LinAlgError):
    """A symmetric factorization met a non-positive pivot."""


class IndefiniteOperatorError(ArithmeticError):
    """CG found a direction with ``p^T A p <= 0``."""


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


class SPDFactor:
    """Sparse symmetric factorization ``A = P^T L D L^T P`` with a positivity check.

    SuperLU in symmetric mode with a zero pivot threshold keeps the
    diagonal pivots, so the factorization is an ``LDL^T`` in disguise and
    the sign of ``diag(U)`` decides definiteness.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.shape = A.shape
        self.matrix = A
        try:
            self._lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        except RuntimeError as exc:  # exactly singular
            raise NotSPDError(str(exc)) from exc
        lu = self._lu
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotSPDError("factorization needed off-diagonal pivoting")
        pivots = lu.U.diagonal()
        if not np.all(pivots > 0):
            bad = int(np.sum(pivots <= 0))
            raise NotSPDError(f"{bad} non-positive pivot(s) in symmetric factorization")
        self.min_pivot = float(pivots.min()) if len(pivots) else 1.0

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if not rhs.any():
            return np.zeros_like(rhs)
        return self._lu.solve(rhs)

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.solve, rmatvec=self.solve, dtype=float)


class IterativeSPDSolver:
    """Jacobi-preconditioned CG to a tight tolerance; low-memory alternative to :class:`SPDFactor`."""

    def __init__(self, A, tol: float = 1e-12, maxit: int = 20000):
        self.matrix = sp.csr_matrix(A)
        self.shape = self.matrix.shape
        self.tol = tol
        self.maxit = maxit
        d = self.matrix.diagonal()
        if np.any(d <= 0):
            raise NotSPDError("non-positive diagonal entry")
        self._jacobi = 1.0 / d

    def solve(self, rhs):
        x, report = cg(self.matrix, rhs, lambda r: self._jacobi * r, tol=self.tol,
                       maxit=self.maxit, norm="true")
        if not report.converged:
            raise np.linalg.LinAlgError("inner CG did not converge")
        return x

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.solve, rmatvec=self.solve, dtype=float)


_FACTORS: dict = {}


def inner_solve_H(H, rhs):
    """Solve ``H x = rhs`` with a factorization cached per matrix object."""
    key = id(H)
    entry = _FACTORS.get(key)
    if entry is None or entry[0] is not H:
        if len(_FACTORS) > 8:
            _FACTORS.clear()
        entry = (H, SPDFactor(H))
        _FACTORS[key] = entry
    return entry[1].solve(rhs)


def _as_apply(P, n) -> Callable:
    if P is None:
        return lambda r: r
    if callable(P) and not hasattr(P, "shape"):
        return P
    if hasattr(P, "solve") and not sp.issparse(P):
        return P.solve
    return aslinearoperator(P).matvec


def cg(op, rhs, precond=None, tol: float = 1e-6, maxit: int = 500,
       norm: str = "preconditioned"):
    """Preconditioned conjugate gradients from a zero initial guess.

    ``precond`` applies the inverse of the preconditioner (a callable,
    operator or object with ``solve``).  Convergence is declared when the
    chosen residual norm drops below ``tol`` times its initial value:
    ``"preconditioned"`` uses ``||P r||``, ``"true"`` uses ``||r||``.
    """
    start = time.perf_counter()
    A = aslinearoperator(op)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    apply_p = _as_apply(precond, n)
    x = np.zeros(n)
    r = b.copy()
    z = apply_p(r)
    rz = float(r @ z)

    def measure(r, z):
        return float(np.linalg.norm(z if norm == "preconditioned" else r))

    res0 = measure(r, z)
    history = [res0]
    if res0 == 0.0:
        return x, SolveReport(0, True, history, time.perf_counter() - start)
    p = z.copy()
    converged = False
    it = 0
    while it < maxit:
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteOperatorError(f"p^T A p = {pAp:.3e} at iteration {it + 1}")
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = apply_p(r)
        rz_new = float(r @ z)
        it += 1
        history.append(measure(r, z))
        if history[-1] <= tol * res0:
            converged = True
            break
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, SolveReport(it, converged, history, time.perf_counter() - start)


def gmres(op, rhs, precond=None, restart: int = 30, tol: float = 1e-6, maxit: int = 2000,
          side: str = "right"):
    """Restarted GMRES(m) from a zero initial guess.

    ``iterations`` counts Arnoldi steps over all cycles.  With right
    preconditioning the monitored quantity is the true residual norm; with
    ``side="left"`` it is the preconditioned residual ``||P r||``.  The
    stopping test is relative to the initial value of that quantity.
    """
    if side not in ("right", "left"):
        raise ValueError("side must be 'right' or 'left'")
    start = time.perf_counter()
    A = aslinearoperator(op)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    apply_p = _as_apply(precond, n)
    x = np.zeros(n)

    def residual(x):
        r = b - A.matvec(x)
        return apply_p(r) if side == "left" else r

    r = residual(x)
    beta = float(np.linalg.norm(r))
    history = [beta]
    if beta == 0.0:
        return x, SolveReport(0, True, history, time.perf_counter() - start)
    target = tol * beta
    total = 0
    converged = False
    m = max(1, int(restart))
    while total < maxit:
        V = np.zeros((m + 1, n))
        Hh = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            if side == "right":
                w = A.matvec(apply_p(V[k]))
            else:
                w = apply_p(A.matvec(V[k]))
            for i in range(k + 1):  # modified Gram-Schmidt
                Hh[i, k] = w @ V[i]
                w -= Hh[i, k] * V[i]
            Hh[k + 1, k] = np.linalg.norm(w)
            breakdown = Hh[k + 1, k] <= 1e-14 * abs(Hh[: k + 1, k]).max(initial=1e-300)
            if not breakdown:
                V[k + 1] = w / Hh[k + 1, k]
            for i in range(k):
                t = cs[i] * Hh[i, k] + sn[i] * Hh[i + 1, k]
                Hh[i + 1, k] = -sn[i] * Hh[i, k] + cs[i] * Hh[i + 1, k]
                Hh[i, k] = t
            denom = np.hypot(Hh[k, k], Hh[k + 1, k])
            cs[k], sn[k] = Hh[k, k] / denom, Hh[k + 1, k] / denom
            Hh[k, k] = denom
            Hh[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            history.append(abs(g[k + 1]))
            if history[-1] <= target or breakdown or total >= maxit:
                k += 1
                break
        else:
            k = m
        y = sla.solve_triangular(Hh[:k, :k], g[:k])
        dx = V[:k].T @ y
        x += apply_p(dx) if side == "right" else dx
        r = residual(x)
        beta = float(np.linalg.norm(r))
        if beta <= target:
            converged = True
            history[-1] = beta
            break
        if history[-1] <= target:
            # estimate converged but the recomputed residual did not; continue from it
            history[-1] = beta
        if total >= maxit:
            break
    return x, SolveReport(total, converged, history, time.perf_counter() - start)


def _solver_apply(inner) -> Callable:
    if callable(inner) and not hasattr(inner, "solve"):
        return inner
    return inner.solve


def schur_A_apply(L, inner, v):
    """``L^T H^{-1} L v`` with one inner solve."""
    return L.T @ _solver_apply(inner)(L @ v)


def schur_operator(L, inner) -> LinearOperator:
    """Matrix-free ``A = L^T H^{-1} L`` as a symmetric operator."""
    n = L.shape[1]
    mv = lambda v: schur_A_apply(L, inner, v)
    return LinearOperator((n, n), matvec=mv, rmatvec=mv, dtype=float)


def saddle_matrix(H, L):
    """Symmetric indefinite ``[[H, L], [L^T, 0]]``."""
    return sp.bmat([[H, L], [L.T, None]], format="csr")


def single_stage_matrix(H, L, M, omega: float = 1.0):
    """SPD ``[[(omega+1) H, -L], [-L^T, M]]``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return sp.bmat([[(omega + 1.0) * H, -L], [-L.T, M]], format="csr")


def _block_lower_diag_upper(b_solve, L, z_solve, sign):
    """Apply ``[[I, sign B^-1 L], [0, I]] diag(B^-1, Z^-1) [[I, 0], [sign L^T B^-1, I]]``."""
    m, n = L.shape
    LT = L.T.tocsr()

    def apply(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[:m], x[m:]
        w1 = b_solve(x1)
        y2 = x2 + sign * (LT @ w1)
        w2 = z_solve(y2)
        out1 = w1 + sign * b_solve(L @ w2)
        return np.concatenate([out1, w2])

    return LinearOperator((m + n, m + n), matvec=apply, rmatvec=apply, dtype=float)


def _z_solver(Z, n):
    if Z is None:
        return lambda x: x
    if isinstance(Z, (int, float)):
        return lambda x: x / Z
    return _solver_apply(Z)


def block_precond_inv(inner, L, Z_inv=-1.0) -> LinearOperator:
    """Symmetric block preconditioner for the saddle-point matrix.

    ``inner`` applies ``B^{-1}``; ``Z_inv`` applies the inverse of the
    Schur-block approximation, or is a scalar ``c`` meaning ``Z = c I``
    (default ``-I``).
    """
    return _block_lower_diag_upper(_solver_apply(inner), sp.csr_matrix(L),
                                   _z_solver(Z_inv, L.shape[1]), -1.0)


def block_precond_ss(inner, L, Z_ss=1.0, omega: float = 1.0) -> LinearOperator:
    """SPD block preconditioner for the single-stage matrix with ``B_omega = (omega+1) B``."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    b_solve = _solver_apply(inner)
    scale = 1.0 / (omega + 1.0)
    return _block_lower_diag_upper(lambda x: scale * b_solve(x), sp.csr_matrix(L),
                                   _z_solver(Z_ss, L.shape[1]), 1.0)


def dense_generalized_eig(A, M) -> np.ndarray:
    """Ascending eigenvalues of ``A v = lambda M v`` for symmetric ``A`` and SPD ``M``."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)
    A = 0.5 * (A + A.T)
    M = 0.5 * (M + M.T)
    try:
        return sla.eigh(A, M, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"M is not positive definite: {exc}") from exc
