"""Config-driven studies: convergence, solver iterations and inf-sup series.

Config files are flat ``key = value`` text; ``#`` starts a comment.
Example::

    study = convergence
    methods = llstar, two_stage, single_stage, llstar_inverse
    sigma_in = 1e4
    alpha = 3*pi/16
    order_u = 1
    order_z = 2
    levels = 8, 16, 32
"""
from __future__ import annotations

import argparse
import ast
import csv
import math
import operator
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .analysis import ConvergenceRecord, InfSupReport, compute_eoc, infsup_diagnostic, l2_error
from .mesh import generate_square_mesh, uniform_refine
from .methods import MethodKind, build_problem, solve
from .problem import Coefficients

__all__ = [
    "ConfigError",
    "StudyConfig",
    "parse_config",
    "load_config",
    "predicted_dims",
    "run_convergence",
    "run_solver_study",
    "run_infsup",
    "run_study",
    "main",
]

CONVERGENCE_HEADER = ["level", "h", "hbar", "dimU", "dimZ", "method", "error", "eoc",
                      "iterations", "status"]
SOLVER_HEADER = ["h", "hbar", "dimU", "dimZ", "iters_inv", "iters_ss", "status"]
INFSUP_HEADER = ["level", "h", "hbar", "dimU", "dimZ", "lambda_min", "c_I", "supinf"]


class ConfigError(ValueError):
    pass


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def _number(text: str) -> float:
    """Arithmetic on literals and ``pi``, e.g. ``3*pi/16``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected integers, got {text!r}") from exc


@dataclass
class StudyConfig:
    study: str = "convergence"
    methods: list = field(default_factory=lambda: list(MethodKind))
    sigma_in: float = 1.0e4
    sigma_out: float = 1.0e-4
    alpha: float = 3.0 * math.pi / 16.0
    order_u: int = 1
    order_z: int = 2
    z_mesh: str = "same"
    z_refinements: Optional[list] = None
    levels: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    omega: float = 1.0
    bc: str = "weak"
    tol: Optional[float] = None
    restart: int = 30
    seed: int = 0
    jitter: float = 0.2
    z_block: Optional[str] = None
    residual_norm: str = "true"
    maxit_gmres: int = 2000
    maxit_cg: int = 500
    output: str = "study.csv"

    def __post_init__(self):
        if self.study not in ("convergence", "solver_iterations", "infsup"):
            raise ConfigError(f"unknown study {self.study!r}")
        if self.z_mesh not in ("same", "refined"):
            raise ConfigError("z_mesh must be 'same' or 'refined'")
        if self.bc not in ("weak", "strong"):
            raise ConfigError("bc must be 'weak' or 'strong'")
        if self.residual_norm not in ("true", "preconditioned"):
            raise ConfigError("residual_norm must be 'true' or 'preconditioned'")
        for name in ("order_u", "order_z"):
            if not 1 <= getattr(self, name) <= 5:
                raise ConfigError(f"{name} must be between 1 and 5")
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ConfigError("omega must be finite and positive")
        if not self.levels or any(n < 4 or n % 4 for n in self.levels):
            raise ConfigError("levels must be positive multiples of 4")
        if self.z_block is not None and self.z_block not in ("identity", "mass"):
            raise ConfigError("z_block must be 'identity' or 'mass'")

    @property
    def refinements(self) -> list:
        if self.z_refinements is not None:
            return list(self.z_refinements)
        return [1 if self.z_mesh == "refined" else 0]

    @property
    def level_specs(self) -> list:
        """``(n, z refinements)`` per level, in order."""
        return [(n, r) for n in self.levels for r in self.refinements]

    @property
    def solver_tol(self) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-6 if self.study == "solver_iterations" else 1e-8

    @property
    def schur_block(self) -> str:
        if self.z_block is not None:
            return self.z_block
        return "identity" if self.study == "solver_iterations" else "mass"

    def coefficients(self) -> Coefficients:
        return Coefficients(alpha=self.alpha, sigma_in=self.sigma_in, sigma_out=self.sigma_out)


_PARSERS = {
    "study": str.strip, "z_mesh": str.strip, "bc": str.strip, "output": str.strip,
    "z_block": str.strip, "residual_norm": str.strip,
    "sigma_in": _number, "sigma_out": _number, "alpha": _number, "omega": _number,
    "tol": _number,
    "order_u": int, "order_z": int, "restart": int, "seed": int, "maxit_gmres": int,
    "maxit_cg": int, "jitter": _number,
    "levels": _int_list, "z_refinements": _int_list,
    "methods": lambda t: [MethodKind.parse(v) for v in t.split(",") if v.strip()],
}


def parse_config(text: str, **overrides) -> StudyConfig:
    """Parse ``key = value`` lines; unknown or repeated keys are errors."""
    known = {f.name for f in fields(StudyConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = StudyConfig(**values)
    check_feasible(config)
    return config


def load_config(path, **overrides) -> StudyConfig:
    return parse_config(Path(path).read_text(), **overrides)


def predicted_dims(n: int, order_u: int, order_z: int, z_refinements: int = 0):
    """``(dim U, dim Z)`` from counting formulas for the structured square mesh.

    Z carries the closed-outflow constraint, which spans two adjacent sides
    for any flow direction that is not axis-aligned.
    """
    def total(m, k):
        nv, ne, nt = (m + 1) ** 2, 3 * m * m + 2 * m, 2 * m * m
        return nv + ne * (k - 1) + nt * (k - 1) * (k - 2) // 2

    nz = n * 2 ** z_refinements
    return total(n, order_u), total(nz, order_z) - (2 * nz * order_z + 1)


def check_feasible(config: StudyConfig) -> None:
    """Reject configs where the saddle-point method would be singular at some level."""
    needs_inverse = (MethodKind.LLSTAR_INVERSE in config.methods
                     or config.study == "solver_iterations")
    if not needs_inverse:
        return
    for n, r in config.level_specs:
        du, dz = predicted_dims(n, config.order_u, config.order_z, r)
        if du > dz:
            raise ConfigError(f"level n={n}: dim U = {du} > dim Z = {dz}; "
                              "the saddle-point method is singular")


def _build(config: StudyConfig, n: int, refinements: int):
    mesh = generate_square_mesh(n, jitter=config.jitter, b=config.coefficients().b,
                                seed=config.seed)
    z_mesh = mesh
    for _ in range(refinements):
        z_mesh = uniform_refine(z_mesh)
    problem = build_problem(config.coefficients(), mesh, config.order_u, config.order_z,
                            z_mesh=z_mesh, bc=config.bc)
    return mesh, z_mesh, problem


def _convergence_level(args):
    config, level, n, r = args
    coeffs = config.coefficients()
    mesh, z_mesh, problem = _build(config, n, r)
    rows = []
    for kind in config.methods:
        status, err, its = "ok", math.nan, 0
        try:
            sol = solve(problem, kind, omega=config.omega, tol=config.solver_tol,
                        z_block=config.schur_block, restart=config.restart,
                        maxit=config.maxit_gmres if kind is MethodKind.LLSTAR_INVERSE
                        else config.maxit_cg, norm=config.residual_norm)
            its = sol.report.iterations
            if not sol.report.converged:
                status = "unconverged"
            err = l2_error(sol.approximation, coeffs)
        except Exception as exc:  # recorded per level, the run continues
            status = f"failed: {type(exc).__name__}: {exc}".replace(",", ";")
        rows.append(ConvergenceRecord(level, mesh.h, z_mesh.h, problem.u_space.dim,
                                      problem.z_space.dim, kind.value, err, None, its, status))
    return rows


def _run_levels(worker, config, parallel: int):
    tasks = [(config, i, n, r) for i, (n, r) in enumerate(config.level_specs)]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run_convergence(config: StudyConfig, parallel: int = 0, write: bool = True) -> list:
    """Errors and EOCs for every (level, method); writes the CSV unless ``write`` is false."""
    per_level = _run_levels(_convergence_level, config, parallel)
    records = [rec for rows in per_level for rec in rows]
    for kind in config.methods:
        series = [r for r in records if r.method == kind.value]
        for prev, cur in zip(series, series[1:]):
            if prev.status == cur.status == "ok" and prev.l2_error > 0:
                cur.eoc = compute_eoc([prev.l2_error, cur.l2_error], [prev.h, cur.h])[0]
    if write:
        _write_csv(config.output, CONVERGENCE_HEADER,
                   [[r.level, r.h, r.hbar, r.dimU, r.dimZ, r.method, r.l2_error, r.eoc,
                     r.iterations, r.status] for r in records])
    return records


@dataclass
class SolverRecord:
    level: int
    h: float
    hbar: float
    dimU: int
    dimZ: int
    iters_inv: int
    iters_ss: int
    converged_inv: bool
    converged_ss: bool
    failure: str = ""

    @property
    def status(self) -> str:
        if self.failure:
            return self.failure
        bad = [name for name, ok in (("inv", self.converged_inv), ("ss", self.converged_ss))
               if not ok]
        return "ok" if not bad else "unconverged:" + "+".join(bad)


def _solver_level(args):
    config, level, n, r = args
    mesh, z_mesh, problem = _build(config, n, r)
    dims = (level, mesh.h, z_mesh.h, problem.u_space.dim, problem.z_space.dim)
    common = dict(tol=config.solver_tol, z_block=config.schur_block, norm=config.residual_norm)
    try:
        inv = solve(problem, MethodKind.LLSTAR_INVERSE, restart=config.restart,
                    maxit=config.maxit_gmres, **common)
        ss = solve(problem, MethodKind.SINGLE_STAGE, omega=config.omega, maxit=config.maxit_cg,
                   **common)
    except Exception as exc:  # recorded per level, the run continues
        reason = f"failed: {type(exc).__name__}: {exc}".replace(",", ";")
        return SolverRecord(*dims, 0, 0, False, False, reason)
    return SolverRecord(*dims, inv.report.iterations, ss.report.iterations,
                        inv.report.converged, ss.report.converged)


def run_solver_study(config: StudyConfig, parallel: int = 0, write: bool = True) -> list:
    """Preconditioned GMRES and CG iteration counts per level."""
    records = _run_levels(_solver_level, config, parallel)
    if write:
        _write_csv(config.output, SOLVER_HEADER,
                   [[r.h, r.hbar, r.dimU, r.dimZ, r.iters_inv, r.iters_ss, r.status]
                    for r in records])
    return records


INFSUP_MAX_DIM = 4000


def _infsup_level(args):
    config, level, n, r = args
    du, dz = predicted_dims(n, config.order_u, config.order_z, r)
    if du > INFSUP_MAX_DIM or dz > 4 * INFSUP_MAX_DIM:
        return level, None, None, f"skipped level {level}: dim U = {du}, dim Z = {dz} too large"
    mesh, z_mesh, problem = _build(config, n, r)
    if problem.u_space.dim > problem.z_space.dim:
        report = InfSupReport(0.0, 0.0, 1.0, problem.u_space.dim, problem.z_space.dim)
    else:
        report = infsup_diagnostic(problem.L, problem.H, problem.M, seed=config.seed)
    return level, (mesh.h, z_mesh.h), report, None


def run_infsup(config: StudyConfig, parallel: int = 0, write: bool = True) -> list:
    """Inf-sup constants per level; oversize levels are skipped with a notice on stderr."""
    results = _run_levels(_infsup_level, config, parallel)
    rows, reports = [], []
    for level, hs, rep, notice in results:
        if notice:
            print(notice, file=sys.stderr)
            reports.append((level, None))
            continue
        reports.append((level, rep))
        rows.append([level, hs[0], hs[1], rep.dimU, rep.dimZ, rep.lambda_min, rep.c_I,
                     rep.supinf])
    if write:
        _write_csv(config.output, INFSUP_HEADER, rows)
    return reports


def run_study(config: StudyConfig, parallel: int = 0) -> bool:
    """Run the configured study; returns whether every level succeeded."""
    if config.study == "convergence":
        recs = run_convergence(config, parallel)
        return all(r.status == "ok" for r in recs)
    if config.study == "solver_iterations":
        recs = run_solver_study(config, parallel)
        return all(r.status == "ok" for r in recs)
    reps = run_infsup(config, parallel)
    return all(rep is not None for _, rep in reps)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="study", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="path to a key = value study file")
    parser.add_argument("--output", help="CSV path (overrides the config)")
    parser.add_argument("--levels", help="comma-separated mesh subdivisions, e.g. 8,16,32")
    parser.add_argument("--seed", type=int, help="mesh jitter seed")
    parser.add_argument("--parallel", type=int, default=0,
                        help="run levels in this many worker processes")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, output=args.output, seed=args.seed,
                             levels=_int_list(args.levels) if args.levels else None)
    except (ConfigError, OSError) as exc:
        print(f"study: {exc}", file=sys.stderr)
        return 1
    ok = run_study(config, args.parallel)
    print(f"wrote {config.output}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
