"""Iteration counts of the preconditioned saddle-point and single-stage solvers.

Run:  python demos/solver_scaling.py [sigma_in]

U and Z are both P1, Z living on one uniform refinement of the U mesh.  The
saddle-point system is solved with GMRES(30) and the block preconditioner
built from H^-1 and Z = -I; the single-stage system uses CG with its SPD
block preconditioner.  Both stop at a relative residual of 1e-6.
"""
import sys

from llstar import MethodKind, build_problem, generate_square_mesh, model_problem, solve
from llstar.analysis import infsup_diagnostic
from llstar.mesh import uniform_refine

sigma_in = float(sys.argv[1]) if len(sys.argv) > 1 else 1e4
coeffs = model_problem(sigma_in)

print(f"sigma_in = {sigma_in:g}")
print(f"{'n':>4} {'dim U':>7} {'dim Z':>7} {'GMRES':>6} {'CG':>4} {'c_I':>7}")
for n in (8, 16, 32, 64):
    mesh = generate_square_mesh(n)
    problem = build_problem(coeffs, mesh, 1, 1, z_mesh=uniform_refine(mesh))
    inv = solve(problem, MethodKind.LLSTAR_INVERSE, tol=1e-6)
    ss = solve(problem, MethodKind.SINGLE_STAGE, tol=1e-6)
    dim_u, dim_z = problem.dims
    # the GMRES count tracks how fast the discrete inf-sup constant decays
    c_I = float("nan")
    if n <= 32:
        c_I = infsup_diagnostic(problem.L, problem.H, problem.M, probes=0).c_I
    print(f"{n:4d} {dim_u:7d} {dim_z:7d} {inv.report.iterations:6d} {ss.report.iterations:4d} "
          f"{c_I:7.4f}")
