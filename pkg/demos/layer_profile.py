"""Sample the exact solution and two approximations along a horizontal line.

Run:  python demos/layer_profile.py [n] [y] > profile.csv

The line crosses the absorbing square; the CSV columns (x, exact, llstar,
llstar_inverse) plot directly with gnuplot or a spreadsheet and show how each
method resolves the exponential layer behind the absorber.
"""
import sys

import numpy as np

from llstar import (MethodKind, build_problem, exact_solution, generate_square_mesh,
                    model_problem, solve)

n = int(sys.argv[1]) if len(sys.argv) > 1 else 32
y = float(sys.argv[2]) if len(sys.argv) > 2 else 0.6

coeffs = model_problem(10.0)
problem = build_problem(coeffs, generate_square_mesh(n), 1, 2)
ll = solve(problem, MethodKind.LLSTAR).approximation
inv = solve(problem, MethodKind.LLSTAR_INVERSE).approximation

x = np.linspace(0.0, 1.0, 201)
pts = np.column_stack([x, np.full_like(x, y)])
print("x,exact,llstar,llstar_inverse")
for row in zip(x, exact_solution(coeffs, pts), ll(pts), inv(pts)):
    print(",".join(f"{v:.8f}" for v in row))
