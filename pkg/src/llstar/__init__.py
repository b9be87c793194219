"""Least-squares finite element methods for advection-reaction problems."""
from .problem import Coefficients, model_problem, exact_solution
from .mesh import Mesh, generate_square_mesh, uniform_refine
from .space import FunctionSpace, FEFunction, build_space, interpolate
from .methods import MethodKind, MethodSolution, DiscreteProblem, build_problem, solve
from .analysis import l2_error, compute_eoc, infsup_diagnostic

__all__ = [
    "Coefficients", "model_problem", "exact_solution",
    "Mesh", "generate_square_mesh", "uniform_refine",
    "FunctionSpace", "FEFunction", "build_space", "interpolate",
    "MethodKind", "MethodSolution", "DiscreteProblem", "build_problem", "solve",
    "l2_error", "compute_eoc", "infsup_diagnostic",
]
__version__ = "0.1.0"
