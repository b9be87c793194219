import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from llstar import build_problem, generate_square_mesh, model_problem, uniform_refine  # noqa: E402


def mesh(n, jitter=0.2, refinements=0):
    """Shared meshes; refined ones are built from the cached coarse mesh so they nest."""
    return _mesh(n, jitter, refinements)


@functools.lru_cache(maxsize=None)
def _mesh(n, jitter, refinements):
    if refinements == 0:
        return generate_square_mesh(n, jitter=jitter)
    return uniform_refine(_mesh(n, jitter, refinements - 1))


@functools.lru_cache(maxsize=None)
def problem(n, order_u=1, order_z=2, sigma_in=1e4, z_refinements=0, bc="weak"):
    u_mesh = mesh(n)
    z_mesh = mesh(n, refinements=z_refinements)
    return build_problem(model_problem(sigma_in), u_mesh, order_u, order_z, z_mesh, bc=bc)


@pytest.fixture
def small_problem():
    return problem(4)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
