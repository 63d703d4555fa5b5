import numpy as np
import pytest

from rydberg_anyons.geometry import Boundary, LatticeSpec, build_ruby_lattice, single_triangle_lattice
from rydberg_anyons.operators import OccupationBasis


@pytest.fixture
def triangle():
    return single_triangle_lattice()


@pytest.fixture
def cyl12():
    """1x2 cylinder: 12 sites, 4 triangles."""
    return build_ruby_lattice(LatticeSpec(1, 2, Boundary.PERIODIC))


@pytest.fixture
def cyl18():
    """1x3 cylinder: 18 sites, restricted dimension 4096."""
    return build_ruby_lattice(LatticeSpec(1, 3, Boundary.PERIODIC))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(basis, rng):
    v = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    return v / np.linalg.norm(v)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one PASS/FAIL line per acceptance criterion."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
