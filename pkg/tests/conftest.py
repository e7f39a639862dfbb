import numpy as np
import pytest

from guidedbridge.effective_model import build_effective
from guidedbridge.model_core import double_well
from guidedbridge.operator_grid import RegularGrid, build_sqra, dominant_eigenpairs, make_chi


@pytest.fixture(scope="session")
def dw():
    return double_well()


@pytest.fixture(scope="session")
def system(dw):
    """Default 200x200 operator, its spectrum and membership function."""
    op = build_sqra(dw)
    lam, vec = dominant_eigenpairs(op, 4)
    chi = make_chi(op, vec[:, 1])
    return {"spec": dw, "op": op, "lam": lam, "vec": vec, "chi": chi}


@pytest.fixture(scope="session")
def coarse_system(dw):
    """100x100 operator for cheaper checks."""
    op = build_sqra(dw, RegularGrid.square(2.5, 100))
    lam, vec = dominant_eigenpairs(op, 3)
    return {"op": op, "lam": lam, "vec": vec, "chi": make_chi(op, vec[:, 1])}


@pytest.fixture(scope="session")
def effective(system):
    return build_effective(system["op"], system["chi"], system["lam"][1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""

    def report(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        CRITERIA.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
