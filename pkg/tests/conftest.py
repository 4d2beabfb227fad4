import numpy as np
import pytest

from schrodn.calculus import PolarGrid
from schrodn.geometry import conformal, euclidean


@pytest.fixture(scope="session")
def flat():
    return euclidean()


@pytest.fixture(scope="session")
def bent():
    return conformal("linear", b=(0.3, 0.2))


@pytest.fixture(scope="session")
def grid32(flat):
    return PolarGrid(32, 64, flat)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary ----------------------------------------------------------------

_ACCEPTANCE = {}
N_CRITERIA = 13


@pytest.fixture
def criterion():
    """Recorder ``criterion(n, name, passed, detail)`` for the acceptance summary."""
    def record(n, name, passed, detail=""):
        _ACCEPTANCE.setdefault(n, []).append((name, bool(passed), detail))
        print(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}: {name} {detail}".rstrip())
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = _ACCEPTANCE.get(n)
        if parts is None:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN")
            continue
        ok = all(p for _, p, _ in parts)
        text = "; ".join(f"{name} {detail}".strip() for name, _, detail in parts)
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {text}")
