import numpy as np
import pytest

from pawnn import kernels
from pawnn.grid import load_feeder, simple_feeder

BACKENDS = [kernels.NUMPY, kernels.NUMBA]


@pytest.fixture(params=BACKENDS, ids=lambda b: b.name)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def ieee37():
    return load_feeder("ieee37")


@pytest.fixture(scope="session")
def path4():
    return load_feeder("path4")


@pytest.fixture(scope="session")
def star5():
    return load_feeder("star5")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(feeder, rng, spread=0.05):
    """Voltages scattered around the flat profile."""
    base = feeder.source_voltage[feeder.slots[:, 1]]
    n = feeder.n_slots
    return base * (1 + spread * rng.standard_normal(n)) * np.exp(1j * spread * rng.standard_normal(n))


def five_bus():
    """1-2-3-4-5 path with a loaded tail, used by several oracle tests."""
    return simple_feeder([(1, 2), (2, 3), (3, 4), (4, 5)], z=0.01 + 0.03j,
                         loads={2: 0.05 + 0.02j, 3: 0.04 + 0.01j, 4: 0.06 + 0.03j, 5: 0.03 + 0.01j})


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record(criterion, ok, detail=""):
    ACCEPTANCE.append((criterion, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
