import numpy as np
import pytest

from partlin.conjugacy import partial_linearize
from partlin.fields import Poly, PolyField
from partlin.gaps import GapParams

ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def triangular(l1, l2, b):
    """x1' = l1 x1 + b x2, x2' = l2 x2."""
    return PolyField([Poly([(l1, (1, 0)), (b, (0, 1))], 2), Poly([(l2, (0, 1))], 2)])


@pytest.fixture(scope="session")
def oracle_chain():
    l1, l2, b = -0.5, -2.0, 0.7
    f = triangular(l1, l2, b)
    return partial_linearize(f, [(l1, l1), (l2, l2)], GapParams(0.01, 0.0, 1, 2, 2, 2)), (l1, l2, b)


@pytest.fixture(scope="session")
def example_spectrum():
    from partlin.verify import ExampleSpec, example_spectrum as es
    return es(ExampleSpec())


@pytest.fixture(scope="session")
def example_run(example_spectrum):
    from partlin.verify import run_example_50
    return run_example_50(spectrum=example_spectrum)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
