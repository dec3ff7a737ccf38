import pytest

from helpers import ACCEPTANCE_LINES, PROBLEMS
from octrl import _backend
from octrl.problem import load_spec, make_spec
from octrl.verify import closed_form_example1


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def backends():
    names = ["python"]
    try:
        _backend.get("cython")
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


@pytest.fixture(params=backends())
def kernels(request):
    return _backend.get(request.param)


@pytest.fixture(scope="session")
def ex1():
    return load_spec(PROBLEMS / "example1.prob")


@pytest.fixture(scope="session")
def ramsey():
    return make_spec(0.03, "ln(c)", 1.0, f_text="x^0.3")


@pytest.fixture(scope="session")
def closed_form():
    """Example 1 closed form on [0, 600] with 20,000 nodes."""
    return closed_form_example1(grid=20_000)

