from functools import lru_cache

import pytest

from diracasym.kernel import TriangleGrid, neumann_bundle
from diracasym.potential import Potential, make_pair

P = 1.5


def zero_pair():
    return make_pair(Potential.zero(P), Potential.zero(P))


def const_pair(c=0.5):
    return make_pair(Potential.constant(c, P), Potential.constant(c, P))


def trig_pair():
    return make_pair(Potential.trig([(1, 1.0), (0, 0.3)], p=P), Potential.trig([(-2, 0.5)], p=P))


def power_pair():
    return make_pair(Potential.power(0.4, 1.0, p=P), Potential.power(0.4, 0.5, p=P))


def step_pair():
    return make_pair(Potential.indicator(0.0, 0.5, 1.0, p=1.0), Potential.indicator(0.25, 1.0, 0.7, p=1.0))


PAIRS = {"zero": zero_pair, "const": const_pair, "trig": trig_pair, "power": power_pair, "step": step_pair}


@lru_cache(maxsize=None)
def pair(name):
    return PAIRS[name]()


@lru_cache(maxsize=None)
def bundle(name, M):
    return neumann_bundle(pair(name), TriangleGrid(M))


@pytest.fixture(params=list(PAIRS))
def any_pair(request):
    return request.param, pair(request.param)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
