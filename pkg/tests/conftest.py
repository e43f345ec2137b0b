"""Shared fixtures: polytopes, test configurations and small grids"""

import sys
from fractions import Fraction
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from polytope import hirzebruch, interval, standard_simplex, unit_cube  # noqa: E402
from potentials import POTENTIAL_CONFIG, default_grid  # noqa: E402
from rays import RAY_CONFIG  # noqa: E402
from slopes import SLOPE_CONFIG  # noqa: E402
from testconfig import linear, make_testconfig  # noqa: E402

INPUTS = ROOT / "inputs"


@pytest.fixture(autouse=True)
def _restore_module_config():
    """CLI runs push config/kstab.yaml into the module configs; undo after each test"""
    configs = (POTENTIAL_CONFIG, RAY_CONFIG, SLOPE_CONFIG)
    saved = [{key: (dict(value) if isinstance(value, dict) else value) for key, value in config.items()}
             for config in configs]
    yield
    for config, values in zip(configs, saved):
        config.clear()
        config.update(values)


@pytest.fixture(scope="session")
def inputs_dir():
    return INPUTS


@pytest.fixture(scope="session")
def p1():
    return interval(0, 1)


@pytest.fixture(scope="session")
def square():
    return unit_cube(2)


@pytest.fixture(scope="session")
def simplex2():
    return standard_simplex(2)


@pytest.fixture(scope="session")
def f1():
    return hirzebruch(1)


@pytest.fixture(scope="session")
def step_tc(p1):
    """f = max(0, x - 1/2)"""
    return make_testconfig(p1, [((0,), 0), ((1,), Fraction(-1, 2))])


@pytest.fixture(scope="session")
def half_step_tc(p1):
    """f = max(0, x/2 - 1/4): non-reduced central fiber"""
    return make_testconfig(p1, [((0,), 0), ((Fraction(1, 2),), Fraction(-1, 4))])


@pytest.fixture(scope="session")
def linear_tc(p1):
    return linear(p1, (1,))


@pytest.fixture(scope="session")
def corner_tc(square):
    """f = max(0, x + y - 1) on the unit square"""
    return make_testconfig(square, [((0, 0), 0), ((1, 1), -1)])


@pytest.fixture(scope="session")
def grid_1d():
    return default_grid(1, tail=26.0, resolution=2049)


@pytest.fixture(scope="session")
def grid_2d():
    return default_grid(2, tail=26.0, resolution=129)
