import logging

import numpy as np
import pytest

from tpsfem.data import NoiseSpec, ScatteredData, gen_peaks, locate
from tpsfem.domain import BoundaryKind, DomainSpec
from tpsfem.mesh import build_initial_grid


# each tuple contains (flag, mark, reason) where:
# - flag: the cli flag used to enable the tests with that mark
# - mark: the pytest mark to label a test with to enable skipping
# - reason: the description of why that mark exists
test_skip_marks = [
    ("--runslow", "slow", "are long running desk-scale reproductions"),
]


def pytest_addoption(parser):
    for (flag, _, reason) in test_skip_marks:
        parser.addoption(
            flag,
            action="store_true",
            default=False,
            help=f'run tests that {reason}',
        )


def pytest_configure(config):
    for (_, mark, reason) in test_skip_marks:
        config.addinivalue_line("markers", f'{mark}: marked tests {reason}')
    logging.getLogger('tpsfem').setLevel(logging.DEBUG)


def pytest_collection_modifyitems(config, items):
    for (flag, mark, _) in test_skip_marks:
        if not config.getoption(flag):
            skip_mark = pytest.mark.skip(reason=f'needs {flag} option to run')
            for item in items:
                if mark in item.keywords:
                    item.add_marker(skip_mark)


@pytest.fixture
def unit_square():
    return DomainSpec.square()


@pytest.fixture
def grid5(unit_square):
    return build_initial_grid(unit_square, 5)


@pytest.fixture
def neumann_grid5(unit_square):
    return build_initial_grid(unit_square, 5, BoundaryKind.NEUMANN)


def plane_data(n=300, seed=3, a=1.0, b=3.0, c=-1.0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 2))
    return ScatteredData(pts, a + b * pts[:, 0] + c * pts[:, 1])


@pytest.fixture
def plane():
    return plane_data()


@pytest.fixture
def small_peaks():
    return gen_peaks(2000, noise=NoiseSpec(sigma=0.02, seed=7))


@pytest.fixture
def peaks_domain():
    return DomainSpec.square(-3.0, 3.0)


@pytest.fixture
def plane_buckets(grid5, plane):
    return locate(grid5, plane)
