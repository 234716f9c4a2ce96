from __future__ import annotations

import numpy as np
import pytest

from src.autodiff import precision


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow learning reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)
