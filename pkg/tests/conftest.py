from __future__ import annotations

import numpy as np
import pytest

from srampuf.device import DeviceConfig
from srampuf.variation import MismatchSpec, sample_population


@pytest.fixture(scope="session")
def config():
    return DeviceConfig()


@pytest.fixture(scope="session")
def cell(config):
    return config.nominal_cell()


@pytest.fixture(scope="session")
def env(config):
    return config.environment()


def offset_cell(cell, **offsets):
    """Nominal cell with named threshold offsets (volts)."""
    names = ("n1", "n2", "p1", "p2", "nx1", "nx2")
    return cell.with_offsets([offsets.get(n, 0.0) for n in names])


@pytest.fixture(scope="session")
def small_population(cell):
    return sample_population(cell, MismatchSpec(0.018, 0.018), 64, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
