import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from drdb import ObservedData  # noqa: E402
from drdb.bench import DgpConfig, generate_dgp  # noqa: E402

FROZEN = Path(__file__).parent / "frozen"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def tiny():
    """Hand-sized dataset: t = (1, 0, 1, 1, 0, 0)."""
    y = np.array([3.0, 1.0, 5.0, 4.0, 2.0, 0.5])
    t = np.array([1, 0, 1, 1, 0, 0])
    x = np.arange(12, dtype=float).reshape(6, 2) / 10.0
    return ObservedData(y, t, x)


@pytest.fixture(scope="session")
def linear_dgp():
    return DgpConfig(n=1000, p=10, s=3)


@pytest.fixture(scope="session")
def sim_data(linear_dgp):
    return generate_dgp(linear_dgp, 12345)


@pytest.fixture(scope="session")
def small_sim():
    return generate_dgp(DgpConfig(n=300, p=4, s=2), 777)


@pytest.fixture(scope="session")
def frozen_dir():
    return FROZEN
