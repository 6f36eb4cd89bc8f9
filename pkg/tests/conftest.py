from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from src import config as config_module
from src.dataset import Dataset
from src.gaussian import LinearSem
from src.simgen import sample_linear_sem


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="run the long multi-seed acceptance tests",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@st.composite
def samples_1d(draw, max_size: int = 32):
    size = draw(st.integers(min_value=1, max_value=max_size))
    return draw(
        st.lists(
            st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False),
            min_size=size,
            max_size=size,
        )
    )


@st.composite
def random_dags(draw, max_nodes: int = 5):
    """Edge lists over nodes 0..m-1 that only point from lower to higher index."""
    m = draw(st.integers(min_value=2, max_value=max_nodes))
    edges = [
        (a, b)
        for a in range(m)
        for b in range(a + 1, m)
        if draw(st.booleans())
    ]
    return m, edges


def random_sem(rng: np.random.Generator, m: int, density: float = 0.5) -> LinearSem:
    """Strictly lower-triangular SEM with coefficients in [-3, 3] away from 0."""
    coefficients = np.zeros((m, m))
    for i in range(m):
        for j in range(i):
            if rng.random() < density:
                magnitude = rng.uniform(0.1, 3.0)
                coefficients[i, j] = magnitude if rng.random() < 0.5 else -magnitude
    noise = rng.uniform(0.5, 2.0, size=m)
    return LinearSem(coefficients, noise)


@pytest.fixture
def linear_pair() -> Dataset:
    sem = LinearSem(np.array([[0.0, 0.0], [2.0, 0.0]]), np.ones(2), ("X", "Y"))
    return sample_linear_sem(sem, 10_000, seed=11)


@pytest.fixture
def independent_pair() -> Dataset:
    sem = LinearSem(np.zeros((2, 2)), np.ones(2), ("X", "Y"))
    return sample_linear_sem(sem, 10_000, seed=5)


@pytest.fixture
def chain_sem() -> LinearSem:
    coefficients = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ]
    )
    return LinearSem(coefficients, np.ones(3), ("X", "Y", "Z"))


@pytest.fixture
def isolated_config(monkeypatch, tmp_path):
    """Strip DEPMETER_* variables and point the user config path at a missing file."""
    for name in (
        "DEPMETER_CONFIG",
        "DEPMETER_LOG_LEVEL",
        "DEPMETER_LOG_DIR",
        "DEPMETER_LOG_RETENTION_HOURS",
        "DEPMETER_WORKERS",
    ):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setattr(config_module, "default_config_path", lambda: str(tmp_path / "absent.json"))
