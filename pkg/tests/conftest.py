"""Pytest configuration and fixtures."""

from pathlib import Path

import numpy as np
import pytest

from scmc.matrix import PartialMatrix, WeightField
from scmc.synthetic import gen_uniform_synthetic, observe


@pytest.fixture
def data_dir() -> Path:
    """Return path to test data directory."""
    return Path(__file__).parent / "data"


@pytest.fixture
def ratings_path(data_dir: Path) -> Path:
    """Small ratings file in the MovieLens u.data layout (5 users, 6 items)."""
    return data_dir / "u.data"


@pytest.fixture
def suite_config(data_dir: Path) -> Path:
    """Small synthetic suite config."""
    return data_dir / "suite.yaml"


@pytest.fixture
def tmp_output(tmp_path: Path) -> Path:
    """Create temporary output directory."""
    output_dir = tmp_path / "output"
    output_dir.mkdir()
    return output_dir


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240917)


@pytest.fixture
def tiny_obs() -> PartialMatrix:
    """4x3 matrix observed at col 0 rows 0-2, col 1 rows 0-1, col 2 row 0."""
    entries = {
        (0, 0): 1.0,
        (1, 0): 2.0,
        (2, 0): 3.0,
        (0, 1): -1.0,
        (1, 1): 0.5,
        (0, 2): 4.0,
    }
    return PartialMatrix.from_entries(4, 3, entries)


@pytest.fixture
def tiny_weights() -> WeightField:
    """Mildly heterogeneous positive weights on the 4x3 grid."""
    return WeightField(1.0 + 0.05 * (np.arange(12).reshape(4, 3) % 3))


@pytest.fixture
def small_instance(rng):
    """40x30 synthetic matrix observed on 480 entries under uniform weights."""
    M = gen_uniform_synthetic(40, 30, rank=3, mu=0.0, gamma=0.05, rng=rng)
    w = WeightField.uniform(40, 30)
    obs = observe(M, 480, w, rng)
    return M, w, obs
