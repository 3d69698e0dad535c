"""Tests for completion module."""

import numpy as np
import pytest

from scmc.completion import (
    CompletionEstimate,
    SOLVERS,
    SolverConfig,
    als_complete,
    complete,
    mean_complete,
)
from scmc.errors import (
    ConfigError,
    ConvergenceError,
    EmptyMatrixError,
    NumericalError,
    ParameterError,
)
from scmc.matrix import PartialMatrix
from scmc.synthetic import low_rank


def _observed(full, fraction, rng):
    return PartialMatrix.from_dense(full, rng.random(full.shape) < fraction)


def test_als_recovers_fully_observed_low_rank(rng):
    """Test exact recovery of a rank-2 matrix seen on every entry."""
    full = low_rank(30, 20, 2, rng)
    train = PartialMatrix.from_dense(full, np.ones(full.shape, dtype=bool))

    result = als_complete(train, rank=2, regularization=0.0, max_iters=300, tol=1e-14)

    assert np.max(np.abs(result.estimate - full)) < 1e-4


def test_als_objective_never_increases(rng):
    """Test monotonicity of the training objective."""
    train = _observed(low_rank(40, 30, 3, rng) + 0.1 * rng.standard_normal((40, 30)), 0.3, rng)

    result = als_complete(train, rank=3, regularization=0.5, max_iters=50, tol=0.0)
    trace = np.array(result.objective_trace)

    assert trace.size >= 2
    assert (np.diff(trace) <= 1e-9 * trace[:-1]).all()


def test_als_factors(rng):
    """Test that the estimate is the product of the returned factors."""
    train = _observed(low_rank(20, 15, 2, rng), 0.5, rng)

    result = als_complete(train, rank=2, max_iters=5)
    U, V = result.factors

    assert U.shape == (20, 2)
    assert V.shape == (15, 2)
    assert np.allclose(result.estimate, U @ V.T)
    assert result.shape == (20, 15)


def test_als_seed_is_deterministic(rng):
    """Test that the initialization seed fixes the result."""
    train = _observed(low_rank(20, 15, 2, rng), 0.5, rng)

    a = als_complete(train, rank=2, max_iters=10, rng=3)
    b = als_complete(train, rank=2, max_iters=10, rng=3)

    assert np.array_equal(a.estimate, b.estimate)


def test_als_errors():
    """Test argument validation."""
    train = PartialMatrix.from_entries(3, 3, {(0, 0): 1.0, (1, 2): 2.0})
    with pytest.raises(ParameterError):
        als_complete(train, rank=4)
    with pytest.raises(ParameterError):
        als_complete(train, rank=1, regularization=-1.0)
    with pytest.raises(ParameterError):
        als_complete(train, rank=1, max_iters=0)
    with pytest.raises(ParameterError):
        als_complete(train, rank=1, restarts=0)
    with pytest.raises(EmptyMatrixError):
        als_complete(PartialMatrix(3, 3, np.array([]), np.array([]), np.array([])), 1)


def test_mean_complete(tiny_obs):
    """Test the grand-mean baseline."""
    result = mean_complete(tiny_obs)

    assert result.factors is None
    assert np.allclose(result.estimate, np.mean(tiny_obs.values))


def test_complete_dispatch(tiny_obs):
    """Test dispatch by solver name."""
    assert set(SOLVERS) == {"als", "mean"}
    result = complete(tiny_obs, SolverConfig(name="mean"))
    assert result.shape == tiny_obs.shape

    result = complete(tiny_obs, SolverConfig(name="als", rank=1, max_iters=3))
    assert result.factors is not None


def test_complete_unknown_solver(tiny_obs):
    """Test that an unknown solver is a configuration error."""
    with pytest.raises(ConfigError, match="unknown solver"):
        complete(tiny_obs, SolverConfig(name="svt"))


def test_als_restarts_keep_lowest_objective(rng):
    """Test that extra starts can only lower the final objective."""
    train = _observed(low_rank(40, 30, 3, rng), 0.3, rng)

    single = als_complete(train, rank=3, regularization=0.01, max_iters=30, restarts=1)
    several = als_complete(train, rank=3, regularization=0.01, max_iters=30, restarts=4)

    assert several.objective_trace[-1] <= single.objective_trace[-1]


def test_als_non_finite_objective(rng, monkeypatch):
    """Test that a diverging sweep is reported instead of returned."""
    train = _observed(low_rank(10, 8, 2, rng), 0.6, rng)

    def diverge(mask, target, fixed, reg):
        return np.full((mask.shape[0], fixed.shape[1]), np.nan)

    monkeypatch.setattr("scmc.completion._solve_block", diverge)

    with pytest.raises(ConvergenceError, match="non-finite"):
        als_complete(train, rank=2)


@pytest.mark.slow
def test_als_recovers_noiseless_low_rank(rng):
    """Test held-out recovery of a 200x200 rank-5 matrix from 20% of entries."""
    full = low_rank(200, 200, 5, rng)
    mask = rng.random(full.shape) < 0.2
    train = PartialMatrix.from_dense(full, mask)

    result = als_complete(
        train, rank=5, regularization=1e-3, max_iters=2000, tol=1e-12, restarts=5
    )
    rmse = np.sqrt(np.mean((result.estimate - full)[~mask] ** 2))

    assert rmse <= 1e-3


def test_complete_wrong_shape(tiny_obs, monkeypatch):
    """Test that a solver returning the wrong shape is a numerical error."""
    monkeypatch.setitem(SOLVERS, "mean", lambda train, config: CompletionEstimate(np.zeros((1, 1))))

    with pytest.raises(NumericalError, match="estimate"):
        complete(tiny_obs, SolverConfig(name="mean"))
