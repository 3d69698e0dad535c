"""Point-estimate matrix completion behind a uniform interface.

The default solver is alternating least squares (ALS) on the observed
entries. A trivial ``mean`` solver is included as a stress baseline: the
conformal guarantees downstream must hold however bad the estimate is.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericalError, ParameterError
from .matrix import PartialMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CompletionEstimate:
    """Dense estimate ``M_hat`` and, for factor models, its factors.

    Attributes:
        estimate: n_rows x n_cols array
        factors: ``(U, V)`` with ``estimate == U @ V.T``, or None
        objective_trace: Training objective after each ALS sweep
    """

    estimate: np.ndarray
    factors: tuple[np.ndarray, np.ndarray] | None = None
    objective_trace: tuple[float, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.estimate.shape


@dataclass(frozen=True)
class SolverConfig:
    """Solver name and hyperparameters, as read from the experiment config."""

    name: str = "als"
    rank: int = 5
    regularization: float = 0.1
    max_iters: int = 100
    tol: float = 1e-6
    seed: int | None = 0
    restarts: int = 3


def _objective(
    mask: np.ndarray, target: np.ndarray, U: np.ndarray, V: np.ndarray, reg: float
) -> float:
    resid = np.where(mask, target - U @ V.T, 0.0)
    return float(np.sum(resid**2) + reg * (np.sum(U**2) + np.sum(V**2)))


def _solve_block(
    mask: np.ndarray, target: np.ndarray, fixed: np.ndarray, reg: float
) -> np.ndarray:
    """Ridge solve of every row of ``target`` against the ``fixed`` factor.

    Rows are independent, so all Gram matrices are formed in one batch. With
    zero regularization the pseudo-inverse yields the minimum-norm solution,
    which also covers rows with fewer observations than the rank.
    """
    weights = mask.astype(float)
    gram = np.einsum("rc,ck,cl->rkl", weights, fixed, fixed, optimize=True)
    rhs = (weights * target) @ fixed
    if reg > 0:
        gram = gram + reg * np.eye(fixed.shape[1])
        return np.linalg.solve(gram, rhs[..., np.newaxis])[..., 0]
    return np.einsum("rkl,rl->rk", np.linalg.pinv(gram, hermitian=True), rhs)


def _sweeps(
    mask: np.ndarray,
    target: np.ndarray,
    U: np.ndarray,
    V: np.ndarray,
    reg: float,
    max_iters: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    trace: list[float] = []
    previous = _objective(mask, target, U, V, reg)
    for iteration in range(max_iters):
        U = _solve_block(mask, target, V, reg)
        V = _solve_block(mask.T, target.T, U, reg)
        current = _objective(mask, target, U, V, reg)
        if not np.isfinite(current):
            raise ConvergenceError(f"ALS objective became non-finite at sweep {iteration + 1}")
        trace.append(current)
        logger.debug("ALS sweep %d: objective %.6g", iteration + 1, current)
        if previous - current <= tol * max(previous, np.finfo(float).tiny):
            break
        previous = current
    return U, V, trace


def als_complete(
    train: PartialMatrix,
    rank: int,
    regularization: float = 0.1,
    max_iters: int = 100,
    tol: float = 1e-6,
    rng: np.random.Generator | int | None = 0,
    restarts: int = 3,
) -> CompletionEstimate:
    """Fit a rank-``rank`` factorization by alternating ridge regressions.

    Minimizes the squared error on observed entries plus
    ``regularization * (||U||_F^2 + ||V||_F^2)``. Each half-sweep is an exact
    block minimization, so the objective never increases along one run. A
    single start can settle in a poor stationary point; ``restarts``
    independent starts are run and the one with the lowest final objective
    is kept. The first start is the same for any ``restarts``.

    Args:
        train: Observed training entries
        rank: Factor rank
        regularization: Nonnegative ridge penalty
        max_iters: Maximum number of sweeps per start
        tol: Stop once the relative objective decrease falls below this
        rng: Seed or generator for the factor initializations
        restarts: Number of random starts

    Returns:
        CompletionEstimate with factors and the objective trace of the kept start

    Raises:
        EmptyMatrixError: If ``train`` has no entries
        ParameterError: If the rank, penalty or restart count is invalid
        ConvergenceError: If the objective becomes non-finite
    """
    train.require_nonempty()
    if rank < 1 or rank > min(train.shape):
        raise ParameterError(
            f"rank must be in [1, {min(train.shape)}] for a "
            f"{train.n_rows}x{train.n_cols} matrix, got {rank}"
        )
    if regularization < 0:
        raise ParameterError("regularization must be nonnegative")
    if max_iters < 1:
        raise ParameterError("max_iters must be >= 1")
    if restarts < 1:
        raise ParameterError("restarts must be >= 1")

    rng = np.random.default_rng(rng)
    mask = train.mask
    target = train.to_dense(fill=0.0)
    scale = 1.0 / np.sqrt(rank)

    best: tuple[np.ndarray, np.ndarray, list[float]] | None = None
    for start in range(restarts):
        U = rng.normal(0.0, scale, size=(train.n_rows, rank))
        V = rng.normal(0.0, scale, size=(train.n_cols, rank))
        U, V, trace = _sweeps(mask, target, U, V, regularization, max_iters, tol)
        logger.debug("ALS start %d: final objective %.6g", start + 1, trace[-1])
        if best is None or trace[-1] < best[2][-1]:
            best = (U, V, trace)

    U, V, trace = best
    return CompletionEstimate(U @ V.T, factors=(U, V), objective_trace=tuple(trace))


def mean_complete(train: PartialMatrix) -> CompletionEstimate:
    """Fill every entry with the grand mean of the observed values."""
    train.require_nonempty()
    return CompletionEstimate(np.full(train.shape, float(train.values.mean())))


def _als(train: PartialMatrix, config: SolverConfig) -> CompletionEstimate:
    return als_complete(
        train,
        rank=config.rank,
        regularization=config.regularization,
        max_iters=config.max_iters,
        tol=config.tol,
        rng=config.seed,
        restarts=config.restarts,
    )


def _mean(train: PartialMatrix, config: SolverConfig) -> CompletionEstimate:  # noqa: ARG001
    return mean_complete(train)


SOLVERS: dict[str, Callable[[PartialMatrix, SolverConfig], CompletionEstimate]] = {
    "als": _als,
    "mean": _mean,
}


def complete(train: PartialMatrix, solver_config: SolverConfig) -> CompletionEstimate:
    """Dispatch to the solver named in ``solver_config``.

    Raises:
        ConfigError: If the solver name is unknown
        NumericalError: If the solver returns an estimate of the wrong shape
    """
    try:
        solver = SOLVERS[solver_config.name]
    except KeyError as e:
        known = ", ".join(sorted(SOLVERS))
        raise ConfigError(
            f"unknown solver {solver_config.name!r} (known: {known})"
        ) from e
    estimate = solver(train, solver_config)
    if estimate.shape != train.shape:
        raise NumericalError(
            f"solver {solver_config.name!r} returned a {estimate.shape} estimate "
            f"for a {train.shape} matrix"
        )
    return estimate
