"""Estimate sampling weights from the observation pattern.

Each entry is modelled as observed independently with probability
``l(A_rc)``, ``l`` the logistic function, where ``A`` is approximately low
rank: ``||A||_* <= nu * sqrt(rho * n_rows * n_cols)`` and ``||A||_inf <= nu``.
The constrained maximum-likelihood ``A_hat`` is found by projected gradient
ascent with an exact (Dykstra) projection onto both balls, and the
estimated weights are ``w_hat = l(A_hat)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import DegenerateMaskError, ParameterError
from .matrix import WeightField

logger = logging.getLogger(__name__)

DEFAULT_RANK_BOUNDS = (3, 5, 7)
DEFAULT_INF_BOUND = 4.0


@dataclass(frozen=True, eq=False)
class MissingnessModel:
    """Fitted low-rank logistic observation model.

    Attributes:
        A_hat: Fitted logits
        rank_bound: Rank parameter ``rho`` of the nuclear-norm ball
        inf_bound: Entrywise bound ``nu``
        w_hat: Estimated observation probabilities
        likelihood_trace: Log-likelihood after each accepted step
        converged: Whether the fit met its stopping rule before max_iters
    """

    A_hat: np.ndarray
    rank_bound: int
    inf_bound: float
    w_hat: WeightField
    likelihood_trace: tuple[float, ...]
    converged: bool = True

    @property
    def nuclear_radius(self) -> float:
        n_rows, n_cols = self.A_hat.shape
        return self.inf_bound * np.sqrt(self.rank_bound * n_rows * n_cols)


def log_likelihood(A: np.ndarray, mask: np.ndarray) -> float:
    """Bernoulli log-likelihood of ``mask`` under logits ``A``."""
    return float(np.sum(np.where(mask, A, 0.0) - np.logaddexp(0.0, A)))


def _project_l1(values: np.ndarray, radius: float) -> np.ndarray:
    """Project nonnegative ``values`` onto ``{x >= 0, sum(x) <= radius}``."""
    if values.sum() <= radius:
        return values
    ordered = np.sort(values)[::-1]
    cumulative = np.cumsum(ordered) - radius
    ks = np.arange(1, values.size + 1)
    last = np.flatnonzero(ordered - cumulative / ks > 0)[-1]
    theta = cumulative[last] / (last + 1)
    return np.maximum(values - theta, 0.0)


def _project_nuclear(A: np.ndarray, radius: float) -> np.ndarray:
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.sum() <= radius:
        return A
    return (U * _project_l1(s, radius)) @ Vt


def project(
    A: np.ndarray,
    nuclear_radius: float,
    inf_bound: float,
    tol: float = 1e-9,
    max_rounds: int = 300,
) -> np.ndarray:
    """Euclidean projection onto the intersection of both norm balls.

    Runs Dykstra's alternating projections between the nuclear ball and the
    infinity ball. If projecting onto one ball already lands inside the
    other, that point is the answer. The result satisfies the entrywise
    bound exactly and the nuclear bound to within ``tol * ||A||_F``.
    """
    shrunk = _project_nuclear(A, nuclear_radius)
    if np.abs(shrunk).max() <= inf_bound:
        return shrunk
    clipped = np.clip(A, -inf_bound, inf_bound)
    if np.linalg.svd(clipped, compute_uv=False).sum() <= nuclear_radius:
        return clipped

    scale = max(1.0, float(np.linalg.norm(A)))
    x = A
    p = np.zeros_like(A)
    q = np.zeros_like(A)
    for _ in range(max_rounds):
        y = _project_nuclear(x + p, nuclear_radius)
        p = x + p - y
        x_next = np.clip(y + q, -inf_bound, inf_bound)
        q = y + q - x_next
        moved = float(np.linalg.norm(x_next - x))
        x = x_next
        if moved <= tol * scale and np.linalg.norm(x - y) <= tol * scale:
            break
    else:
        logger.debug("projection stopped after %d rounds", max_rounds)
    return x


def estimate_weights(
    mask: np.ndarray,
    rank_bound: int = DEFAULT_RANK_BOUNDS[0],
    inf_bound: float = DEFAULT_INF_BOUND,
    max_iters: int = 500,
    step: float = 4.0,
    tol: float = 1e-7,
) -> MissingnessModel:
    """Fit the low-rank logistic model to an observation mask.

    Args:
        mask: Boolean grid, true where observed
        rank_bound: ``rho``
        inf_bound: ``nu``
        max_iters: Maximum gradient steps
        step: Initial step size (``4`` is the inverse Lipschitz constant)
        tol: Stop once the relative likelihood change falls below this

    Returns:
        MissingnessModel

    Raises:
        DegenerateMaskError: If nothing or everything is observed
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ParameterError("mask must be a 2-d grid")
    if mask.all() or not mask.any():
        raise DegenerateMaskError("mask must contain both observed and missing entries")
    if rank_bound < 1 or inf_bound <= 0:
        raise ParameterError("rank_bound must be >= 1 and inf_bound positive")

    n_rows, n_cols = mask.shape
    radius = inf_bound * np.sqrt(rank_bound * n_rows * n_cols)
    A = np.full(mask.shape, np.clip(logit(mask.mean()), -inf_bound, inf_bound))
    current = log_likelihood(A, mask)
    trace = [current]
    converged = False

    for iteration in range(max_iters):
        gradient = mask - expit(A)
        eta = step
        for _ in range(30):
            candidate = project(A + eta * gradient, radius, inf_bound)
            value = log_likelihood(candidate, mask)
            if value >= current:
                break
            eta *= 0.5
        else:
            # no ascent at any step: stationary unless a full step still moves A
            moved = np.linalg.norm(project(A + step * gradient, radius, inf_bound) - A)
            converged = moved <= 1e-6 * max(1.0, float(np.linalg.norm(A)))
            logger.debug("line search stalled at iteration %d (move %.3g)", iteration, moved)
            break
        change = value - current
        A, current = candidate, value
        trace.append(current)
        logger.debug("iteration %d: log-likelihood %.8g", iteration + 1, current)
        if change <= tol * abs(current):
            converged = True
            break

    if not converged:
        logger.warning(
            "missingness fit stopped before convergence after %d steps", len(trace) - 1
        )
    return MissingnessModel(
        A_hat=A,
        rank_bound=rank_bound,
        inf_bound=inf_bound,
        w_hat=WeightField(expit(A)),
        likelihood_trace=tuple(trace),
        converged=converged,
    )
