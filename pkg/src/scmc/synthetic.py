"""Synthetic matrices, sampling-weight fields and adversarial test weights."""

from __future__ import annotations

import logging

import numpy as np
from scipy import stats

from .completion import CompletionEstimate
from .errors import DomainError, ParameterError
from .matrix import PartialMatrix, WeightField
from .sampling import draw_positions

logger = logging.getLogger(__name__)

SLAB_GRID = 40
# share of the missing set used to fit worst-slab test weights
SLAB_HOLDOUT_FRAC = 0.25


def low_rank(n_rows: int, n_cols: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Product of two i.i.d. standard normal factors of the given rank."""
    if rank < 1:
        raise ParameterError(f"rank must be >= 1, got {rank}")
    U = rng.standard_normal((n_rows, rank))
    V = rng.standard_normal((n_cols, rank))
    return U @ V.T


def gen_uniform_synthetic(
    n_rows: int,
    n_cols: int,
    rank: int = 5,
    mu: float = 0.0,
    gamma: float = 0.05,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Low-rank signal plus noise with heavy column-level outliers.

    ``M = 0.5 * U V^T + 0.5 * N`` where ``N = 0.1 * eps + 0.9 * 1 eps_col^T``,
    ``eps`` i.i.d. standard normal and each column constant drawn from the
    mixture ``(1 - gamma) N(0, 1) + gamma N(mu, 0.1^2)``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError(f"gamma must lie in [0, 1], got {gamma}")
    rng = np.random.default_rng(rng)
    signal = low_rank(n_rows, n_cols, rank, rng)
    outlier = rng.random(n_cols) < gamma
    column_noise = np.where(
        outlier, rng.normal(mu, 0.1, n_cols), rng.standard_normal(n_cols)
    )
    noise = 0.1 * rng.standard_normal((n_rows, n_cols)) + 0.9 * column_noise
    return 0.5 * signal + 0.5 * noise


def gen_hetero_synthetic(
    n_rows: int,
    n_cols: int,
    rank: int = 8,
    mu: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Rank-``rank`` signal plus i.i.d. ``N(mu, 0.1^2)`` noise."""
    rng = np.random.default_rng(rng)
    return low_rank(n_rows, n_cols, rank, rng) + rng.normal(mu, 0.1, (n_rows, n_cols))


def gen_hetero_weights(
    n_rows: int,
    n_cols: int,
    s: float,
    gamma: float,
    rng: np.random.Generator | None = None,
) -> WeightField:
    """Column-constant weights: ``s`` on a Bernoulli(``gamma``) subset, else 1."""
    if not 0.0 < s <= 1.0:
        raise ParameterError(f"s must lie in (0, 1], got {s}")
    rng = np.random.default_rng(rng)
    sparse = rng.random(n_cols) < gamma
    return WeightField(np.tile(np.where(sparse, s, 1.0), (n_rows, 1)))


def gen_power_weights(n_rows: int, n_cols: int, s: float = 2.0) -> WeightField:
    """Weights ``(n_rows * col + row + 1) ** s`` growing along the flattened
    column-major order."""
    rows = np.arange(n_rows)[:, np.newaxis]
    cols = np.arange(n_cols)[np.newaxis, :]
    return WeightField((n_rows * cols + rows + 1.0) ** s)


def observe(
    full: np.ndarray, n_obs: int, w: WeightField, rng: np.random.Generator
) -> PartialMatrix:
    """Observe ``n_obs`` entries of ``full`` by successive weighted sampling."""
    full = np.asarray(full, dtype=float)
    if full.shape != w.shape:
        raise DomainError("matrix and weight field shapes differ")
    w.require_positive()
    flat = draw_positions(w.flat, n_obs, rng)
    mask = np.zeros(full.size, dtype=bool)
    mask[flat] = True
    return PartialMatrix.from_dense(full, mask.reshape(full.shape))


def observe_bernoulli(
    full: np.ndarray, probabilities: WeightField, rng: np.random.Generator
) -> PartialMatrix:
    """Observe each entry independently with the given probability."""
    p = probabilities.values
    if (p < 0).any() or (p > 1).any():
        raise DomainError("observation probabilities must lie in [0, 1]")
    return PartialMatrix.from_dense(full, rng.random(p.shape) < p)


def _uniform_fallback(shape: tuple[int, int], reason: str) -> WeightField:
    logger.warning("worst-slab weights fall back to uniform: %s", reason)
    return WeightField(np.ones(shape))


def worst_slab_weights(
    M: np.ndarray,
    estimate: CompletionEstimate,
    holdout: np.ndarray,
    delta: float,
) -> WeightField:
    """Test weights concentrated on the slab where the estimate is worst.

    Latent features of entry ``(r, c)`` are ``(U_r, V_c)`` from the estimate's
    factors. On the holdout entries, ``|M_hat - M|`` is regressed on the
    features; along the fitted direction ``v``, the slab ``[a, b]`` holding
    at least a ``delta`` fraction of the holdout with the largest mean
    residual is selected. Weights are 1 inside the slab and decay as a
    Gaussian of width ``(b - a) / 5`` outside.

    Args:
        M: Ground-truth matrix
        estimate: Estimate with factors
        holdout: Boolean grid of missing entries used for the fit
        delta: Minimum slab mass in (0, 1]

    Returns:
        WeightField with values in (0, 1]
    """
    if not 0.0 < delta <= 1.0:
        raise ParameterError(f"slab mass must lie in (0, 1], got {delta}")
    shape = estimate.shape
    if estimate.factors is None:
        return _uniform_fallback(shape, "estimate has no latent factors")
    if delta >= 1.0:
        return WeightField(np.ones(shape))

    U, V = estimate.factors
    holdout = np.asarray(holdout, dtype=bool)
    rows, cols = np.nonzero(holdout)
    if rows.size < 2:
        return _uniform_fallback(shape, "holdout is too small")
    features = np.hstack([U[rows], V[cols]])
    target = np.abs(estimate.estimate[rows, cols] - np.asarray(M)[rows, cols])
    design = np.hstack([np.ones((rows.size, 1)), features])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    direction = coef[1:]
    z = features @ direction
    if not np.isfinite(z).all() or np.ptp(z) <= 1e-12 * max(1.0, np.abs(z).max()):
        return _uniform_fallback(shape, "latent features are degenerate")

    edges = np.quantile(z, np.linspace(0.0, 1.0, SLAB_GRID + 1))
    order = np.argsort(z)
    z_sorted, r_sorted = z[order], target[order]
    prefix = np.concatenate(([0.0], np.cumsum(r_sorted)))
    best, best_ab = -np.inf, (edges[0], edges[-1])
    for i, a in enumerate(edges[:-1]):
        lo = np.searchsorted(z_sorted, a, side="left")
        for b in edges[i + 1 :]:
            hi = np.searchsorted(z_sorted, b, side="right")
            count = hi - lo
            if count < delta * z.size:
                continue
            mean = (prefix[hi] - prefix[lo]) / count
            if mean > best:
                best, best_ab = mean, (a, b)
    a, b = best_ab
    sigma = (b - a) / 5.0
    if not sigma > 0:
        return _uniform_fallback(shape, "selected slab has zero width")

    rank = U.shape[1]
    projection = (U @ direction[:rank])[:, np.newaxis] + (V @ direction[rank:])[
        np.newaxis, :
    ]
    peak = stats.norm.pdf(0.0, scale=sigma)
    outside = np.where(
        projection < a,
        stats.norm.pdf(projection, loc=a, scale=sigma),
        stats.norm.pdf(projection, loc=b, scale=sigma),
    )
    inside = (projection >= a) & (projection <= b)
    values = np.where(inside, 1.0, outside / peak)
    logger.debug("worst slab [%.4g, %.4g] mean residual %.4g", a, b, best)
    return WeightField(values)


def worst_slab_test_weights(
    M: np.ndarray,
    estimate: CompletionEstimate,
    missing: np.ndarray,
    delta: float,
    rng: np.random.Generator,
    holdout_frac: float = SLAB_HOLDOUT_FRAC,
) -> WeightField:
    """Worst-slab weights fitted on a random part of the missing set.

    A ``holdout_frac`` share of ``missing`` is drawn uniformly to fit the
    slab. The returned weights are zero on that holdout, so test groups drawn
    with them and the conformal weights computed from them both range over
    the remaining missing entries only.

    Raises:
        ParameterError: If ``holdout_frac`` is outside (0, 1)
    """
    if not 0.0 < holdout_frac < 1.0:
        raise ParameterError(f"holdout share must lie in (0, 1), got {holdout_frac}")
    missing = np.asarray(missing, dtype=bool)
    candidates = np.flatnonzero(missing.ravel())
    count = int(round(holdout_frac * candidates.size))
    holdout = np.zeros(missing.size, dtype=bool)
    holdout[rng.choice(candidates, count, replace=False)] = True
    holdout = holdout.reshape(missing.shape)
    w_star = worst_slab_weights(M, estimate, holdout, delta)
    logger.debug("worst-slab holdout of %d of %d missing entries", count, candidates.size)
    return WeightField(np.where(holdout, 0.0, w_star.values))
