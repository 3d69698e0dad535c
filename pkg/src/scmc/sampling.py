"""Weighted sampling without replacement over matrix indices.

Two processes drive everything else:

* the successive-sampling model, where each draw picks an index with
  probability proportional to its weight among those not yet drawn, and
* the column-constrained variant, which draws the first index from the
  pruned missing set and the remaining ones from the same column.

All routines take an injected ``numpy.random.Generator`` and never touch
global random state.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence

import numpy as np

from .errors import DomainError, InfeasibleError, ParameterError, SizeError, WeightError
from .matrix import IndexGroup, MatrixIndex, WeightField, flat_to_indices, indices_to_flat

logger = logging.getLogger(__name__)

METHODS = ("race", "sequential")


def weighted_choice(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one position with probability proportional to ``weights``."""
    totals = np.cumsum(weights)
    total = totals[-1]
    if not total > 0:
        raise InfeasibleError("no positive weight to draw from")
    index = int(np.searchsorted(totals, rng.random() * total, side="right"))
    if index >= len(weights):
        # rounding put the draw on the upper boundary
        index = int(np.flatnonzero(weights > 0)[-1])
    return index


def draw_positions(
    weights: np.ndarray, m: int, rng: np.random.Generator, method: str = "race"
) -> np.ndarray:
    """Draw ``m`` ordered positions without replacement, proportional to weight.

    ``race`` gives every item an exponential clock with rate equal to its
    weight and returns the first ``m`` to ring. By memorylessness the ordered
    result has exactly the successive-sampling law, at O(N log N) cost.
    ``sequential`` renormalizes after each draw and inverts the CDF.

    Args:
        weights: Strictly positive weights, one per item
        m: Number of items to draw
        rng: Random generator
        method: ``"race"`` or ``"sequential"``

    Returns:
        Array of ``m`` distinct positions in draw order

    Raises:
        SizeError: If ``m`` exceeds the number of items
        WeightError: If a weight is not strictly positive
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    if m < 0:
        raise ParameterError(f"cannot draw a negative number of items: {m}")
    if m > n:
        raise SizeError(f"cannot draw {m} items from a universe of {n}")
    if n and (weights <= 0).any():
        raise WeightError("weights must be strictly positive on the universe")
    if method not in METHODS:
        raise ParameterError(f"unknown sampling method: {method!r}")
    if m == 0:
        return np.empty(0, dtype=np.int64)

    if method == "race":
        keys = rng.standard_exponential(n) / weights
        if m == n:
            return np.argsort(keys, kind="stable")
        chosen = np.argpartition(keys, m - 1)[:m]
        return chosen[np.argsort(keys[chosen], kind="stable")]

    remaining = weights.copy()
    out = np.empty(m, dtype=np.int64)
    for k in range(m):
        pos = weighted_choice(remaining, rng)
        out[k] = pos
        remaining[pos] = 0.0
    return out


def sample_without_replacement(
    universe: Sequence[MatrixIndex],
    m: int,
    weights: WeightField,
    rng: np.random.Generator,
    method: str = "race",
) -> list[MatrixIndex]:
    """Draw ``m`` distinct indices from ``universe`` by successive sampling.

    The weights do not need to be normalized; the probability of an ordered
    outcome is the telescoping product computed by
    :func:`ordered_draw_log_prob`.
    """
    flat = indices_to_flat(universe, weights.n_rows, weights.n_cols)
    if np.unique(flat).size != flat.size:
        raise DomainError("universe contains duplicate indices")
    pos = draw_positions(weights.at(flat), m, rng, method=method)
    return flat_to_indices(flat[pos], weights.n_cols)


def missing_mask_of(missing: np.ndarray | Iterable[MatrixIndex], shape: tuple[int, int]):
    """Normalize a missing set given as a boolean grid or as indices."""
    if isinstance(missing, np.ndarray) and missing.dtype == bool:
        if missing.shape != shape:
            raise DomainError("missing mask shape does not match the weight field")
        return missing
    mask = np.zeros(shape, dtype=bool)
    flat = indices_to_flat(missing, *shape)
    mask.ravel()[flat] = True
    return mask


def eligible_columns(miss_mask: np.ndarray, K: int, test_weights: WeightField) -> np.ndarray:
    """Columns holding at least ``K`` missing entries with positive test weight.

    Missing entries of these columns form the pruned missing set. Entries with
    zero test weight can never be drawn, so they do not count towards ``K``.
    """
    support = miss_mask & (test_weights.values > 0)
    return support.sum(axis=0) >= K


def sample_column_group(
    missing: np.ndarray | Iterable[MatrixIndex],
    K: int,
    test_weights: WeightField,
    rng: np.random.Generator,
) -> IndexGroup:
    """Draw a test group of ``K`` missing entries sharing one column.

    The first index is drawn from the pruned missing set with probability
    proportional to ``test_weights``; the other ``K - 1`` are drawn by
    successive sampling inside the chosen column.

    Raises:
        InfeasibleError: If the pruned missing set has no positive mass
    """
    if K < 1:
        raise ParameterError(f"group size must be >= 1, got {K}")
    test_weights.require_nonnegative()
    miss_mask = missing_mask_of(missing, test_weights.shape)
    eligible = eligible_columns(miss_mask, K, test_weights)
    if not eligible.any():
        raise InfeasibleError(f"no column has {K} drawable missing entries")

    pruned = (miss_mask & eligible[np.newaxis, :]).ravel()
    first_weights = np.where(pruned, test_weights.flat, 0.0)
    if not first_weights.sum() > 0:
        raise InfeasibleError("pruned missing set has zero test weight")
    first = weighted_choice(first_weights, rng)
    row, col = divmod(first, test_weights.n_cols)
    logger.debug("test group column %d of %d eligible", col, int(eligible.sum()))

    column_rows = np.flatnonzero(miss_mask[:, col] & (test_weights.values[:, col] > 0))
    column_rows = column_rows[column_rows != row]
    rest = draw_positions(test_weights.values[column_rows, col], K - 1, rng)
    return IndexGroup.from_rows([row, *column_rows[rest].tolist()], col)


def ordered_draw_log_prob(
    draws: Sequence[MatrixIndex],
    universe: Iterable[MatrixIndex],
    weights: WeightField,
) -> float:
    """Log probability of an ordered outcome of successive sampling.

    Raises:
        DomainError: If a draw is not in the universe or draws repeat
    """
    universe_flat = indices_to_flat(universe, weights.n_rows, weights.n_cols)
    draws_flat = indices_to_flat(draws, weights.n_rows, weights.n_cols)
    if np.unique(draws_flat).size != draws_flat.size:
        raise DomainError("draws must be distinct")
    if not np.isin(draws_flat, universe_flat).all():
        raise DomainError("draw outside the universe")
    weights.require_positive(universe_flat)
    total = weights.at(np.unique(universe_flat)).sum()
    w = weights.at(draws_flat)
    removed = np.concatenate(([0.0], np.cumsum(w)[:-1]))
    return float(np.sum(np.log(w) - np.log(total - removed)))
