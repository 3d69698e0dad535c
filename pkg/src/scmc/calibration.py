"""Structured calibration: split the observed entries into pruned entries,
single-column calibration groups and the training set."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CapacityError, ParameterError
from .matrix import IndexGroup, MatrixIndex, PartialMatrix, flat_to_indices, to_flat

logger = logging.getLogger(__name__)

MAX_RULE_OF_THUMB = 1000


@dataclass(frozen=True, eq=False)
class CalibrationPlan:
    """Partition of the observed entries produced by :func:`assemble_calibration`.

    Attributes:
        n_rows: Rows of the underlying matrix
        n_cols: Columns of the underlying matrix
        K: Group size
        group_rows: (n, K) row indices of each group, in draw order
        group_cols: (n,) column of each group
        train_flat: Flat positions of the training set (includes the pruned set)
        pruned_flat: Flat positions of the pruned entries
    """

    n_rows: int
    n_cols: int
    K: int
    group_rows: np.ndarray
    group_cols: np.ndarray
    train_flat: np.ndarray
    pruned_flat: np.ndarray

    @property
    def n(self) -> int:
        return int(self.group_cols.size)

    @cached_property
    def groups(self) -> tuple[IndexGroup, ...]:
        return tuple(
            IndexGroup.from_rows(rows, col)
            for rows, col in zip(self.group_rows, self.group_cols, strict=True)
        )

    @property
    def group_flat(self) -> np.ndarray:
        """(n, K) flat positions of the groups."""
        return to_flat(self.group_rows, self.group_cols[:, np.newaxis], self.n_cols)

    @property
    def train(self) -> list[MatrixIndex]:
        return flat_to_indices(self.train_flat, self.n_cols)

    @property
    def pruned(self) -> list[MatrixIndex]:
        return flat_to_indices(self.pruned_flat, self.n_cols)

    def train_matrix(self, obs: PartialMatrix) -> PartialMatrix:
        """The observed values restricted to the training set."""
        return obs.subset(self.train_flat)


def _column_counts(obs: PartialMatrix | np.ndarray) -> np.ndarray:
    if isinstance(obs, PartialMatrix):
        return obs.column_counts()
    return np.asarray(obs, dtype=bool).sum(axis=0)


def max_calibration_groups(obs: PartialMatrix | np.ndarray, K: int) -> int:
    """Largest number of size-``K`` groups: sum over columns of floor(count / K)."""
    if K < 1:
        raise ParameterError(f"group size must be >= 1, got {K}")
    return int(np.sum(_column_counts(obs) // K))


def rule_of_thumb_groups(obs: PartialMatrix | np.ndarray, K: int) -> int:
    """Default calibration size ``min(1000, floor(xi / 2))``."""
    return min(MAX_RULE_OF_THUMB, max_calibration_groups(obs, K) // 2)


def assemble_calibration(
    obs: PartialMatrix, n: int, K: int, rng: np.random.Generator
) -> CalibrationPlan:
    """Draw ``n`` calibration groups of size ``K`` from the observed entries.

    Each column first sheds ``count mod K`` uniformly chosen entries into the
    pruned set, so every remaining column count is a multiple of ``K``. Groups
    are then drawn one at a time: the first index uniformly over all available
    entries, the remaining ``K - 1`` uniformly without replacement from its
    column. Whatever is left, together with the pruned entries, is the
    training set.

    Args:
        obs: Observed entries
        n: Number of groups
        K: Group size
        rng: Random generator

    Returns:
        CalibrationPlan

    Raises:
        CapacityError: If ``n`` exceeds :func:`max_calibration_groups`
    """
    if K < 1:
        raise ParameterError(f"group size must be >= 1, got {K}")
    if n < 1:
        raise ParameterError(f"number of calibration groups must be >= 1, got {n}")
    capacity = max_calibration_groups(obs, K)
    if n > capacity:
        raise CapacityError(
            f"requested {n} calibration groups of size {K}, at most {capacity} fit"
        )

    order = np.lexsort((obs.rows, obs.cols))
    rows_sorted = obs.rows[order]
    counts = obs.column_counts()
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))

    pruned: list[np.ndarray] = []
    available: list[np.ndarray] = []
    # columns in ascending order so a seed fixes the plan
    for col in range(obs.n_cols):
        column_rows = rows_sorted[starts[col] : starts[col] + counts[col]]
        shuffled = rng.permutation(column_rows)
        m = counts[col] % K
        pruned.append(to_flat(shuffled[:m], np.full(m, col), obs.n_cols))
        # a uniform permutation read from the end gives uniform ordered draws
        available.append(shuffled[m:])

    avail_counts = np.array([a.size for a in available], dtype=np.int64)
    taken = np.zeros(obs.n_cols, dtype=np.int64)
    group_rows = np.empty((n, K), dtype=np.int64)
    group_cols = np.empty(n, dtype=np.int64)
    for i in range(n):
        remaining = avail_counts - taken
        totals = np.cumsum(remaining)
        col = int(np.searchsorted(totals, rng.random() * totals[-1], side="right"))
        col = min(col, obs.n_cols - 1)
        end = avail_counts[col] - taken[col]
        group_rows[i] = available[col][end - K : end][::-1]
        group_cols[i] = col
        taken[col] += K

    leftover = [
        to_flat(available[col][: avail_counts[col] - taken[col]], col, obs.n_cols)
        for col in range(obs.n_cols)
    ]
    pruned_flat = np.sort(np.concatenate(pruned)).astype(np.int64)
    train_flat = np.sort(np.concatenate([pruned_flat, *leftover])).astype(np.int64)
    logger.debug(
        "calibration: n=%d K=%d pruned=%d train=%d",
        n,
        K,
        pruned_flat.size,
        train_flat.size,
    )
    return CalibrationPlan(
        n_rows=obs.n_rows,
        n_cols=obs.n_cols,
        K=K,
        group_rows=group_rows,
        group_cols=group_cols,
        train_flat=train_flat,
        pruned_flat=pruned_flat,
    )
