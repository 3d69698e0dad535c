"""Data model for partially observed matrices.

Indices are 0-based everywhere inside the package. Internally most routines
work on flat positions ``row * n_cols + col``; the classes here convert
between the two views.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, EmptyMatrixError, ParameterError, WeightError


class MatrixIndex(NamedTuple):
    """A (row, col) position in a matrix."""

    row: int
    col: int


def to_flat(rows: np.ndarray, cols: np.ndarray, n_cols: int) -> np.ndarray:
    """Convert row/column arrays into flat positions."""
    return np.asarray(rows, dtype=np.int64) * n_cols + np.asarray(cols, dtype=np.int64)


def from_flat(flat: np.ndarray, n_cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Split flat positions into (rows, cols)."""
    flat = np.asarray(flat, dtype=np.int64)
    return flat // n_cols, flat % n_cols


def indices_to_flat(indices: Iterable[MatrixIndex], n_rows: int, n_cols: int) -> np.ndarray:
    """Validate a collection of indices and return their flat positions.

    Raises:
        DomainError: If an index falls outside the matrix
    """
    pairs = np.array([tuple(ix) for ix in indices], dtype=np.int64).reshape(-1, 2)
    if pairs.size and (
        (pairs[:, 0] < 0).any()
        or (pairs[:, 0] >= n_rows).any()
        or (pairs[:, 1] < 0).any()
        or (pairs[:, 1] >= n_cols).any()
    ):
        raise DomainError(f"index out of range for a {n_rows}x{n_cols} matrix")
    return to_flat(pairs[:, 0], pairs[:, 1], n_cols)


def flat_to_indices(flat: np.ndarray, n_cols: int) -> list[MatrixIndex]:
    rows, cols = from_flat(flat, n_cols)
    return [MatrixIndex(int(r), int(c)) for r, c in zip(rows, cols, strict=True)]


@dataclass(frozen=True, eq=False)
class PartialMatrix:
    """A matrix observed on a subset of its entries.

    Attributes:
        n_rows: Number of rows
        n_cols: Number of columns
        rows: Row index of each observed entry
        cols: Column index of each observed entry
        values: Observed value of each entry
    """

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ParameterError("matrix dimensions must be positive")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise DomainError("rows, cols and values must be 1-d arrays of equal length")
        if rows.size and (
            rows.min() < 0
            or rows.max() >= self.n_rows
            or cols.min() < 0
            or cols.max() >= self.n_cols
        ):
            raise DomainError(
                f"observed index out of range for a {self.n_rows}x{self.n_cols} matrix"
            )
        flat = to_flat(rows, cols, self.n_cols)
        if np.unique(flat).size != flat.size:
            raise DomainError("duplicate observed index")
        for name, arr in (("rows", rows), ("cols", cols), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_entries(
        cls, n_rows: int, n_cols: int, entries: Mapping[MatrixIndex | tuple, float]
    ) -> PartialMatrix:
        """Build a matrix from a ``{(row, col): value}`` mapping."""
        keys = list(entries)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        values = np.array([entries[k] for k in keys], dtype=float)
        return cls(n_rows, n_cols, rows, cols, values)

    @classmethod
    def from_dense(cls, full: np.ndarray, mask: np.ndarray) -> PartialMatrix:
        """Restrict a dense matrix to the entries where ``mask`` is true."""
        full = np.asarray(full, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        if full.shape != mask.shape or full.ndim != 2:
            raise DomainError("matrix and mask shapes differ")
        rows, cols = np.nonzero(mask)
        return cls(full.shape[0], full.shape[1], rows, cols, full[rows, cols])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def observed_count(self) -> int:
        return int(self.rows.size)

    @property
    def flat(self) -> np.ndarray:
        return to_flat(self.rows, self.cols, self.n_cols)

    @property
    def mask(self) -> np.ndarray:
        """Boolean grid, true on observed entries."""
        grid = np.zeros(self.shape, dtype=bool)
        grid[self.rows, self.cols] = True
        return grid

    def indices(self) -> list[MatrixIndex]:
        return [
            MatrixIndex(int(r), int(c)) for r, c in zip(self.rows, self.cols, strict=True)
        ]

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        grid = np.full(self.shape, fill, dtype=float)
        grid[self.rows, self.cols] = self.values
        return grid

    def column_counts(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n_cols)

    def subset(self, flat: np.ndarray) -> PartialMatrix:
        """Restrict to the observed entries at the given flat positions."""
        flat = np.asarray(flat, dtype=np.int64)
        dense = self.to_dense()
        rows, cols = from_flat(flat, self.n_cols)
        values = dense[rows, cols]
        if np.isnan(values).any():
            raise DomainError("subset contains unobserved entries")
        return PartialMatrix(self.n_rows, self.n_cols, rows, cols, values)

    def require_nonempty(self) -> None:
        if self.observed_count == 0:
            raise EmptyMatrixError("matrix has no observed entries")


@dataclass(frozen=True, eq=False)
class WeightField:
    """Per-entry sampling weights over the full grid.

    A sampling field ``w`` must be strictly positive; a test field ``w*``
    only needs to be nonnegative. Use :meth:`require_positive` and
    :meth:`require_nonnegative` to check the variant you need.
    """

    values: np.ndarray
    n_rows: int = field(init=False)
    n_cols: int = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DomainError("weight field must be a 2-d grid")
        if not np.isfinite(values).all():
            raise WeightError("weights must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "n_rows", values.shape[0])
        object.__setattr__(self, "n_cols", values.shape[1])

    @classmethod
    def uniform(cls, n_rows: int, n_cols: int) -> WeightField:
        return cls(np.ones((n_rows, n_cols)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def at(self, flat: np.ndarray) -> np.ndarray:
        return self.flat[np.asarray(flat, dtype=np.int64)]

    def require_positive(self, flat: np.ndarray | None = None) -> None:
        """Raise WeightError unless weights are > 0 (on ``flat`` or everywhere)."""
        w = self.flat if flat is None else self.at(flat)
        if (w <= 0).any():
            raise WeightError("sampling weights must be strictly positive")

    def require_nonnegative(self) -> None:
        if (self.values < 0).any():
            raise WeightError("test weights must be nonnegative")


@dataclass(frozen=True)
class IndexGroup:
    """K distinct indices sharing one column, in draw order."""

    indices: tuple[MatrixIndex, ...]

    def __post_init__(self):
        indices = tuple(MatrixIndex(int(r), int(c)) for r, c in self.indices)
        if not indices:
            raise DomainError("index group must not be empty")
        if len(set(indices)) != len(indices):
            raise DomainError("index group entries must be distinct")
        if len({ix.col for ix in indices}) != 1:
            raise DomainError("index group entries must share one column")
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_rows(cls, rows: Sequence[int], col: int) -> IndexGroup:
        return cls(tuple(MatrixIndex(int(r), int(col)) for r in rows))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def K(self) -> int:  # noqa: N802
        return len(self.indices)

    @property
    def col(self) -> int:
        return self.indices[0].col

    @property
    def rows(self) -> np.ndarray:
        return np.array([ix.row for ix in self.indices], dtype=np.int64)

    def flat(self, n_cols: int) -> np.ndarray:
        return self.rows * n_cols + self.col
