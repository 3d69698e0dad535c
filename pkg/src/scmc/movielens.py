"""MovieLens 100K ingestion.

The ratings file (``u.data``) holds one tab-separated record per line:
user id, item id, rating, timestamp, with 1-based ids. The file is never
downloaded here; pass its path.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, EmptyMatrixError, ParameterError, ParseError
from .matrix import PartialMatrix

logger = logging.getLogger(__name__)

COLUMNS = ["user_id", "item_id", "rating", "timestamp"]
RATING_RANGE = (1.0, 5.0)


def read_ratings(path: str | Path) -> pd.DataFrame:
    """Read and validate a ratings file into a DataFrame with 0-based ids.

    Raises:
        EmptyMatrixError: If the file holds no records
        ParseError: On a malformed line (reported with its line number)
        DataError: On an unreadable file, duplicate (user, item) pairs or
            ratings outside [1, 5]
    """
    path = Path(path)
    try:
        raw = pd.read_csv(
            path, sep="\t", header=None, names=COLUMNS, dtype=str, engine="c"
        )
    except pd.errors.EmptyDataError as e:
        raise EmptyMatrixError(f"{path} contains no ratings") from e
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed ratings file {path}: {e}") from e
    except OSError as e:
        raise DataError(f"cannot read ratings file {path}: {e}") from e
    if raw.empty:
        raise EmptyMatrixError(f"{path} contains no ratings")

    parsed = raw.apply(pd.to_numeric, errors="coerce")
    bad = parsed[COLUMNS[:3]].isna().any(axis=1) | raw["timestamp"].isna()
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise ParseError("expected four tab-separated numeric fields", line=line)

    ids = parsed[["user_id", "item_id"]]
    if (ids % 1 != 0).any(axis=None) or (ids < 1).any(axis=None):
        line = int(np.flatnonzero(((ids % 1 != 0) | (ids < 1)).any(axis=1))[0]) + 1
        raise ParseError("ids must be positive integers", line=line)

    lo, hi = RATING_RANGE
    out_of_range = (parsed["rating"] < lo) | (parsed["rating"] > hi)
    if out_of_range.any():
        line = int(np.flatnonzero(out_of_range.to_numpy())[0]) + 1
        raise DataError(f"line {line}: rating outside [{lo:g}, {hi:g}]")

    duplicated = parsed.duplicated(subset=["user_id", "item_id"])
    if duplicated.any():
        line = int(np.flatnonzero(duplicated.to_numpy())[0]) + 1
        raise DataError(f"line {line}: duplicate (user, item) pair")

    frame = pd.DataFrame(
        {
            "row": parsed["user_id"].astype(np.int64) - 1,
            "col": parsed["item_id"].astype(np.int64) - 1,
            "rating": parsed["rating"].astype(float),
        }
    )
    logger.debug("read %d ratings from %s", len(frame), path)
    return frame


def load_movielens(
    path: str | Path,
    subsample: tuple[int, int] | None = None,
    seed: int | None = None,
) -> PartialMatrix:
    """Load a MovieLens ratings file as a partially observed matrix.

    Args:
        path: Path to ``u.data``
        subsample: Optional ``(n_rows, n_cols)``; keeps that many uniformly
            chosen users and items
        seed: Seed for the subsample

    Returns:
        PartialMatrix of shape (max user id, max item id), or the subsample
    """
    frame = read_ratings(path)
    n_rows = int(frame["row"].max()) + 1
    n_cols = int(frame["col"].max()) + 1
    matrix = PartialMatrix(
        n_rows,
        n_cols,
        frame["row"].to_numpy(),
        frame["col"].to_numpy(),
        frame["rating"].to_numpy(),
    )
    if subsample is None:
        return matrix
    return subsample_matrix(matrix, *subsample, seed=seed)


def subsample_matrix(
    matrix: PartialMatrix, n_rows: int, n_cols: int, seed: int | None = None
) -> PartialMatrix:
    """Keep ``n_rows`` random rows and ``n_cols`` random columns (in order)."""
    if not (1 <= n_rows <= matrix.n_rows and 1 <= n_cols <= matrix.n_cols):
        raise ParameterError(
            f"cannot subsample {n_rows}x{n_cols} from a "
            f"{matrix.n_rows}x{matrix.n_cols} matrix"
        )
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(matrix.n_rows, n_rows, replace=False))
    cols = np.sort(rng.choice(matrix.n_cols, n_cols, replace=False))
    row_map = np.full(matrix.n_rows, -1)
    row_map[rows] = np.arange(n_rows)
    col_map = np.full(matrix.n_cols, -1)
    col_map[cols] = np.arange(n_cols)
    keep = (row_map[matrix.rows] >= 0) & (col_map[matrix.cols] >= 0)
    return PartialMatrix(
        n_rows,
        n_cols,
        row_map[matrix.rows[keep]],
        col_map[matrix.cols[keep]],
        matrix.values[keep],
    )


def split_holdout(
    matrix: PartialMatrix, fraction: float, rng: np.random.Generator
) -> tuple[PartialMatrix, PartialMatrix]:
    """Split observed entries into (kept, held out) with ``fraction`` held out."""
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"holdout fraction must lie in (0, 1), got {fraction}")
    count = int(round(fraction * matrix.observed_count))
    held = np.zeros(matrix.observed_count, dtype=bool)
    held[rng.choice(matrix.observed_count, count, replace=False)] = True
    kept = PartialMatrix(
        matrix.n_rows,
        matrix.n_cols,
        matrix.rows[~held],
        matrix.cols[~held],
        matrix.values[~held],
    )
    holdout = PartialMatrix(
        matrix.n_rows,
        matrix.n_cols,
        matrix.rows[held],
        matrix.cols[held],
        matrix.values[held],
    )
    return kept, holdout
