"""Tests for movielens module."""

import os

import numpy as np
import pytest

from scmc.errors import DataError, EmptyMatrixError, ParameterError, ParseError
from scmc.movielens import load_movielens, read_ratings, split_holdout, subsample_matrix


def _write(tmp_path, text):
    path = tmp_path / "u.data"
    path.write_text(text)
    return path


def test_load_sample(ratings_path):
    """Test loading the sample ratings file."""
    matrix = load_movielens(ratings_path)

    assert matrix.shape == (5, 6)
    assert matrix.observed_count == 12
    dense = matrix.to_dense()
    assert dense[0, 0] == 5.0
    assert dense[4, 4] == 4.0
    assert np.isnan(dense[0, 2])


def test_read_ratings_zero_based(ratings_path):
    """Test that ids are shifted to 0-based positions."""
    frame = read_ratings(ratings_path)

    assert list(frame.columns) == ["row", "col", "rating"]
    assert frame["row"].min() == 0
    assert frame["col"].max() == 5


def test_empty_file(tmp_path):
    """Test that an empty file is an empty-matrix error."""
    with pytest.raises(EmptyMatrixError):
        read_ratings(_write(tmp_path, ""))


def test_malformed_line(tmp_path):
    """Test that a bad line is reported with its number."""
    path = _write(tmp_path, "1\t1\t5\t100\n1\t2\tfive\t101\n")

    with pytest.raises(ParseError) as info:
        read_ratings(path)

    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_missing_field(tmp_path):
    """Test that a short line is a parse error."""
    with pytest.raises(ParseError) as info:
        read_ratings(_write(tmp_path, "1\t1\t5\t100\n2\t1\t4\n"))
    assert info.value.line == 2


def test_non_positive_id(tmp_path):
    """Test that ids must be 1-based integers."""
    with pytest.raises(ParseError, match="positive integers"):
        read_ratings(_write(tmp_path, "0\t1\t5\t100\n"))


def test_rating_out_of_range(tmp_path):
    """Test that ratings must lie in [1, 5]."""
    with pytest.raises(DataError, match="line 1"):
        read_ratings(_write(tmp_path, "1\t1\t6\t100\n"))


def test_duplicate_pair(tmp_path):
    """Test that a repeated (user, item) pair is rejected."""
    with pytest.raises(DataError, match="duplicate"):
        read_ratings(_write(tmp_path, "1\t1\t5\t100\n1\t1\t4\t200\n"))


def test_missing_file(tmp_path):
    """Test that an unreadable path is a data error."""
    with pytest.raises(DataError):
        read_ratings(tmp_path / "absent.data")


def test_subsample(ratings_path):
    """Test that a subsample keeps entries of the chosen rows and columns."""
    matrix = load_movielens(ratings_path)

    a = subsample_matrix(matrix, 3, 4, seed=1)
    b = load_movielens(ratings_path, subsample=(3, 4), seed=1)

    assert a.shape == (3, 4)
    assert np.array_equal(a.flat, b.flat)
    assert np.array_equal(a.values, b.values)
    assert set(a.values.tolist()) <= set(matrix.values.tolist())
    with pytest.raises(ParameterError):
        subsample_matrix(matrix, 6, 4)


def test_split_holdout(ratings_path, rng):
    """Test that the split partitions the observed entries."""
    matrix = load_movielens(ratings_path)

    kept, holdout = split_holdout(matrix, 0.25, rng)

    assert kept.observed_count == 9
    assert holdout.observed_count == 3
    assert not (kept.mask & holdout.mask).any()
    assert np.array_equal(kept.mask | holdout.mask, matrix.mask)
    with pytest.raises(ParameterError):
        split_holdout(matrix, 1.0, rng)


@pytest.mark.skipif("MOVIELENS_PATH" not in os.environ, reason="MOVIELENS_PATH not set")
def test_full_dataset():
    """Test the published 100K ratings file."""
    matrix = load_movielens(os.environ["MOVIELENS_PATH"])

    assert matrix.shape == (943, 1682)
    assert matrix.observed_count == 100_000
    assert 1 - matrix.observed_count / (943 * 1682) == pytest.approx(0.937, abs=0.005)
