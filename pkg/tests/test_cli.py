"""Tests for CLI module."""

import numpy as np
import pandas as pd
import pytest

from scmc.cli import create_parser, main
from scmc.errors import ConfigError
from scmc.experiment import METRIC_COLUMNS


def test_create_parser():
    """Test parser creation."""
    parser = create_parser()

    assert parser.prog == "scmc"
    assert parser.description is not None


def test_parser_requires_command():
    """Test that a subcommand is required."""
    parser = create_parser()

    with pytest.raises(SystemExit) as exc_info:
        parser.parse_args([])

    assert exc_info.value.code == 2


def test_parser_common_options():
    """Test options shared by every subcommand."""
    parser = create_parser()

    args = parser.parse_args(
        ["synthetic", "-v", "--seed", "3", "--k", "4", "--rule", "rect", "--methods", "scmc"]
    )
    assert args.command == "synthetic"
    assert args.verbose is True
    assert args.seed == 3
    assert args.k == 4
    assert args.rule == "rect"
    assert args.methods == "scmc"
    assert args.config is None
    assert args.out is None


def test_parser_rejects_unknown_rule():
    """Test --rule choices."""
    parser = create_parser()

    with pytest.raises(SystemExit):
        parser.parse_args(["synthetic", "--rule", "ellipse"])


def test_parser_movielens_needs_data():
    """Test that the movielens command requires --data."""
    parser = create_parser()

    with pytest.raises(SystemExit):
        parser.parse_args(["movielens"])

    args = parser.parse_args(["movielens", "--data", "u.data", "--holdout-frac", "0.3"])
    assert args.data == "u.data"
    assert args.holdout_frac == 0.3


def test_parser_estimate_weights_defaults():
    """Test estimate-weights default bounds."""
    parser = create_parser()

    args = parser.parse_args(["estimate-weights", "--data", "u.data", "-o", "w.txt"])

    assert args.rank == 3
    assert args.nu == 4.0
    assert args.subsample is None


def test_parser_version(capsys):
    """Test --version flag."""
    parser = create_parser()

    with pytest.raises(SystemExit) as exc_info:
        parser.parse_args(["--version"])

    assert exc_info.value.code == 0

    captured = capsys.readouterr()
    assert "scmc" in captured.out


def test_main_synthetic(suite_config, tmp_output):
    """Test a synthetic run written to CSV."""
    out = tmp_output / "coverage.csv"

    result = main(["synthetic", "-c", str(suite_config), "--seed", "1", "-o", str(out)])

    assert result == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == METRIC_COLUMNS
    assert frame["method"].tolist() == ["scmc", "unadj", "bonf"]


def test_main_synthetic_stdout(suite_config, capsys):
    """Test that rows go to stdout without --out."""
    result = main(["synthetic", "-c", str(suite_config), "--methods", "scmc"])

    assert result == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines()[0] == ",".join(METRIC_COLUMNS)
    assert len(captured.out.splitlines()) == 2


def test_main_verbose(suite_config, tmp_output, capsys):
    """Test main function with verbose flag."""
    out = tmp_output / "coverage.json"

    result = main(["synthetic", "-v", "-c", str(suite_config), "--methods", "scmc", "-o", str(out)])

    assert result == 0
    assert out.exists()

    captured = capsys.readouterr()
    assert ":: Config :::" in captured.out
    assert ":: Output :::" in captured.out


def test_main_bad_config_key(tmp_path):
    """Test that an unknown config key exits with the config error code."""
    config = tmp_path / "bad.yaml"
    config.write_text("colour: red\n")

    assert main(["synthetic", "-c", str(config)]) == 2


def test_main_missing_data_file(tmp_path, capsys):
    """Test that an unreadable ratings file exits with the data error code."""
    result = main(["movielens", "--data", str(tmp_path / "absent.data")])

    assert result == 3
    assert "Error:" in capsys.readouterr().err


def test_main_estimate_weights(ratings_path, tmp_output):
    """Test writing an estimated weight grid."""
    out = tmp_output / "w_hat.txt"

    result = main(["estimate-weights", "--data", str(ratings_path), "--rank", "1", "-o", str(out)])

    assert result == 0
    grid = np.loadtxt(out, ndmin=2)
    assert grid.shape == (5, 6)
    assert ((grid > 0) & (grid < 1)).all()


def test_main_upper_bound(suite_config, tmp_output):
    """Test the upper-bound command."""
    config = tmp_output / "bound.yaml"
    config.write_text(suite_config.read_text() + "upper_bound_ns: [10, 20]\n")
    out = tmp_output / "bound.csv"

    result = main(["upper-bound", "-c", str(config), "-o", str(out)])

    assert result == 0
    frame = pd.read_csv(out)
    assert frame.columns.tolist() == ["n", "k", "mean_max_p", "reference", "trials"]


def test_main_error_handling_verbose(tmp_path):
    """Test error handling in verbose mode."""
    # In verbose mode, exceptions are re-raised
    config = tmp_path / "bad.yaml"
    config.write_text("alpha: 2.0\n")

    with pytest.raises(ConfigError):
        main(["synthetic", "-v", "-c", str(config)])
