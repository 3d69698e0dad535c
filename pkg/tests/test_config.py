"""Tests for config module."""

import pytest
import yaml

from scmc.config import ExperimentConfig
from scmc.errors import ConfigError


def test_defaults():
    """Test the default experiment."""
    config = ExperimentConfig()

    assert config.suite == "uniform"
    assert config.methods == ("scmc", "unadj", "bonf")
    assert config.effective_gamma == pytest.approx(0.05)
    assert ExperimentConfig.DEFAULTS["k"] == 2
    assert ExperimentConfig.DEFAULTS["weight_mode"] == "fast"
    assert config.obs_mode == "fixed"
    assert config.solver_config.restarts == 3
    assert "DEFAULTS" not in config.to_dict()


def test_from_file(suite_config):
    """Test loading the sample suite file."""
    config = ExperimentConfig.from_file(suite_config)

    assert config.n_rows == 30
    assert config.mu == 15.0
    assert config.methods == ("scmc", "unadj", "bonf")
    assert config.solver_config.rank == 3
    assert config.solver_config.max_iters == 30


def test_overrides_take_priority(suite_config):
    """Test that explicit overrides beat the file and None is ignored."""
    config = ExperimentConfig.from_file(suite_config, k=4, alpha=None, seed=None)

    assert config.k == 4
    assert config.alpha == 0.1
    assert config.seed == 7


def test_methods_string():
    """Test a comma-separated method list."""
    config = ExperimentConfig(methods="scmc, bonf")
    assert config.methods == ("scmc", "bonf")


def test_unknown_key():
    """Test that an unknown key is rejected by name."""
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_mapping({"colour": "red"})


@pytest.mark.parametrize(
    "changes",
    [
        {"alpha": 1.0},
        {"k": 0},
        {"trials": 0},
        {"n_obs": 100 * 100},
        {"rule": "ellipse"},
        {"methods": ("scmc", "oracle")},
        {"methods": ()},
        {"solver": "svt"},
        {"weight_mode": "mcmc"},
        {"obs_mode": "poisson"},
        {"restarts": 0},
        {"suite": "netflix"},
        {"wstar_source": "file"},
        {"suite": "movielens"},
        {"suite": "movielens", "data_path": "u.data", "wstar_source": "worst-slab"},
        {"alpha": "high"},
    ],
)
def test_invalid_values(changes):
    """Test that inconsistent settings are configuration errors."""
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(changes)


def test_invalid_yaml(tmp_path):
    """Test malformed and non-mapping files."""
    bad = tmp_path / "bad.yaml"
    bad.write_text("k: [2\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        ExperimentConfig.from_file(bad)

    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        ExperimentConfig.from_file(listing)

    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.from_file(tmp_path / "absent.yaml")


def test_empty_file_gives_defaults(tmp_path):
    """Test that an empty file is the default config."""
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert ExperimentConfig.from_file(empty) == ExperimentConfig()


def test_dump_reloads(tmp_path, suite_config):
    """Test that a dumped config loads back unchanged."""
    config = ExperimentConfig.from_file(suite_config)
    path = tmp_path / "dumped.yaml"
    path.write_text(config.dump())

    assert yaml.safe_load(config.dump())["methods"] == ["scmc", "unadj", "bonf"]
    assert ExperimentConfig.from_file(path) == config


def test_replace_validates():
    """Test that replace builds a validated copy."""
    config = ExperimentConfig().replace(k=8)
    assert config.k == 8
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(k=0)
