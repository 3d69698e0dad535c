"""Experiment configuration.

Settings come, from lowest to highest priority, from
:attr:`ExperimentConfig.DEFAULTS`, a flat YAML file of ``key: value`` pairs
and explicit overrides (the CLI flags). Every default follows the
experiment protocols the package was built to reproduce.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar

import yaml

from .completion import SOLVERS, SolverConfig
from .conformal import Method, PredictionRule
from .errors import ConfigError
from .weights import MODES

SUITES = ("uniform", "hetero", "movielens")
W_SOURCES = ("uniform", "hetero", "power", "estimated")
WSTAR_SOURCES = ("uniform", "worst-slab", "file", "w")
WSTAR_ASSUMED = ("same", "uniform")
OBS_MODES = ("fixed", "bernoulli")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data, observation, calibration, methods and trials."""

    suite: str = "uniform"
    n_rows: int = 100
    n_cols: int = 100
    rank_true: int = 5
    mu: float = 0.0
    gamma: float | None = None
    s: float = 0.1
    n_obs: int = 2000
    obs_mode: str = "fixed"
    w_source: str = "uniform"
    power_s: float = 2.0
    rank_bound: int = 3
    inf_bound: float = 4.0
    n_calib: int | None = None
    k: int = 2
    rule: str = "cube"
    alpha: float = 0.1
    methods: tuple[str, ...] = ("scmc", "unadj", "bonf")
    trials: int = 100
    seed: int = 0
    threads: int = 1
    n_test: int = 100
    wstar_source: str = "uniform"
    wstar_assumed: str = "same"
    slab_delta: float = 0.2
    wstar_file: str | None = None
    solver: str = "als"
    rank: int = 5
    reg: float = 0.1
    max_iters: int = 100
    tol: float = 1e-6
    restarts: int = 3
    data_path: str | None = None
    holdout_frac: float = 0.2
    subsample_rows: int | None = 800
    subsample_cols: int | None = 1000
    upper_bound_ns: tuple[int, ...] = (100, 200, 400)
    upper_bound_ks: tuple[int, ...] = ()
    weight_mode: str = "fast"

    DEFAULTS: ClassVar[dict[str, Any]]

    def __post_init__(self):
        if isinstance(self.methods, str):
            object.__setattr__(self, "methods", tuple(self.methods.split(",")))
        object.__setattr__(self, "methods", tuple(m.strip() for m in self.methods))
        object.__setattr__(self, "upper_bound_ns", tuple(int(n) for n in self.upper_bound_ns))
        object.__setattr__(self, "upper_bound_ks", tuple(int(k) for k in self.upper_bound_ks))
        self.validate()

    @property
    def effective_gamma(self) -> float:
        """Column-outlier rate; half of ``alpha`` unless set."""
        return self.alpha / 2 if self.gamma is None else self.gamma

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            name=self.solver,
            rank=self.rank,
            regularization=self.reg,
            max_iters=self.max_iters,
            tol=self.tol,
            restarts=self.restarts,
            seed=self.seed,
        )

    def validate(self) -> None:
        """Raise ConfigError on any inconsistent setting."""

        def check(condition: bool, message: str):
            if not condition:
                raise ConfigError(message)

        check(self.suite in SUITES, f"suite must be one of {SUITES}, got {self.suite!r}")
        check(self.w_source in W_SOURCES, f"w_source must be one of {W_SOURCES}")
        check(
            self.wstar_source in WSTAR_SOURCES,
            f"wstar_source must be one of {WSTAR_SOURCES}",
        )
        check(self.wstar_assumed in WSTAR_ASSUMED, f"wstar_assumed must be one of {WSTAR_ASSUMED}")
        check(self.obs_mode in OBS_MODES, f"obs_mode must be one of {OBS_MODES}")
        check(self.restarts >= 1, "restarts must be >= 1")
        check(self.wstar_source != "file" or self.wstar_file, "wstar_source=file needs wstar_file")
        check(
            self.suite != "movielens" or self.wstar_source in ("uniform", "file"),
            "movielens runs take uniform or file test weights",
        )
        check(
            self.suite != "movielens" or self.data_path, "movielens runs need data_path"
        )
        check(all(n >= 1 for n in self.upper_bound_ns), "upper_bound_ns must be positive")
        check(all(k >= 1 for k in self.upper_bound_ks), "upper_bound_ks must be positive")
        check(self.trials >= 1, "trials must be >= 1")
        check(0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)")
        check(self.k >= 1, "k must be >= 1")
        check(self.n_test >= 1, "n_test must be >= 1")
        check(self.threads >= 1, "threads must be >= 1")
        check(self.n_calib is None or self.n_calib >= 1, "n_calib must be >= 1")
        check(self.n_rows >= 1 and self.n_cols >= 1, "matrix dimensions must be positive")
        check(
            self.suite == "movielens" or 0 < self.n_obs < self.n_rows * self.n_cols,
            "n_obs must lie strictly between 0 and n_rows * n_cols",
        )
        check(0.0 < self.slab_delta <= 1.0, "slab_delta must lie in (0, 1]")
        check(0.0 < self.holdout_frac < 1.0, "holdout_frac must lie in (0, 1)")
        check(0.0 < self.s <= 1.0, "s must lie in (0, 1]")
        check(self.gamma is None or 0.0 <= self.gamma <= 1.0, "gamma must lie in [0, 1]")
        check(self.rank_bound >= 1 and self.inf_bound > 0, "invalid missingness bounds")
        check(self.solver in SOLVERS, f"unknown solver {self.solver!r}")
        check(self.weight_mode in MODES, f"weight_mode must be one of {MODES}")
        check(bool(self.methods), "methods must not be empty")
        try:
            PredictionRule(self.rule)
            for method in self.methods:
                Method(method)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_mapping(cls, mapping: dict[str, Any]) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**mapping)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e

    @classmethod
    def from_file(cls, path: str | Path | None = None, **overrides) -> ExperimentConfig:
        """Load a YAML config file and apply non-None ``overrides``.

        Raises:
            ConfigError: If the file is unreadable, not a flat mapping, or
                holds invalid values
        """
        mapping: dict[str, Any] = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as f:
                    loaded = yaml.safe_load(f)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            except yaml.YAMLError as e:
                raise ConfigError(f"invalid YAML in {path}: {e}") from e
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path} must hold a mapping of key: value pairs")
            mapping.update(loaded)
        mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["methods"] = list(self.methods)
        out["upper_bound_ns"] = list(self.upper_bound_ns)
        out["upper_bound_ks"] = list(self.upper_bound_ks)
        return out

    def dump(self) -> str:
        """The config as YAML text."""
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)


ExperimentConfig.DEFAULTS = {
    f.name: f.default
    for f in dataclasses.fields(ExperimentConfig)
    if f.default is not dataclasses.MISSING
}
