"""scmc - Structured conformalized matrix completion.

Given a partially observed matrix and a black-box completion algorithm,
scmc builds confidence regions that cover K missing entries of one column
simultaneously with probability at least 1 - alpha. Calibration groups are
drawn from the observed entries to mimic the test group, and
non-exchangeability is corrected with conformalization weights.

Example:
    >>> import numpy as np
    >>> from scmc import (
    ...     SolverConfig, WeightField, assemble_calibration, complete,
    ...     gen_uniform_synthetic, observe, sample_column_group, scmc_region,
    ... )
    >>> rng = np.random.default_rng(0)
    >>> M = gen_uniform_synthetic(100, 100, rng=rng)
    >>> w = WeightField.uniform(100, 100)
    >>> obs = observe(M, 2000, w, rng)
    >>> plan = assemble_calibration(obs, 400, 2, rng)
    >>> estimate = complete(plan.train_matrix(obs), SolverConfig())
    >>> group = sample_column_group(~obs.mask, 2, w, rng)
    >>> region = scmc_region(obs, plan, estimate, "cube", group, 0.1, w, w)

For command-line usage:
    $ scmc synthetic -c suite.yaml --k 4 -o coverage.csv
    $ scmc movielens --data u.data --holdout-frac 0.2 -o movielens.json
"""

from .calibration import (
    CalibrationPlan,
    assemble_calibration,
    max_calibration_groups,
    rule_of_thumb_groups,
)
from .completion import CompletionEstimate, SolverConfig, als_complete, complete
from .config import ExperimentConfig
from .conformal import (
    ConfidenceRegion,
    Method,
    PredictionRule,
    baseline_region,
    conformity_score,
    prediction_region,
    region_contains,
    region_width,
    scmc_region,
    weighted_quantile,
)
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    ScmcError,
)
from .experiment import MetricsRow, run_experiment, run_upper_bound, write_rows
from .matrix import IndexGroup, MatrixIndex, PartialMatrix, WeightField
from .missingness import MissingnessModel, estimate_weights
from .movielens import load_movielens
from .sampling import sample_column_group, sample_without_replacement
from .synthetic import (
    gen_hetero_synthetic,
    gen_hetero_weights,
    gen_power_weights,
    gen_uniform_synthetic,
    observe,
    observe_bernoulli,
    worst_slab_test_weights,
    worst_slab_weights,
)
from .version import __version__, get_banner, get_version
from .weights import (
    WeightVector,
    build_context,
    conformalization_weights,
    eta,
    find_scale,
    individual_weights,
)

__all__ = [
    "CalibrationPlan",
    "CompletionEstimate",
    "ConfidenceRegion",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "IndexGroup",
    "MatrixIndex",
    "Method",
    "MetricsRow",
    "MissingnessModel",
    "NumericalError",
    "PartialMatrix",
    "PredictionRule",
    "ScmcError",
    "SolverConfig",
    "WeightField",
    "WeightVector",
    "als_complete",
    "assemble_calibration",
    "baseline_region",
    "build_context",
    "complete",
    "conformalization_weights",
    "conformity_score",
    "estimate_weights",
    "eta",
    "find_scale",
    "gen_hetero_synthetic",
    "gen_hetero_weights",
    "gen_power_weights",
    "gen_uniform_synthetic",
    "individual_weights",
    "load_movielens",
    "max_calibration_groups",
    "observe",
    "observe_bernoulli",
    "prediction_region",
    "region_contains",
    "region_width",
    "rule_of_thumb_groups",
    "run_experiment",
    "run_upper_bound",
    "sample_column_group",
    "sample_without_replacement",
    "scmc_region",
    "weighted_quantile",
    "worst_slab_test_weights",
    "worst_slab_weights",
    "write_rows",
    "__version__",
    "get_version",
    "get_banner",
]
