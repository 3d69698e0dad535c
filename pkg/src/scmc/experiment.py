"""Monte Carlo experiments: simulate, calibrate, evaluate and aggregate.

Each trial draws its own random stream from ``(seed, trial)``, so trials are
independent and a run is reproducible whatever the number of workers.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from .calibration import assemble_calibration, rule_of_thumb_groups
from .completion import CompletionEstimate, complete
from .config import ExperimentConfig
from .conformal import (
    ConfidenceRegion,
    Method,
    baseline_region,
    calibration_scores,
    region_contains,
    region_width,
    scmc_region,
)
from .errors import DataError, ScmcError
from .matrix import IndexGroup, PartialMatrix, WeightField
from .missingness import estimate_weights
from .movielens import load_movielens, split_holdout
from .sampling import sample_column_group
from .synthetic import (
    gen_hetero_synthetic,
    gen_hetero_weights,
    gen_power_weights,
    gen_uniform_synthetic,
    observe,
    observe_bernoulli,
    worst_slab_test_weights,
)
from .weights import build_context, column_stats, conformalization_weights, estimation_gap

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "method",
    "k",
    "coverage",
    "marginal_coverage",
    "width",
    "clipped_rate",
    "mean_max_p",
    "delta_hat",
    "wall_time",
    "trials",
    "n_calib",
    "params",
]

PARAM_KEYS = (
    "suite",
    "n_rows",
    "n_cols",
    "mu",
    "s",
    "n_obs",
    "w_source",
    "wstar_source",
    "rule",
    "alpha",
)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated results of one method over all trials."""

    method: str
    k: int
    params: dict
    coverage: float
    marginal_coverage: float
    width: float
    clipped_rate: float
    mean_max_p: float
    delta_hat: float
    wall_time: float
    trials: int
    n_calib: float

    def as_record(self) -> dict:
        record = dataclasses.asdict(self)
        record["params"] = ";".join(f"{k}={v}" for k, v in self.params.items())
        return record


@dataclass
class MethodTally:
    """Running sums for one method within a trial (or merged trials)."""

    groups: int = 0
    covered: int = 0
    marginal: float = 0.0
    width: float = 0.0
    clipped: int = 0
    max_p: float = 0.0
    gap: float = 0.0
    gap_count: int = 0
    seconds: float = 0.0
    n_calib: int = 0
    trials: int = 0

    def add_region(self, region: ConfidenceRegion, truth: np.ndarray) -> None:
        self.groups += 1
        self.covered += region_contains(region, truth)
        self.marginal += _entry_coverage(region, truth)
        self.width += region_width(region)
        self.clipped += region.clipped
        self.max_p += float(np.max(region.weights_used))

    def merge(self, other: MethodTally) -> MethodTally:
        return MethodTally(
            *(getattr(self, f.name) + getattr(other, f.name) for f in dataclasses.fields(self))
        )


def _entry_coverage(region: ConfidenceRegion, truth: np.ndarray) -> float:
    residual = np.abs(np.asarray(truth, dtype=float) - region.centers)
    if region.is_ball:
        return float(np.mean(residual <= region.radius))
    return float(np.mean(residual <= region.halfwidths))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Random stream of one trial, independent of every other trial."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


@functools.lru_cache(maxsize=4)
def _load_ratings(path: str, subsample: tuple[int, int] | None, seed: int) -> PartialMatrix:
    return load_movielens(path, subsample=subsample, seed=seed)


@functools.lru_cache(maxsize=4)
def _load_grid(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read weight grid {path}: {e}") from e


@dataclass(frozen=True, eq=False)
class TrialData:
    """One simulated (or ingested) data set ready for calibration.

    ``obs`` is what the methods see. ``truth`` holds the values of every
    entry a test group may be drawn from and ``test_missing`` marks those
    entries. ``w`` are the sampling weights the methods use; ``w_true`` is
    None when the real ones are unknown.
    """

    obs: PartialMatrix
    truth: np.ndarray
    test_missing: np.ndarray
    w: WeightField
    w_true: WeightField | None


def simulate(config: ExperimentConfig, rng: np.random.Generator) -> TrialData:
    """Generate or ingest the data of one trial."""
    if config.suite == "movielens":
        subsample = None
        if config.subsample_rows and config.subsample_cols:
            subsample = (config.subsample_rows, config.subsample_cols)
        matrix = _load_ratings(config.data_path, subsample, config.seed)
        kept, holdout = split_holdout(matrix, config.holdout_frac, rng)
        model = estimate_weights(kept.mask, config.rank_bound, config.inf_bound)
        return TrialData(kept, holdout.to_dense(), holdout.mask, model.w_hat, None)

    shape = (config.n_rows, config.n_cols)
    if config.suite == "uniform":
        M = gen_uniform_synthetic(*shape, config.rank_true, config.mu, config.effective_gamma, rng)
    else:
        M = gen_hetero_synthetic(*shape, config.rank_true, config.mu, rng)

    if config.w_source == "hetero":
        w_true = gen_hetero_weights(*shape, config.s, config.effective_gamma, rng)
    elif config.w_source == "power":
        w_true = gen_power_weights(*shape, config.power_s)
    else:
        w_true = WeightField.uniform(*shape)
    if config.obs_mode == "bernoulli":
        # independent entries with n_obs expected observations
        p = np.clip(w_true.values * (config.n_obs / w_true.values.sum()), 0.0, 1.0)
        obs = observe_bernoulli(M, WeightField(p), rng)
    else:
        obs = observe(M, config.n_obs, w_true, rng)

    w = w_true
    if config.w_source == "estimated":
        w = estimate_weights(obs.mask, config.rank_bound, config.inf_bound).w_hat
    return TrialData(obs, M, ~obs.mask, w, w_true)


def resolve_test_weights(
    config: ExperimentConfig,
    data: TrialData,
    estimate: CompletionEstimate,
    rng: np.random.Generator,
) -> WeightField:
    """The test-weight field ``w*`` of one trial."""
    shape = data.obs.shape
    if config.wstar_source == "w":
        return data.w_true if data.w_true is not None else data.w
    if config.wstar_source == "file":
        grid = _load_grid(config.wstar_file)
        if grid.shape != shape:
            raise DataError(f"weight grid has shape {grid.shape}, expected {shape}")
        return WeightField(grid)
    if config.wstar_source == "worst-slab":
        return worst_slab_test_weights(
            data.truth, estimate, data.test_missing, config.slab_delta, rng
        )
    return WeightField.uniform(*shape)


def run_trial(config: ExperimentConfig, trial: int) -> dict[str, MethodTally]:
    """Run one trial and return a tally per requested method."""
    rng = trial_rng(config.seed, trial)
    data = simulate(config, rng)
    obs, K = data.obs, config.k
    solver = dataclasses.replace(config.solver_config, seed=int(rng.integers(2**32)))
    methods = [Method(m) for m in config.methods]
    tallies = {m.value: MethodTally(trials=1) for m in methods}

    n = config.n_calib or rule_of_thumb_groups(obs, K)

    started = time.perf_counter()
    plan = assemble_calibration(obs, n, K, rng)
    estimate = complete(plan.train_matrix(obs), solver)
    setup_scmc = time.perf_counter() - started

    w_star = resolve_test_weights(config, data, estimate, rng)
    w_assumed = WeightField.uniform(*obs.shape) if config.wstar_assumed == "uniform" else w_star
    draw_weights = WeightField(np.where(data.test_missing, w_star.values, 0.0))
    groups = [
        sample_column_group(data.test_missing, K, draw_weights, rng) for _ in range(config.n_test)
    ]

    ctx = build_context(obs, data.w)
    stats = column_stats(obs, w_assumed)
    common = {"ctx": ctx, "stats": stats, "mode": config.weight_mode}
    estimated = config.w_source == "estimated" and data.w_true is not None
    ctx_true = build_context(obs, data.w_true) if estimated else None

    if Method.SCMC in methods:
        tally = tallies[Method.SCMC.value]
        started = time.perf_counter()
        scores = calibration_scores(config.rule, obs, plan, estimate)
        for group in groups:
            region = scmc_region(
                obs,
                plan,
                estimate,
                config.rule,
                group,
                config.alpha,
                data.w,
                w_assumed,
                scores=scores,
                **common,
            )
            tally.add_region(region, _truth_of(data, group))
            if estimated:
                oracle = conformalization_weights(
                    plan,
                    group,
                    obs,
                    data.w_true,
                    w_assumed,
                    ctx=ctx_true,
                    mode=config.weight_mode,
                    stats=stats,
                )
                tally.gap += estimation_gap(region.weights_used, oracle)
                tally.gap_count += 1
        tally.seconds = setup_scmc + time.perf_counter() - started
        tally.n_calib = plan.n

    baselines = [m for m in methods if m is not Method.SCMC]
    if baselines:
        started = time.perf_counter()
        plan_1 = plan if K == 1 else assemble_calibration(obs, K * n, 1, rng)
        estimate_1 = estimate if K == 1 else complete(plan_1.train_matrix(obs), solver)
        scores_1 = calibration_scores(config.rule, obs, plan_1, estimate_1)
        setup = time.perf_counter() - started
        for kind in baselines:
            tally = tallies[kind.value]
            started = time.perf_counter()
            for group in groups:
                region = baseline_region(
                    kind,
                    obs,
                    plan_1,
                    estimate_1,
                    config.rule,
                    group,
                    config.alpha,
                    data.w,
                    w_assumed,
                    scores=scores_1,
                    **common,
                )
                tally.add_region(region, _truth_of(data, group))
            tally.seconds = setup + time.perf_counter() - started
            tally.n_calib = plan_1.n

    logger.info(
        "trial %d: %s",
        trial,
        ", ".join(f"{m}={t.covered}/{t.groups}" for m, t in tallies.items()),
    )
    return tallies


def _truth_of(data: TrialData, group: IndexGroup) -> np.ndarray:
    return data.truth[group.rows, group.col]


def _run_tagged(config: ExperimentConfig, trial: int) -> dict[str, MethodTally]:
    try:
        return run_trial(config, trial)
    except ScmcError as e:
        raise type(e)(f"trial {trial} (seed {config.seed}): {e}") from e


def _map_trials(func, config: ExperimentConfig, trials: range, progress: bool, desc: str):
    with tqdm(total=len(trials), desc=desc, disable=not progress, unit="trial") as bar:
        if config.threads == 1:
            for trial in trials:
                yield func(config, trial)
                bar.update()
            return
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            for result in pool.map(func, [config] * len(trials), trials):
                yield result
                bar.update()


def params_of(config: ExperimentConfig) -> dict:
    return {key: getattr(config, key) for key in PARAM_KEYS}


def aggregate(config: ExperimentConfig, tallies: list[dict[str, MethodTally]]) -> list[MetricsRow]:
    """Merge per-trial tallies into one row per method."""
    rows = []
    for method in config.methods:
        total = functools.reduce(MethodTally.merge, (t[method] for t in tallies))
        groups = max(total.groups, 1)
        rows.append(
            MetricsRow(
                method=method,
                k=config.k,
                params=params_of(config),
                coverage=total.covered / groups,
                marginal_coverage=total.marginal / groups,
                width=total.width / groups,
                clipped_rate=total.clipped / groups,
                mean_max_p=total.max_p / groups,
                delta_hat=total.gap / total.gap_count if total.gap_count else float("nan"),
                wall_time=total.seconds / total.trials,
                trials=total.trials,
                n_calib=total.n_calib / total.trials,
            )
        )
    return rows


def run_experiment(config: ExperimentConfig, progress: bool = False) -> list[MetricsRow]:
    """Run ``config.trials`` trials and aggregate one row per method.

    Raises:
        ScmcError: The first failing trial's error, tagged with its index
            and the master seed
    """
    tallies = list(_map_trials(_run_tagged, config, range(config.trials), progress, config.suite))
    return aggregate(config, tallies)


# --------------------------------------------------------------------------
# Coverage upper bound
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UpperBoundRow:
    """Mean largest conformalization weight at one ``(n, K)``."""

    n: int
    k: int
    mean_max_p: float
    reference: float
    trials: int


def max_weight_trial(config: ExperimentConfig, trial: int, n: int, K: int) -> float:
    """Largest weight ``max_i p_i`` of one simulated calibration and test draw."""
    rng = trial_rng(config.seed, trial)
    shape = (config.n_rows, config.n_cols)
    w = gen_power_weights(*shape, config.power_s)
    obs = observe(np.zeros(shape), config.n_obs, w, rng)
    plan = assemble_calibration(obs, n, K, rng)
    group = sample_column_group(~obs.mask, K, w, rng)
    weights = conformalization_weights(plan, group, obs, w, w, mode=config.weight_mode)
    return weights.max_weight


def _upper_bound_trial(config: ExperimentConfig, trial: int) -> list[float]:
    try:
        return [max_weight_trial(config, trial, n, K) for n, K in _upper_bound_grid(config)]
    except ScmcError as e:
        raise type(e)(f"trial {trial} (seed {config.seed}): {e}") from e


def _upper_bound_grid(config: ExperimentConfig) -> list[tuple[int, int]]:
    grid = [(n, config.k) for n in config.upper_bound_ns]
    fixed_n = max(config.upper_bound_ns)
    grid += [(fixed_n, K) for K in config.upper_bound_ks if (fixed_n, K) not in grid]
    return grid


def run_upper_bound(config: ExperimentConfig, progress: bool = False) -> list[UpperBoundRow]:
    """Estimate ``E[max_i p_i]`` under power sampling weights with ``w* = w``.

    Sweeps ``n`` over ``config.upper_bound_ns`` at group size ``config.k``
    and, if ``config.upper_bound_ks`` is set, the group size at the largest
    ``n``. Each row carries the exchangeable reference ``1 / n``.
    """
    results = np.array(
        list(_map_trials(_upper_bound_trial, config, range(config.trials), progress, "upper-bound"))
    )
    return [
        UpperBoundRow(n, K, float(results[:, j].mean()), 1.0 / n, config.trials)
        for j, (n, K) in enumerate(_upper_bound_grid(config))
    ]


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def rows_frame(rows: list[MetricsRow] | list[UpperBoundRow]) -> pd.DataFrame:
    if rows and isinstance(rows[0], MetricsRow):
        return pd.DataFrame([row.as_record() for row in rows], columns=METRIC_COLUMNS)
    return pd.DataFrame([dataclasses.asdict(row) for row in rows])


def write_rows(
    rows: list[MetricsRow] | list[UpperBoundRow],
    path: str | Path,
    config: ExperimentConfig,
) -> Path:
    """Write rows as CSV, or as JSON with the config echoed, by file suffix."""
    path = Path(path)
    frame = rows_frame(rows)
    if path.suffix.lower() == ".json":
        payload = {
            "config": config.to_dict(),
            "rows": json.loads(frame.to_json(orient="records")),
        }
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        frame.to_csv(path, index=False)
    return path
