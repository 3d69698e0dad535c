"""Prediction rules, conformity scores and region constructors.

A prediction rule maps a parameter ``tau`` to a region around the point
estimate, monotone in ``tau``. The conformity score of a group is the
smallest ``tau`` whose region covers the truth; calibrating its weighted
quantile gives the joint region (:func:`scmc_region`). The baselines apply
single-entry calibration to each test entry at level ``alpha``
(unadjusted) or ``alpha / K`` (Bonferroni).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .calibration import CalibrationPlan
from .completion import CompletionEstimate
from .errors import DomainError, NormalizationError, ParameterError
from .matrix import IndexGroup, PartialMatrix, WeightField
from .weights import (
    ColumnStats,
    WalleniusContext,
    WeightVector,
    build_context,
    column_stats,
    conformalization_weights,
)

logger = logging.getLogger(__name__)

# cumulative weights within this of the target level count as reaching it
QUANTILE_SLACK = 1e-12


class PredictionRule(str, Enum):
    """Shape of the joint region.

    ``cube``: equal halfwidth ``tau / (1 - tau)`` with ``tau`` in [0, 1).
    ``rect``: halfwidth ``|M_hat_k| * tau`` per entry, ``tau`` in [0, inf).
    ``sphere``: Euclidean ball of radius ``tau``.
    """

    CUBE = "cube"
    RECTANGLE = "rect"
    SPHERE = "sphere"


class Method(str, Enum):
    SCMC = "scmc"
    UNADJUSTED = "unadj"
    BONFERRONI = "bonf"


@dataclass(frozen=True, eq=False)
class ConfidenceRegion:
    """A confidence region for the entries of one group.

    Box regions carry ``halfwidths``; the sphere rule under SCMC carries a
    ``radius``. Baseline regions are always boxes and keep one weight vector
    and one calibrated level per entry (``weights_used`` is then 2-d).

    Attributes:
        group: The group covered
        rule: Prediction rule
        method: Construction method
        tau_hat: Calibrated parameter (largest per-entry one for baselines)
        centers: Point estimate at the group entries
        halfwidths: Per-entry halfwidths, or None for balls
        radius: Ball radius, or None for boxes
        weights_used: Conformalization weights behind ``tau_hat``
        clipped: True if an infinite quantile was replaced by the largest score
        entry_taus: Per-entry calibrated parameters (baselines only)
    """

    group: IndexGroup
    rule: PredictionRule
    method: Method
    tau_hat: float
    centers: np.ndarray
    halfwidths: np.ndarray | None = None
    radius: float | None = None
    weights_used: np.ndarray | None = None
    clipped: bool = False
    entry_taus: np.ndarray | None = None

    @property
    def is_ball(self) -> bool:
        return self.radius is not None


def _as_rule(rule: PredictionRule | str) -> PredictionRule:
    try:
        return PredictionRule(rule)
    except ValueError as e:
        raise ParameterError(f"unknown prediction rule {rule!r}") from e


def scores_from_residuals(
    rule: PredictionRule | str, residuals: np.ndarray, centers: np.ndarray
) -> np.ndarray:
    """Conformity scores for each row of ``residuals`` (shape (m, K))."""
    rule = _as_rule(rule)
    r = np.abs(np.atleast_2d(np.asarray(residuals, dtype=float)))
    if rule is PredictionRule.CUBE:
        return np.max(r / (1.0 + r), axis=1)
    if rule is PredictionRule.SPHERE:
        return np.sqrt(np.sum(r**2, axis=1))
    c = np.abs(np.atleast_2d(np.asarray(centers, dtype=float)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(c > 0, r / c, np.where(r > 0, np.inf, 0.0))
    return np.max(ratio, axis=1)


def conformity_score(
    rule: PredictionRule | str,
    estimate: CompletionEstimate,
    group: IndexGroup,
    truth: np.ndarray,
) -> float:
    """Smallest ``tau`` whose region around the estimate covers ``truth``.

    For the rectangle rule, an entry with zero estimate scores ``inf`` unless
    its residual is zero too.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (group.K,):
        raise DomainError(f"truth must have {group.K} entries")
    if group.col >= estimate.shape[1] or group.rows.max() >= estimate.shape[0]:
        raise DomainError("group lies outside the estimate")
    centers = estimate.estimate[group.rows, group.col]
    return float(scores_from_residuals(rule, truth - centers, centers)[0])


def halfwidths_for(rule: PredictionRule | str, tau: float, centers: np.ndarray):
    """Per-entry halfwidths of a box rule at parameter ``tau``."""
    rule = _as_rule(rule)
    centers = np.asarray(centers, dtype=float)
    if rule is PredictionRule.CUBE:
        halfwidth = np.inf if tau >= 1.0 else tau / (1.0 - tau)
        return np.full(centers.shape, halfwidth)
    if rule is PredictionRule.RECTANGLE:
        c = np.abs(centers)
        with np.errstate(invalid="ignore"):
            return np.where(c > 0, c * tau, np.inf if np.isinf(tau) else 0.0)
    return np.full(centers.shape, float(tau))


def prediction_region(
    rule: PredictionRule | str,
    group: IndexGroup,
    centers: np.ndarray,
    tau: float,
    method: Method = Method.SCMC,
    weights_used: np.ndarray | None = None,
    clipped: bool = False,
) -> ConfidenceRegion:
    """Materialize the region of ``rule`` at parameter ``tau``."""
    rule = _as_rule(rule)
    if tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    centers = np.asarray(centers, dtype=float)
    shape = (
        {"radius": float(tau)}
        if rule is PredictionRule.SPHERE
        else {"halfwidths": halfwidths_for(rule, tau, centers)}
    )
    return ConfidenceRegion(
        group,
        rule,
        method,
        float(tau),
        centers,
        weights_used=weights_used,
        clipped=clipped,
        **shape,
    )


def weighted_quantile(scores: np.ndarray, weights: np.ndarray, beta: float) -> float:
    """Level-``beta`` quantile of ``sum_i p_i delta_{S_i} + p_{n+1} delta_inf``.

    Returns the smallest score whose cumulative weight reaches ``beta``, or
    ``inf`` when only the mass at infinity does. Tied scores are taken in
    their given order.

    Raises:
        NormalizationError: If the weights do not sum to one within 1e-9
    """
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.size != scores.size + 1:
        raise DomainError("need exactly one more weight than scores")
    if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-9:
        raise NormalizationError(f"weights sum to {weights.sum():.12g}, not 1")
    if not 0.0 < beta < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {beta}")

    order = np.argsort(scores, kind="stable")
    cumulative = np.cumsum(weights[:-1][order])
    reached = np.flatnonzero(cumulative >= beta - QUANTILE_SLACK)
    if reached.size == 0:
        return float("inf")
    return float(scores[order][reached[0]])


def calibration_scores(
    rule: PredictionRule | str,
    obs: PartialMatrix,
    plan: CalibrationPlan,
    estimate: CompletionEstimate,
) -> np.ndarray:
    """Conformity scores of all calibration groups of ``plan``."""
    dense = obs.to_dense()
    cols = plan.group_cols[:, np.newaxis]
    truth = dense[plan.group_rows, cols]
    if np.isnan(truth).any():
        raise DomainError("calibration groups must be observed")
    centers = estimate.estimate[plan.group_rows, cols]
    return scores_from_residuals(rule, truth - centers, centers)


def _calibrate(scores: np.ndarray, weights: WeightVector, beta: float):
    tau = weighted_quantile(scores, weights.p, beta)
    if np.isinf(tau):
        return float(np.max(scores)), True
    return tau, False


def scmc_region(
    obs: PartialMatrix,
    plan: CalibrationPlan,
    estimate: CompletionEstimate,
    rule: PredictionRule | str,
    test_group: IndexGroup,
    alpha: float,
    w: WeightField,
    w_star: WeightField,
    *,
    ctx: WalleniusContext | None = None,
    stats: ColumnStats | None = None,
    scores: np.ndarray | None = None,
    mode: str = "fast",
) -> ConfidenceRegion:
    """Joint region for ``test_group`` with simultaneous coverage ``1 - alpha``.

    ``ctx``, ``stats`` and ``scores`` can be precomputed once and shared
    across many test groups of the same trial.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    rule = _as_rule(rule)
    if ctx is None:
        ctx = build_context(obs, w)
    if scores is None:
        scores = calibration_scores(rule, obs, plan, estimate)
    weights = conformalization_weights(
        plan, test_group, obs, w, w_star, ctx=ctx, mode=mode, stats=stats
    )
    tau, clipped = _calibrate(scores, weights, 1.0 - alpha)
    if clipped:
        logger.warning("infinite quantile for group in column %d; clipped", test_group.col)
    centers = estimate.estimate[test_group.rows, test_group.col]
    return prediction_region(
        rule, test_group, centers, tau, Method.SCMC, weights.p, clipped
    )


def baseline_region(
    kind: Method | str,
    obs: PartialMatrix,
    plan: CalibrationPlan,
    estimate: CompletionEstimate,
    rule: PredictionRule | str,
    test_group: IndexGroup,
    alpha: float,
    w: WeightField,
    w_star: WeightField,
    *,
    ctx: WalleniusContext | None = None,
    stats: ColumnStats | None = None,
    scores: np.ndarray | None = None,
    mode: str = "fast",
) -> ConfidenceRegion:
    """Per-entry region from single-entry calibration.

    ``plan`` must have group size one. Each test entry gets its own interval
    at level ``alpha`` (unadjusted) or ``alpha / K`` (Bonferroni); the joint
    region is their product.
    """
    kind = Method(kind)
    if kind is Method.SCMC:
        raise ParameterError("baseline_region builds unadjusted or Bonferroni regions")
    if plan.K != 1:
        raise ParameterError("baselines need a calibration plan with group size 1")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    rule = _as_rule(rule)
    if ctx is None:
        ctx = build_context(obs, w)
    if scores is None:
        scores = calibration_scores(rule, obs, plan, estimate)

    K = test_group.K
    level = alpha if kind is Method.UNADJUSTED else alpha / K
    centers = estimate.estimate[test_group.rows, test_group.col]
    taus = np.empty(K)
    halfwidths = np.empty(K)
    used = []
    clipped_any = False
    for k, index in enumerate(test_group):
        weights = conformalization_weights(
            plan, IndexGroup((index,)), obs, w, w_star, ctx=ctx, mode=mode, stats=stats
        )
        taus[k], clipped = _calibrate(scores, weights, 1.0 - level)
        clipped_any |= clipped
        halfwidths[k] = halfwidths_for(rule, taus[k], centers[k : k + 1])[0]
        used.append(weights.p)
    if clipped_any:
        logger.warning(
            "infinite %s quantile for group in column %d; clipped", kind.value, test_group.col
        )

    return ConfidenceRegion(
        group=test_group,
        rule=rule,
        method=kind,
        tau_hat=float(taus.max()),
        centers=centers,
        halfwidths=halfwidths,
        weights_used=np.vstack(used),
        clipped=clipped_any,
        entry_taus=taus,
    )


def region_contains(region: ConfidenceRegion, truth: np.ndarray) -> bool:
    """True if every entry of ``truth`` lies in the region (boundary included)."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != region.centers.shape:
        raise DomainError("truth and region dimensions differ")
    residual = truth - region.centers
    if region.is_ball:
        return bool(np.sqrt(np.sum(residual**2)) <= region.radius)
    return bool(np.all(np.abs(residual) <= region.halfwidths))


def region_width(region: ConfidenceRegion) -> float:
    """Mean per-entry interval length; twice the radius for balls."""
    if region.is_ball:
        return 2.0 * float(region.radius)
    return float(np.mean(2.0 * region.halfwidths))
