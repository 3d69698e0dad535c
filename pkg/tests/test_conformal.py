"""Tests for conformal module."""

import logging
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scmc.calibration import assemble_calibration
from scmc.completion import CompletionEstimate, SolverConfig, complete
from scmc.conformal import (
    Method,
    PredictionRule,
    baseline_region,
    calibration_scores,
    conformity_score,
    halfwidths_for,
    prediction_region,
    region_contains,
    region_width,
    scmc_region,
    scores_from_residuals,
    weighted_quantile,
)
from scmc.errors import DomainError, NormalizationError, ParameterError
from scmc.matrix import IndexGroup
from scmc.sampling import sample_column_group

residuals = arrays(
    float, st.integers(1, 6), elements=st.floats(-100.0, 100.0, allow_subnormal=False)
)


def test_scores_from_residuals():
    """Test scores of the three rules on hand-computed residuals."""
    centers = np.array([[2.0, -1.0]])
    r = np.array([[1.0, -3.0]])

    assert scores_from_residuals("cube", r, centers)[0] == pytest.approx(0.75)
    assert scores_from_residuals("sphere", r, centers)[0] == pytest.approx(np.sqrt(10))
    assert scores_from_residuals("rect", r, centers)[0] == pytest.approx(3.0)


def test_rect_score_zero_center():
    """Test the rectangle rule at a zero estimate."""
    centers = np.array([[0.0]])
    assert scores_from_residuals("rect", np.array([[0.5]]), centers)[0] == np.inf
    assert scores_from_residuals("rect", np.array([[0.0]]), centers)[0] == 0.0


def test_unknown_rule():
    """Test that an unknown rule is a parameter error."""
    with pytest.raises(ParameterError):
        scores_from_residuals("ellipse", np.zeros((1, 1)), np.zeros((1, 1)))


def test_halfwidths_boundaries():
    """Test boundary values of the box rules."""
    centers = np.array([1.0, -2.0, 0.0])
    assert halfwidths_for("cube", 0.0, centers).tolist() == [0.0, 0.0, 0.0]
    assert halfwidths_for("cube", 0.5, centers).tolist() == [1.0, 1.0, 1.0]
    assert np.isinf(halfwidths_for("cube", 1.0, centers)).all()
    assert halfwidths_for("rect", 0.5, centers).tolist() == [0.5, 1.0, 0.0]
    assert halfwidths_for("rect", np.inf, centers)[2] == np.inf


@settings(max_examples=60, deadline=None)
@given(
    rule=st.sampled_from(["cube", "rect", "sphere"]),
    a=st.floats(0.0, 0.99),
    b=st.floats(0.0, 0.99),
)
def test_rules_are_monotone(rule, a, b):
    """Test that a larger parameter never shrinks the region."""
    centers = np.array([0.5, -3.0, 2.0])
    lo, hi = sorted((a, b))
    small = prediction_region(rule, IndexGroup.from_rows([0, 1, 2], 0), centers, lo)
    large = prediction_region(rule, IndexGroup.from_rows([0, 1, 2], 0), centers, hi)

    if rule == "sphere":
        assert small.radius <= large.radius
    else:
        assert (small.halfwidths <= large.halfwidths).all()


@settings(max_examples=100, deadline=None)
@given(rule=st.sampled_from(["cube", "rect", "sphere"]), r=residuals, data=st.data())
def test_score_region_duality(rule, r, data):
    """Test that the region at the score covers the truth and a smaller one does not."""
    K = r.size
    centers = data.draw(arrays(float, K, elements=st.floats(0.5, 10.0)))
    truth = centers + r
    group = IndexGroup.from_rows(range(K), 0)
    score = scores_from_residuals(rule, truth - centers, centers)[0]

    assert region_contains(prediction_region(rule, group, centers, score * (1 + 1e-9)), truth)
    if score > 1e-6:
        shrunk = prediction_region(rule, group, centers, score * (1 - 1e-6))
        assert not region_contains(shrunk, truth)


def test_conformity_score(tiny_obs):
    """Test the score of a group against a dense estimate."""
    estimate = CompletionEstimate(np.zeros((4, 3)))
    group = IndexGroup.from_rows([2, 3], 1)

    assert conformity_score("cube", estimate, group, np.array([1.0, -3.0])) == 0.75
    with pytest.raises(DomainError):
        conformity_score("cube", estimate, group, np.array([1.0]))


def _brute_quantile(scores, weights, beta):
    candidates = sorted(set(scores)) + [np.inf]
    for t in candidates:
        mass = sum(p for s, p in zip(scores, weights[:-1], strict=True) if s <= t)
        if t == np.inf:
            mass += weights[-1]
        if mass >= beta:
            return t
    return np.inf


@pytest.mark.parametrize("beta", [0.25, 0.55, 0.85])
def test_weighted_quantile_brute_force(beta):
    """Test against the distribution definition on every 3-point weighting."""
    score_sets = [(1.0, 2.0, 3.0), (3.0, 1.0, 2.0), (2.0, 2.0, 1.0), (5.0, 5.0, 5.0)]
    for scores in score_sets:
        for a, b, c in product(range(11), repeat=3):
            d = 10 - a - b - c
            if d < 0:
                continue
            weights = np.array([a, b, c, d]) / 10.0
            expected = _brute_quantile(scores, weights, beta)
            assert weighted_quantile(np.array(scores), weights, beta) == expected


def test_weighted_quantile_errors():
    """Test validation of weights and level."""
    with pytest.raises(NormalizationError):
        weighted_quantile(np.array([1.0]), np.array([0.3, 0.3]), 0.5)
    with pytest.raises(DomainError):
        weighted_quantile(np.array([1.0]), np.array([1.0]), 0.5)
    with pytest.raises(DomainError):
        weighted_quantile(np.array([1.0]), np.array([0.5, 0.5]), 1.0)


def test_region_width():
    """Test the mean interval length and the ball convention."""
    group = IndexGroup.from_rows([0, 1], 0)
    box = prediction_region("rect", group, np.array([1.0, 3.0]), 0.5)
    ball = prediction_region("sphere", group, np.array([1.0, 3.0]), 0.5)

    assert region_width(box) == pytest.approx(2.0)
    assert region_width(ball) == pytest.approx(1.0)
    assert ball.is_ball and not box.is_ball


@pytest.fixture
def fitted(small_instance, rng):
    M, w, obs = small_instance
    plan = assemble_calibration(obs, 60, 2, rng)
    estimate = complete(plan.train_matrix(obs), SolverConfig(rank=3, max_iters=20))
    group = sample_column_group(~obs.mask, 2, w, rng)
    return M, w, obs, plan, estimate, group


def test_calibration_scores(fitted):
    """Test that plan scores match per-group scores."""
    M, _, obs, plan, estimate, _ = fitted
    scores = calibration_scores("cube", obs, plan, estimate)

    assert scores.shape == (plan.n,)
    first = plan.groups[0]
    assert scores[0] == pytest.approx(
        conformity_score("cube", estimate, first, M[first.rows, first.col])
    )


@pytest.mark.parametrize("rule", list(PredictionRule))
def test_scmc_region(fitted, rule):
    """Test the joint region for every rule."""
    _, w, obs, plan, estimate, group = fitted

    region = scmc_region(obs, plan, estimate, rule, group, 0.1, w, w)

    assert region.method is Method.SCMC
    assert region.rule is rule
    assert region.weights_used.shape == (plan.n + 1,)
    assert region.weights_used.sum() == pytest.approx(1.0)
    assert region.tau_hat >= 0
    assert np.array_equal(region.centers, estimate.estimate[group.rows, group.col])
    assert region.is_ball == (rule is PredictionRule.SPHERE)


def test_scmc_region_clipped(fitted, caplog):
    """Test that an infinite quantile is clipped to the largest score."""
    _, w, obs, plan, estimate, group = fitted
    scores = calibration_scores("cube", obs, plan, estimate)

    with caplog.at_level(logging.WARNING, logger="scmc.conformal"):
        region = scmc_region(obs, plan, estimate, "cube", group, 1e-6, w, w, scores=scores)

    assert region.clipped
    assert "clipped" in caplog.text
    assert region.tau_hat == pytest.approx(scores.max())


def test_scmc_region_errors(fitted):
    """Test argument validation."""
    _, w, obs, plan, estimate, group = fitted
    with pytest.raises(ParameterError):
        scmc_region(obs, plan, estimate, "cube", group, 1.0, w, w)


def test_baselines(small_instance, rng):
    """Test unadjusted and Bonferroni regions built from single entries."""
    _, w, obs = small_instance
    plan = assemble_calibration(obs, 120, 1, rng)
    estimate = complete(plan.train_matrix(obs), SolverConfig(rank=3, max_iters=20))
    group = sample_column_group(~obs.mask, 3, w, rng)

    unadj = baseline_region(Method.UNADJUSTED, obs, plan, estimate, "cube", group, 0.1, w, w)
    bonf = baseline_region("bonf", obs, plan, estimate, "cube", group, 0.1, w, w)

    assert unadj.weights_used.shape == (3, plan.n + 1)
    assert unadj.entry_taus.shape == (3,)
    assert (bonf.entry_taus >= unadj.entry_taus).all()
    assert region_width(bonf) >= region_width(unadj)


def test_baseline_errors(fitted):
    """Test that baselines need a size-one plan and a baseline kind."""
    _, w, obs, plan, estimate, group = fitted
    with pytest.raises(ParameterError, match="group size 1"):
        baseline_region("unadj", obs, plan, estimate, "cube", group, 0.1, w, w)
    with pytest.raises(ParameterError):
        baseline_region("scmc", obs, plan, estimate, "cube", group, 0.1, w, w)


def test_methods_coincide_for_single_entries(small_instance, rng):
    """Test that all three methods agree when K=1."""
    _, w, obs = small_instance
    plan = assemble_calibration(obs, 100, 1, rng)
    estimate = complete(plan.train_matrix(obs), SolverConfig(rank=3, max_iters=20))
    group = sample_column_group(~obs.mask, 1, w, rng)

    joint = scmc_region(obs, plan, estimate, "rect", group, 0.1, w, w)
    for kind in ("unadj", "bonf"):
        base = baseline_region(kind, obs, plan, estimate, "rect", group, 0.1, w, w)
        assert base.tau_hat == pytest.approx(joint.tau_hat)
        assert np.allclose(base.halfwidths, joint.halfwidths)
        assert np.allclose(base.weights_used[0], joint.weights_used)
