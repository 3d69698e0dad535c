"""Conformalization weights for structured calibration groups.

Calibration and test groups are not exchangeable once sampling weights are
heterogeneous, so every calibration score gets a mass ``p_i`` proportional
to the probability of the world where calibration group ``i`` and the test
group trade places. That probability has three factors:

* the ratio of set probabilities of the swapped and the real observed set
  under successive sampling (a Wallenius-type quantity),
* the probability of drawing group ``i`` as the test group in the swapped
  world, under the test weights ``w*``,
* a combinatorial ratio from the pruning and group draws, present only when
  the two groups sit in different columns.

The set-probability ratio is available three ways. ``fast`` evaluates the
ratio factor ``eta_i`` at the peak of the integrand (a Laplace
approximation, O(n K) once the context is built); ``quadrature`` integrates
the exact one-dimensional integral; ``exact`` enumerates the set
probability by dynamic programming and only runs on tiny instances.

All products are accumulated in log space.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, logsumexp

from .calibration import CalibrationPlan
from .errors import (
    CapacityError,
    ConvergenceError,
    DegenerateWeightsError,
    DomainError,
    ParameterError,
    QuadratureError,
)
from .matrix import IndexGroup, MatrixIndex, PartialMatrix, WeightField, indices_to_flat

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
TAU_PEAK = 0.5
EXACT_MAX_OBS = 10
MODES = ("fast", "quadrature", "exact")


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """``log(1 - exp(x))`` for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -LN2, np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def _obs_mask_of(obs: PartialMatrix | np.ndarray) -> np.ndarray:
    if isinstance(obs, PartialMatrix):
        return obs.mask
    return np.asarray(obs, dtype=bool)


# --------------------------------------------------------------------------
# Wallenius integral
# --------------------------------------------------------------------------


def log_phi(log_tau: np.ndarray, h: float, delta: float, obs_weights: np.ndarray):
    """Log of the integrand kernel ``h delta tau^(h delta - 1) prod(1 - tau^(h w))``."""
    log_tau = np.asarray(log_tau, dtype=float)
    obs_weights = np.asarray(obs_weights, dtype=float)
    terms = _log1mexp(h * np.multiply.outer(log_tau, obs_weights))
    return np.log(h * delta) + (h * delta - 1.0) * log_tau + terms.sum(axis=-1)


def phi_second(tau: float, h: float, delta: float, obs_weights: np.ndarray) -> float:
    """Second derivative of :func:`log_phi` with respect to ``tau``."""
    a = h * np.asarray(obs_weights, dtype=float)
    t = np.exp(a * np.log(tau))
    ratio = t / -np.expm1(a * np.log(tau))
    total = np.sum(a * (a - 1.0) * ratio + a * a * ratio * ratio)
    return float(-((h * delta - 1.0) + total) / tau**2)


def _z_and_slope(h: float, obs_weights: np.ndarray, delta: float) -> tuple[float, float]:
    a = h * obs_weights * LN2
    with np.errstate(over="ignore"):
        em1 = np.expm1(a)
        z = delta - 1.0 / h - np.sum(obs_weights / em1)
        slope = 1.0 / h**2 + np.sum(
            obs_weights * obs_weights * LN2 / (em1 * -np.expm1(-a))
        )
    return float(z), float(slope)


def find_scale(
    obs_weights: np.ndarray, delta: float, tol: float = 1e-10, max_iter: int = 100
) -> float:
    """Tune the scale ``h`` so that the integrand kernel peaks at ``tau = 1/2``.

    Solves ``z(h) = delta - 1/h - sum(w / (2^(h w) - 1)) = 0`` by Newton's
    method started at ``1/delta``. ``z`` is increasing and concave, and the
    root lies in ``[1/delta, (1 + n / log 2) / delta]``; Newton steps leaving
    that bracket are replaced by bisection.

    Args:
        obs_weights: Sampling weights of the observed entries
        delta: Total sampling weight of the missing entries
        tol: Residual tolerance, relative to ``max(1, delta)``
        max_iter: Maximum Newton iterations before plain bisection

    Returns:
        The scale ``h`` (strictly greater than ``1/delta``)

    Raises:
        DomainError: If ``delta`` or a weight is not positive
        ConvergenceError: If neither Newton nor bisection converges
    """
    obs_weights = np.asarray(obs_weights, dtype=float)
    if not delta > 0:
        raise DomainError(f"missing weight mass must be positive, got {delta}")
    if obs_weights.size == 0 or (obs_weights <= 0).any():
        raise DomainError("need at least one observed entry with positive weight")

    lo = 1.0 / delta
    hi = (1.0 + obs_weights.size / LN2) / delta
    threshold = tol * max(1.0, delta)

    h = lo
    for iteration in range(max_iter):
        z, slope = _z_and_slope(h, obs_weights, delta)
        logger.debug("scale iteration %d: h=%.12g z=%.3g", iteration, h, z)
        if abs(z) <= threshold and h > lo:
            return h
        if z < 0:
            lo = h
        else:
            hi = h
        step = h - z / slope
        h = step if lo < step < hi else 0.5 * (lo + hi)

    logger.warning("Newton iteration for the scale did not converge; bisecting")
    try:
        h = optimize.bisect(
            lambda x: _z_and_slope(x, obs_weights, delta)[0],
            1.0 / delta,
            (1.0 + obs_weights.size / LN2) / delta,
            xtol=1e-300,
            rtol=4 * np.finfo(float).eps,
            maxiter=500,
        )
    except (RuntimeError, ValueError) as e:
        raise ConvergenceError(f"scale search failed: {e}") from e
    if abs(_z_and_slope(h, obs_weights, delta)[0]) > threshold:
        raise ConvergenceError("scale search did not reach the requested tolerance")
    return float(h)


@dataclass(frozen=True, eq=False)
class WalleniusContext:
    """Quantities shared by all weight evaluations for one (obs, w) pair.

    Weights are rescaled by ``scale`` (their maximum) before use; ``delta``,
    ``h`` and ``obs_weights`` are in rescaled units. Every quantity that
    reaches a probability is invariant to that rescaling.
    """

    delta: float
    h: float
    tau_peak: float
    phi_peak: float
    phi_second: float
    log_factorials: np.ndarray
    scale: float
    obs_weights: np.ndarray

    def log_choose(self, n: np.ndarray, k: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        table = self.log_factorials
        return table[n] - table[k] - table[n - k]


def build_context(
    obs: PartialMatrix | np.ndarray, w: WeightField, tol: float = 1e-10
) -> WalleniusContext:
    """Precompute the scale, peak and factorial table for ``obs`` and ``w``."""
    mask = _obs_mask_of(obs)
    if mask.shape != w.shape:
        raise DomainError("observation mask and weight field shapes differ")
    if mask.all() or not mask.any():
        raise DomainError("need both observed and missing entries")
    w.require_positive()
    scale = float(w.values.max())
    values = w.values / scale
    obs_weights = values[mask]
    delta = float(values[~mask].sum())
    h = find_scale(obs_weights, delta, tol=tol)
    phi_peak = float(log_phi(np.log(TAU_PEAK), h, delta, obs_weights))
    second = phi_second(TAU_PEAK, h, delta, obs_weights)
    table = gammaln(np.arange(w.n_rows + 2) + 1.0)
    logger.debug("context: delta=%.6g h=%.6g phi''=%.6g", delta, h, second)
    return WalleniusContext(
        delta=delta,
        h=h,
        tau_peak=TAU_PEAK,
        phi_peak=phi_peak,
        phi_second=second,
        log_factorials=table,
        scale=scale,
        obs_weights=obs_weights,
    )


def log_eta_batch(
    group_weights: np.ndarray,
    test_weights: np.ndarray,
    delta: float,
    h: float,
    log_tau: float,
) -> np.ndarray:
    """``log eta_i`` for every row of ``group_weights`` (shape (m, K))."""
    group_weights = np.atleast_2d(np.asarray(group_weights, dtype=float))
    test_weights = np.asarray(test_weights, dtype=float)
    d = group_weights.sum(axis=1) - test_weights.sum()
    swap = _log1mexp(h * test_weights * log_tau).sum() - _log1mexp(
        h * group_weights * log_tau
    ).sum(axis=1)
    return h * d * log_tau + np.log1p(d / delta) + swap


def log_eta_curve(
    group_weights: np.ndarray,
    test_weights: np.ndarray,
    delta: float,
    h: float,
    log_tau: np.ndarray,
) -> np.ndarray:
    """``log eta(tau)`` of a single group over an array of ``log tau``."""
    group_weights = np.asarray(group_weights, dtype=float)
    test_weights = np.asarray(test_weights, dtype=float)
    log_tau = np.asarray(log_tau, dtype=float)
    d = group_weights.sum() - test_weights.sum()
    swap = _log1mexp(h * np.multiply.outer(log_tau, test_weights)).sum(
        axis=-1
    ) - _log1mexp(h * np.multiply.outer(log_tau, group_weights)).sum(axis=-1)
    return h * d * log_tau + np.log1p(d / delta) + swap


def eta(
    group_i: IndexGroup | Sequence[float],
    test_group: IndexGroup | Sequence[float],
    w: WeightField | None,
    delta: float,
    h: float,
    tau: float,
) -> float:
    """Ratio factor ``eta_i(tau; h)`` of the swapped-set integrand.

    ``tau^(h d) (delta + d) / delta * prod (1 - tau^(h w_test)) / (1 - tau^(h w_i))``
    with ``d`` the weight of group ``i`` minus that of the test group. Groups
    may be given as index groups (read from ``w``) or directly as weights.

    Raises:
        DomainError: If ``tau`` is outside (0, 1) or group sizes differ
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")

    def weights_of(group):
        if isinstance(group, IndexGroup):
            if w is None:
                raise DomainError("a weight field is required for index groups")
            return w.at(group.flat(w.n_cols))
        return np.asarray(group, dtype=float)

    wi, wt = weights_of(group_i), weights_of(test_group)
    if wi.shape != wt.shape:
        raise DomainError("groups must have the same size")
    return float(np.exp(log_eta_batch(wi, wt, delta, h, np.log(tau))[0]))


def wallenius_log_prob_quadrature(
    obs_weights: np.ndarray,
    delta: float,
    h: float,
    log_eta: Callable[[np.ndarray], np.ndarray] | None = None,
    rtol: float = 1e-11,
    grid_size: int = 4001,
) -> float:
    """Log set probability of the observed entries by adaptive quadrature.

    Integrates ``Phi(tau; h) * eta(tau)`` over (0, 1). The integrand is
    evaluated as ``exp(log_phi + log_eta - peak)``; a dense grid locates the
    peak and the window holding the mass, which is split into panels for
    ``scipy.integrate.quad`` (Gauss-Kronrod).

    Args:
        obs_weights: Weights of the observed entries
        delta: Total weight of the missing entries
        h: Any positive scale (the integral does not depend on it)
        log_eta: Optional extra log factor, a function of ``log tau``
        rtol: Relative accuracy requested from each panel
        grid_size: Points of the peak-locating grid

    Raises:
        QuadratureError: If the panels do not reach the requested accuracy
    """
    obs_weights = np.asarray(obs_weights, dtype=float)

    def log_f(log_tau):
        value = log_phi(log_tau, h, delta, obs_weights)
        if log_eta is not None:
            value = value + log_eta(log_tau)
        return value

    grid = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
    values = log_f(np.log(grid))
    peak_at = int(np.nanargmax(values))
    peak = float(values[peak_at])
    inside = np.flatnonzero(values >= peak - 40.0)
    step = grid[1] - grid[0]
    lo = max(grid[inside[0]] - step, 0.0)
    hi = min(grid[inside[-1]] + step, 1.0)
    edges = sorted({0.0, lo, float(grid[peak_at]), hi, 1.0})

    def integrand(tau):
        if tau <= 0.0 or tau >= 1.0:
            return 0.0
        return float(np.exp(log_f(np.log(tau)) - peak))

    total = 0.0
    error = 0.0
    for a, b in zip(edges[:-1], edges[1:], strict=True):
        if b <= a:
            continue
        out = integrate.quad(
            integrand, a, b, epsabs=0.0, epsrel=rtol, limit=200, full_output=1
        )
        total += out[0]
        error += out[1]
    if not total > 0 or error > 1e-7 * total:
        raise QuadratureError(
            f"quadrature did not converge (value {total:.3g}, error {error:.3g})"
        )
    return float(np.log(total) + peak)


@lru_cache(maxsize=4096)
def _set_log_prob(weights: tuple[float, ...], total: float) -> float:
    size = len(weights)
    w = np.array(weights)
    log_w = np.log(w)
    n_states = 1 << size
    mass = np.zeros(n_states)
    f = np.full(n_states, -np.inf)
    f[0] = 0.0
    for state in range(1, n_states):
        low = state & -state
        mass[state] = mass[state ^ low] + w[low.bit_length() - 1]
        terms = [
            f[state ^ (1 << j)] + log_w[j] - np.log(total - mass[state ^ (1 << j)])
            for j in range(size)
            if state >> j & 1
        ]
        f[state] = logsumexp(terms)
    return float(f[-1])


def set_log_prob_exact(obs_flat: np.ndarray, weights_flat: np.ndarray) -> float:
    """Exact log probability that successive sampling of ``len(obs_flat)``
    items from the whole grid yields exactly the set ``obs_flat``.

    Sums the telescoping product over every draw order with a subset dynamic
    program. Results are cached on the multiset of weights.

    Raises:
        CapacityError: If the set has more than ``EXACT_MAX_OBS`` entries
    """
    obs_flat = np.asarray(obs_flat, dtype=np.int64)
    if obs_flat.size > EXACT_MAX_OBS:
        raise CapacityError(
            f"exact set probability supports at most {EXACT_MAX_OBS} entries, "
            f"got {obs_flat.size}"
        )
    weights_flat = np.asarray(weights_flat, dtype=float)
    total = float(weights_flat.sum())
    key = tuple(sorted(float(x) / total for x in weights_flat[obs_flat]))
    return _set_log_prob(key, 1.0)


# --------------------------------------------------------------------------
# Conformalization weights
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized masses of the ``n`` calibration groups and the test group.

    Attributes:
        p: Normalized weights; the last entry belongs to the test group
        unnormalized: ``p`` up to a common factor
        log_unnormalized: Logs of the unnormalized weights
        d: Weight of each group minus that of the test group (last is 0)
    """

    p: np.ndarray
    unnormalized: np.ndarray
    log_unnormalized: np.ndarray
    d: np.ndarray

    @property
    def n(self) -> int:
        return self.p.size - 1

    @property
    def max_weight(self) -> float:
        return float(self.p.max())


@dataclass(frozen=True, eq=False)
class ColumnStats:
    """Per-column counts and test-weight masses of one observation pattern."""

    obs_count: np.ndarray
    miss_support: np.ndarray
    miss_mass: np.ndarray


def column_stats(obs: PartialMatrix | np.ndarray, w_star: WeightField) -> ColumnStats:
    mask = _obs_mask_of(obs)
    missing = ~mask
    return ColumnStats(
        obs_count=mask.sum(axis=0),
        miss_support=(missing & (w_star.values > 0)).sum(axis=0),
        miss_mass=np.where(missing, w_star.values, 0.0).sum(axis=0),
    )


def _normalize(log_unnormalized: np.ndarray, d: np.ndarray) -> WeightVector:
    if not np.isfinite(log_unnormalized[-1]):
        raise DegenerateWeightsError("the test group has zero probability under w*")
    if np.isnan(log_unnormalized).any():
        raise DegenerateWeightsError("conformalization weights are undefined")
    log_total = logsumexp(log_unnormalized)
    p = np.exp(log_unnormalized - log_total)
    p = p / p.sum()
    unnormalized = np.exp(log_unnormalized - log_unnormalized.max())
    return WeightVector(p=p, unnormalized=unnormalized, log_unnormalized=log_unnormalized, d=d)


def _swapped_test_log_prob(
    group_flat: np.ndarray,
    group_cols: np.ndarray,
    test_flat: np.ndarray,
    test_col: int,
    w_star: WeightField,
    stats: ColumnStats,
    K: int,
) -> np.ndarray:
    """Log probability of drawing each group as the test group once it has
    traded places with the real test group."""
    ws = w_star.flat
    wx = ws[group_flat]
    wt = ws[test_flat]
    sum_x = wx.sum(axis=1)
    sum_t = float(wt.sum())
    positive_x = (wx > 0).sum(axis=1)
    same = group_cols == test_col

    support, mass = stats.miss_support, stats.miss_mass

    def contrib(count, col_mass):
        return np.where(count >= K, col_mass, 0.0)

    base = float(contrib(support, mass).sum())
    ci = group_cols
    # test column loses the test group and, for same-column groups, gains x_i
    t_count = support[test_col] - K + np.where(same, positive_x, 0)
    t_mass = mass[test_col] - sum_t + np.where(same, sum_x, 0.0)
    c_count = support[ci] + positive_x
    c_mass = mass[ci] + sum_x
    pruned_mass = (
        base
        - contrib(support[test_col], mass[test_col])
        + contrib(t_count, t_mass)
        + np.where(same, 0.0, contrib(c_count, c_mass) - contrib(support[ci], mass[ci]))
    )

    # within-column draws: swapped column mass minus entries already drawn
    column_mass = mass[ci] - np.where(same, sum_t, 0.0)
    suffix = np.cumsum(wx[:, ::-1], axis=1)[:, ::-1]
    denominators = np.column_stack([pruned_mass, column_mass[:, np.newaxis] + suffix[:, 1:]])

    if ((denominators <= 0) & (wx > 0)).any():
        raise DegenerateWeightsError("swapped missing set has no test weight left")
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(wx > 0, np.log(wx) - np.log(denominators), -np.inf)
    return logs.sum(axis=1)


def _column_swap_log_ratio(
    group_cols: np.ndarray,
    test_col: int,
    stats: ColumnStats,
    ctx: WalleniusContext,
    K: int,
) -> np.ndarray:
    """Log ratio of the pruning and group-draw factors after moving ``K``
    observations from each group's column to the test column."""
    out = np.zeros(group_cols.size)
    moved = np.flatnonzero(group_cols != test_col)
    if moved.size == 0:
        return out
    n_i = stats.obs_count[group_cols[moved]]
    n_t = stats.obs_count[test_col]
    nbar_i = n_i - n_i % K
    nbar_t = n_t - n_t % K

    ratio = (
        ctx.log_choose(n_i, nbar_i)
        - ctx.log_choose(n_i - K, nbar_i - K)
        + ctx.log_choose(n_t, nbar_t)
        - ctx.log_choose(n_t + K, nbar_t + K)
    )
    k = np.arange(1, K)
    ratio = ratio + np.sum(
        np.log(nbar_i[:, np.newaxis] - k) - np.log(nbar_t + K - k), axis=1
    )
    out[moved] = ratio
    return out


def _set_log_ratio(
    mode: str,
    group_flat: np.ndarray,
    test_flat: np.ndarray,
    mask: np.ndarray,
    w: WeightField,
    ctx: WalleniusContext,
) -> np.ndarray:
    """``log P(swapped observed set) - log P(observed set)`` for each group."""
    values = w.flat / ctx.scale
    if mode == "fast":
        return log_eta_batch(
            values[group_flat], values[test_flat], ctx.delta, ctx.h, np.log(ctx.tau_peak)
        )

    obs_flat = np.flatnonzero(mask.ravel())
    if mode == "exact":
        base = set_log_prob_exact(obs_flat, w.flat)
        out = []
        for row in group_flat:
            swapped = np.union1d(np.setdiff1d(obs_flat, row), test_flat)
            out.append(set_log_prob_exact(swapped, w.flat) - base)
        return np.array(out)

    base = wallenius_log_prob_quadrature(ctx.obs_weights, ctx.delta, ctx.h)
    out = np.zeros(len(group_flat))
    wt = values[test_flat]
    for i, row in enumerate(group_flat):
        wi = values[row]
        if np.array_equal(np.sort(wi), np.sort(wt)):
            continue
        log_prob = wallenius_log_prob_quadrature(
            ctx.obs_weights,
            ctx.delta,
            ctx.h,
            log_eta=lambda lt, wi=wi: log_eta_curve(wi, wt, ctx.delta, ctx.h, lt),
        )
        out[i] = log_prob - base
    return out


def conformalization_weights(
    plan: CalibrationPlan,
    test_group: IndexGroup,
    obs: PartialMatrix | np.ndarray,
    w: WeightField,
    w_star: WeightField,
    ctx: WalleniusContext | None = None,
    mode: str = "fast",
    stats: ColumnStats | None = None,
) -> WeightVector:
    """Weights ``p_1..p_{n+1}`` for the calibration groups of ``plan``.

    Args:
        plan: Calibration plan built from ``obs``
        test_group: Test group, all entries missing
        obs: Observed entries (or their boolean mask); the rest is missing
        w: Sampling weights of the observation process
        w_star: Test weights
        ctx: Context for ``(obs, w)``; built on demand
        mode: ``"fast"``, ``"quadrature"`` or ``"exact"``
        stats: Column statistics for ``(obs, w_star)``; built on demand

    Returns:
        WeightVector whose last entry belongs to the test group

    Raises:
        ParameterError: If ``mode`` is unknown or group sizes differ
        DomainError: If the test group is not missing
        DegenerateWeightsError: If the weights are undefined
    """
    if mode not in MODES:
        raise ParameterError(f"unknown weight mode {mode!r}")
    K = plan.K
    if test_group.K != K:
        raise ParameterError(
            f"test group has {test_group.K} entries but calibration groups have {K}"
        )
    mask = _obs_mask_of(obs)
    test_flat = test_group.flat(w.n_cols)
    if mask.ravel()[test_flat].any():
        raise DomainError("test group contains observed entries")
    if ctx is None:
        ctx = build_context(mask, w)
    if stats is None:
        stats = column_stats(mask, w_star)

    group_flat = np.vstack([plan.group_flat, test_flat])
    group_cols = np.append(plan.group_cols, test_group.col)

    log_unnormalized = (
        _set_log_ratio(mode, group_flat, test_flat, mask, w, ctx)
        + _swapped_test_log_prob(
            group_flat, group_cols, test_flat, test_group.col, w_star, stats, K
        )
        + _column_swap_log_ratio(group_cols, test_group.col, stats, ctx, K)
    )
    d = w.flat[group_flat].sum(axis=1) - w.flat[test_flat].sum()
    return _normalize(log_unnormalized, d)


def individual_weights(
    cal_indices: Sequence[MatrixIndex],
    test_index: MatrixIndex,
    obs: PartialMatrix | np.ndarray,
    w: WeightField,
    w_star: WeightField,
    ctx: WalleniusContext | None = None,
) -> WeightVector:
    """Weights for single-entry calibration (group size one).

    With one entry per group there is no pruning and no column constraint:
    ``p_i`` is proportional to ``eta_i(1/2) * w*_i / (W*_miss - w*_test + w*_i)``.
    """
    mask = _obs_mask_of(obs)
    if ctx is None:
        ctx = build_context(mask, w)
    cal_flat = indices_to_flat(cal_indices, w.n_rows, w.n_cols)
    test_flat = indices_to_flat([test_index], w.n_rows, w.n_cols)
    flat = np.append(cal_flat, test_flat)
    values = w.flat / ctx.scale
    log_ratio = log_eta_batch(
        values[flat][:, np.newaxis], values[test_flat], ctx.delta, ctx.h, np.log(0.5)
    )
    ws = w_star.flat
    miss_mass = float(np.where(mask.ravel(), 0.0, ws).sum())
    with np.errstate(divide="ignore"):
        log_test = np.log(ws[flat]) - np.log(miss_mass - ws[test_flat] + ws[flat])
    d = w.flat[flat] - w.flat[test_flat]
    return _normalize(log_ratio + log_test, d)


def estimation_gap(p_hat: WeightVector | np.ndarray, p: WeightVector | np.ndarray) -> float:
    """Half the L1 distance between two weight vectors."""
    a = p_hat.p if isinstance(p_hat, WeightVector) else np.asarray(p_hat)
    b = p.p if isinstance(p, WeightVector) else np.asarray(p)
    return float(0.5 * np.abs(a - b).sum())


# --------------------------------------------------------------------------
# Exact joint law (test oracle)
# --------------------------------------------------------------------------


def group_draw_log_prob(
    test_group: IndexGroup, miss_flat: np.ndarray, w_star: WeightField
) -> float:
    """Log probability that column-group sampling from ``miss_flat`` returns
    exactly ``test_group`` (in order)."""
    K = test_group.K
    miss_mask = np.zeros(w_star.shape, dtype=bool)
    miss_mask.ravel()[miss_flat] = True
    test_flat = test_group.flat(w_star.n_cols)
    if not miss_mask.ravel()[test_flat].all():
        return -np.inf
    support = miss_mask & (w_star.values > 0)
    eligible = support.sum(axis=0) >= K
    if not eligible[test_group.col]:
        return -np.inf
    pruned_mass = float(w_star.values[miss_mask & eligible[np.newaxis, :]].sum())
    column_mass = float(w_star.values[miss_mask[:, test_group.col], test_group.col].sum())
    wt = w_star.at(test_flat)
    if (wt <= 0).any():
        return -np.inf
    removed = np.concatenate(([0.0], np.cumsum(wt)[:-1]))
    denominators = np.concatenate(([pruned_mass], column_mass - removed[1:]))
    return float(np.sum(np.log(wt) - np.log(denominators)))


def exact_joint_log_prob(
    groups: Sequence[IndexGroup],
    test_group: IndexGroup,
    prune: Iterable[MatrixIndex],
    train: Iterable[MatrixIndex],
    obs: Iterable[MatrixIndex],
    miss: Iterable[MatrixIndex],
    w: WeightField,
    w_star: WeightField,
    include_obs_prob: bool = True,
) -> float:
    """Closed-form log probability of one full outcome.

    The outcome is: the observed set, its pruned entries, the ordered
    calibration groups, the training set and the test group. Factors are the
    test draw, the observed-set probability (exact enumeration), the uniform
    per-column pruning and the uniform group draws. With
    ``include_obs_prob=False`` the result is conditional on the observed set.

    Raises:
        CapacityError: If the observed set is too large to enumerate
        DomainError: If the pieces do not form a valid partition
    """
    n_rows, n_cols = w.shape
    obs_flat = np.unique(indices_to_flat(obs, n_rows, n_cols))
    miss_flat = np.unique(indices_to_flat(miss, n_rows, n_cols))
    prune_flat = np.unique(indices_to_flat(prune, n_rows, n_cols))
    train_flat = np.unique(indices_to_flat(train, n_rows, n_cols))
    if obs_flat.size > EXACT_MAX_OBS:
        raise CapacityError(
            f"exact joint law supports at most {EXACT_MAX_OBS} observed entries"
        )
    if np.intersect1d(obs_flat, miss_flat).size or obs_flat.size + miss_flat.size != w.flat.size:
        raise DomainError("observed and missing sets must partition the grid")

    K = test_group.K
    if any(g.K != K for g in groups):
        raise DomainError("all groups must have the same size")
    group_flat = [g.flat(n_cols) for g in groups]
    used = np.concatenate([train_flat, *group_flat]) if groups else train_flat
    if used.size != obs_flat.size or not np.array_equal(np.sort(used), obs_flat):
        raise DomainError("groups and training set must partition the observed set")
    if not np.isin(prune_flat, train_flat).all():
        raise DomainError("pruned entries must belong to the training set")

    obs_cols = obs_flat % n_cols
    counts = np.bincount(obs_cols, minlength=n_cols)
    m = counts % K
    if not np.array_equal(np.bincount(prune_flat % n_cols, minlength=n_cols), m):
        return -np.inf
    nbar = counts - m
    log_fact = gammaln(np.arange(counts.max() + 2) + 1.0)

    total = group_draw_log_prob(test_group, miss_flat, w_star)
    if include_obs_prob:
        total += set_log_prob_exact(obs_flat, w.flat)
    total -= float(np.sum(log_fact[counts] - log_fact[m] - log_fact[nbar]))

    nbar_total = int(nbar.sum())
    seen = np.zeros(n_cols, dtype=np.int64)
    for i, group in enumerate(groups):
        total -= np.log(nbar_total - K * i)
        j = seen[group.col]
        for k in range(1, K):
            total -= np.log(nbar[group.col] - K * j - k)
        seen[group.col] += 1
    return float(total)
