"""Scoring rules and validation machinery.

MSE, CRPS, interval score, fuzzy coverage/width, stratified fold plans, the
design-based direct estimator, precision-weighted combination, the
difference-distribution construction for areal comparison, and score
aggregation.  Everything here is a pure function of its inputs.

Fuzzy intervals follow linear interpolation of the empirical CDF (type-7
quantiles); coverage is the exact probability that endpoint randomization
over tied order statistics brackets the target, which reduces to the plain
indicator whenever all draws are distinct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DataError


@dataclass(eq=False)
class PredictiveSample:
    """Sorted draws of a scalar predictand, by default on the probability scale.

    ``validate_range=False`` is the hook for samples that legitimately leave
    [0, 1], e.g. difference distributions.
    """

    draws: np.ndarray
    validate_range: bool = True

    def __post_init__(self):
        d = np.sort(np.asarray(self.draws, dtype=float).reshape(-1))
        if d.size == 0:
            raise ValueError("PredictiveSample needs at least one draw")
        if self.validate_range and (d[0] < -1e-12 or d[-1] > 1 + 1e-12):
            raise ValueError("draws must lie in [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def m(self) -> int:
        return self.draws.size


def _draws(pred) -> np.ndarray:
    if isinstance(pred, PredictiveSample):
        return pred.draws
    return np.sort(np.asarray(pred, dtype=float).reshape(-1))


def crps(y: float, pred) -> float:
    """Sample CRPS: mean|X - y| - (1/2) mean|X - X'| over all ordered pairs.

    The pairwise term uses the sorted-draw identity, O(m log m) overall.
    """
    x = _draws(pred)
    m = x.size
    term1 = float(np.mean(np.abs(x - y)))
    k = np.arange(m)
    pair_sum = 2.0 * float(np.sum((2 * k - m + 1) * x))  # sum_ij |x_i - x_j|
    return term1 - pair_sum / (2.0 * m * m)


def interval_score(y: float, pred, alpha: float = 0.05) -> float:
    """Interval score (u - l) + (2/alpha) * one-sided exceedances.

    Endpoints are the alpha/2 and 1-alpha/2 empirical quantiles taken as
    order statistics (sup of {x : F(x) <= alpha/2} and its upper mirror).
    """
    x = _draws(pred)
    m = x.size
    k = int(math.floor(m * alpha / 2.0))
    lo = x[min(k, m - 1)]
    hi = x[max(m - 1 - k, 0)]
    score = hi - lo
    if y > hi:
        score += (2.0 / alpha) * (y - hi)
    elif y < lo:
        score += (2.0 / alpha) * (lo - y)
    return float(score)


def _fuzzy_pit_interval(x: np.ndarray, y: float):
    """Range of interpolated-CDF levels the randomized PIT of y occupies.

    For y equal to a run of tied draws the type-7 quantile function is flat
    there and the PIT is uniform over the flat stretch; elsewhere the PIT is
    the single interpolated level (or just outside [0, 1] beyond the range).
    """
    m = x.size
    left = int(np.searchsorted(x, y, "left"))
    right = int(np.searchsorted(x, y, "right"))
    if right > left:
        return left / (m - 1), (right - 1) / (m - 1)
    if y < x[0]:
        return -1.0, -1.0
    if y > x[-1]:
        return 2.0, 2.0
    i = left - 1
    v = (i + (y - x[i]) / (x[left] - x[i])) / (m - 1)
    return v, v


def fuzzy_coverage(y: float, pred, alpha: float = 0.05) -> float:
    """Probability the randomized exact-level (1 - alpha) interval covers y.

    Equals the plain indicator of the interpolated-quantile interval when all
    draws are distinct; on a point mass at y it equals 1 - alpha.  A single
    draw degenerates to the equality indicator.
    """
    x = _draws(pred)
    if x.size == 1:
        return 1.0 if y == x[0] else 0.0
    a_lo, a_hi = alpha / 2.0, 1.0 - alpha / 2.0
    lo, hi = _fuzzy_pit_interval(x, y)
    if hi <= lo:
        return 1.0 if a_lo <= lo <= a_hi else 0.0
    overlap = max(0.0, min(hi, a_hi) - max(lo, a_lo))
    return overlap / (hi - lo)


def fuzzy_width(pred, alpha: float = 0.05) -> float:
    """Expected width of the randomized interval: interpolated quantile gap."""
    x = _draws(pred)
    if x.size == 1:
        return 0.0
    lo, hi = np.quantile(x, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return float(hi - lo)


def mse(y: float, pred) -> float:
    """Squared error of the predictive mean."""
    x = _draws(pred)
    return float((y - x.mean()) ** 2)


@dataclass(eq=False)
class FoldPlan:
    """Cluster -> fold assignment, stratified by survey, region, urbanicity."""

    fold: np.ndarray  # per record, 1..n_folds (within its survey)
    n_folds: int

    def indices(self, records, survey: str, fold: int) -> np.ndarray:
        return np.array(
            [i for i, r in enumerate(records)
             if r.survey == survey and self.fold[i] == fold],
            dtype=int,
        )


def make_folds(records: Sequence, rng: np.random.Generator, n_folds: int = 10) -> FoldPlan:
    """Stratified folds: shuffle each (survey, region, urbanicity) stratum and
    deal round-robin, so fold sizes within a stratum differ by at most 1."""
    fold = np.zeros(len(records), dtype=int)
    strata: dict = {}
    for i, rec in enumerate(records):
        strata.setdefault((rec.survey, rec.region, rec.urbanicity), []).append(i)
    for key in sorted(strata):
        idx = np.asarray(strata[key], dtype=int)
        perm = rng.permutation(idx.size)
        start = int(rng.integers(n_folds))
        for pos, j in enumerate(idx[perm]):
            fold[j] = 1 + (start + pos) % n_folds
    return FoldPlan(fold=fold, n_folds=n_folds)


def direct_estimate(clusters: Sequence) -> tuple:
    """Hajek ratio estimate with a with-replacement cluster linearized variance.

    mean = sum(w y) / sum(w n); variance = (m/(m-1)) sum (z_i - zbar)^2 / (sum w n)^2
    with z_i = w_i (y_i - mean * n_i).  With fewer than two clusters the
    variance is undefined and reported as nan.
    """
    w = np.array([c.weight for c in clusters], dtype=float)
    y = np.array([c.y for c in clusters], dtype=float)
    n = np.array([c.n for c in clusters], dtype=float)
    denom = float(np.sum(w * n))
    if not np.sum(w) > 0:
        raise DataError("direct estimate needs positive total weight")
    mean = float(np.sum(w * y)) / denom
    m = len(clusters)
    if m < 2:
        return mean, float("nan")
    z = w * (y - mean * n)
    var = m / (m - 1.0) * float(np.sum((z - z.mean()) ** 2)) / denom ** 2
    return mean, var


def precision_weighted_combine(est1: tuple, est2: tuple) -> tuple:
    """Combine two (mean, variance) estimates with weights 1/variance."""
    m1, v1 = est1
    m2, v2 = est2
    if v1 == 0:
        return est1
    if v2 == 0:
        return est2
    if v1 < 0 or v2 < 0:
        raise DataError("variances must be non-negative")
    p1, p2 = 1.0 / v1, 1.0 / v2
    v = 1.0 / (p1 + p2)
    return (m1 * p1 + m2 * p2) * v, v


def diff_distribution(model_draws, direct: tuple, rng: np.random.Generator,
                      m_draws: int = 1000) -> PredictiveSample:
    """Sample of model-minus-direct differences, scored downstream against 0.

    Pairs ``m_draws`` model draws with as many draws from the direct
    estimator's sampling distribution, a Normal(mean, var) truncated to
    [0, 1].
    """
    x = _draws(model_draws)
    mean, var = direct
    if not var >= 0:
        raise DataError("direct-estimate variance must be >= 0")
    model_part = x if x.size == m_draws else rng.choice(x, size=m_draws, replace=True)
    if var == 0:
        direct_part = np.full(m_draws, mean)
    else:
        sd = math.sqrt(var)
        lo, hi = ndtr((0.0 - mean) / sd), ndtr((1.0 - mean) / sd)
        u = rng.uniform(lo, hi, size=m_draws)
        direct_part = mean + sd * ndtri(u)
    return PredictiveSample(model_part - direct_part, validate_range=False)


def aggregate_scores(scores, weights) -> float:
    """Weighted mean of per-unit scores; invariant to weight rescaling."""
    s = np.asarray(scores, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = float(w.sum())
    if total <= 0:
        raise DataError("zero total weight in score aggregation")
    return float(np.sum(s * w) / total)
