import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from anonprev.errors import DataError
from anonprev.model import ClusterRecord
from anonprev.scoring import (
    PredictiveSample,
    aggregate_scores,
    crps,
    diff_distribution,
    direct_estimate,
    fuzzy_coverage,
    fuzzy_width,
    interval_score,
    make_folds,
    mse,
    precision_weighted_combine,
)


def gaussian_crps(y, mu, sigma):
    z = (y - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / math.sqrt(math.pi))


class TestCrps:
    def test_point_mass(self):
        assert crps(0.4, PredictiveSample(np.full(50, 0.4))) == pytest.approx(0.0, abs=1e-15)

    def test_two_draw_hand_value(self):
        assert crps(0.0, np.array([0.0, 1.0])) == pytest.approx(0.25)

    def test_gaussian_oracle(self):
        rng = np.random.default_rng(100)
        draws = rng.standard_normal(100_000)
        got = crps(0.0, PredictiveSample(draws, validate_range=False))
        want = gaussian_crps(0.0, 0.0, 1.0)
        assert want == pytest.approx(0.2337, abs=5e-4)
        assert abs(got - want) / want < 0.02

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40),
           st.floats(0, 1))
    def test_matches_brute_force(self, draws, y):
        x = np.asarray(draws)
        got = crps(y, PredictiveSample(x))
        m = x.size
        brute = np.abs(x - y).mean() - 0.5 * np.abs(x[:, None] - x[None, :]).mean()
        assert got == pytest.approx(brute, abs=1e-12)


class TestIntervalScore:
    def test_inside_interval_is_width(self):
        rng = np.random.default_rng(0)
        draws = np.sort(rng.uniform(0, 1, 200))
        k = int(200 * 0.025)
        lo, hi = draws[k], draws[199 - k]
        assert interval_score(0.5 * (lo + hi), draws) == pytest.approx(hi - lo)

    def test_one_sided_penalty(self):
        draws = np.sort(np.random.default_rng(1).uniform(0, 1, 200))
        k = int(200 * 0.025)
        lo, hi = draws[k], draws[199 - k]
        delta = 0.07
        got = interval_score(hi + delta, draws, alpha=0.05)
        assert got == pytest.approx((hi - lo) + (2 / 0.05) * delta)

    def test_degenerate_point_mass(self):
        assert interval_score(0.3, np.full(10, 0.3)) == 0.0


class TestFuzzy:
    def test_distinct_draws_reduce_to_standard(self):
        rng = np.random.default_rng(2)
        draws = rng.uniform(0, 1, 501)  # distinct with probability 1
        lo, hi = np.quantile(draws, [0.025, 0.975], method="linear")
        y_in = 0.5 * (lo + hi)
        assert fuzzy_coverage(y_in, draws) == 1.0
        assert fuzzy_coverage(hi + 0.01, draws) == 0.0
        assert fuzzy_coverage(lo - 0.01, draws) == 0.0

    @given(st.integers(0, 2**31 - 1))
    def test_distinct_equals_indicator(self, seed):
        rng = np.random.default_rng(seed)
        draws = rng.uniform(0, 1, 101)
        y = rng.uniform(0, 1)
        lo, hi = np.quantile(draws, [0.025, 0.975], method="linear")
        want = 1.0 if lo <= y <= hi else 0.0
        assert fuzzy_coverage(y, draws) == want

    def test_far_outside(self):
        draws = np.random.default_rng(3).uniform(0.4, 0.6, 100)
        assert fuzzy_coverage(0.99, draws) == 0.0

    def test_point_mass_fuzzy_mass(self):
        draws = np.full(100, 0.3)
        assert fuzzy_coverage(0.3, draws, alpha=0.05) == pytest.approx(0.95)
        assert fuzzy_width(draws, alpha=0.05) == 0.0

    def test_single_draw_degenerate(self):
        assert fuzzy_coverage(0.3, np.array([0.3])) == 1.0
        assert fuzzy_coverage(0.4, np.array([0.3])) == 0.0
        assert fuzzy_width(np.array([0.3])) == 0.0

    def test_width_is_quantile_gap(self):
        draws = np.random.default_rng(4).uniform(0, 1, 400)
        lo, hi = np.quantile(draws, [0.025, 0.975], method="linear")
        assert fuzzy_width(draws) == pytest.approx(hi - lo)


class TestMse:
    def test_exact_mean(self):
        draws = np.array([0.2, 0.4])
        assert mse(0.3, draws) == pytest.approx(0.0, abs=1e-16)

    def test_offset(self):
        draws = np.full(10, 0.5)
        assert mse(0.6, draws) == pytest.approx(0.01)

    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        draws = rng.uniform(0, 1, 20)
        assert mse(0.5, draws) == mse(0.5, rng.permutation(draws))


def make_records(counts):
    """counts: dict (survey, region, urb) -> number of clusters."""
    recs = []
    for (survey, region, urb), c in counts.items():
        for _ in range(c):
            obs = (0.5, 0.5) if survey == "jittered" else None
            recs.append(ClusterRecord(1, 10, urb, survey, region, observed=obs))
    return recs


class TestFolds:
    def test_25_cluster_stratum_sizes(self):
        recs = make_records({("geomasked", 0, "U"): 25})
        plan = make_folds(recs, np.random.default_rng(0))
        sizes = np.bincount(plan.fold, minlength=11)[1:]
        assert sorted(sizes) == [2, 2, 2, 2, 2, 3, 3, 3, 3, 3]

    def test_single_cluster_stratum(self):
        recs = make_records({("geomasked", 0, "U"): 1})
        plan = make_folds(recs, np.random.default_rng(1))
        assert 1 <= plan.fold[0] <= 10

    @given(st.integers(0, 2**31 - 1))
    def test_partition(self, seed):
        rng = np.random.default_rng(seed)
        counts = {("jittered", int(r), u): int(rng.integers(1, 12))
                  for r in range(3) for u in ("U", "R")}
        recs = make_records(counts)
        plan = make_folds(recs, rng)
        assert np.all(plan.fold >= 1) and np.all(plan.fold <= 10)
        total = sum(plan.indices(recs, "jittered", f).size for f in range(1, 11))
        assert total == len(recs)
        # within-stratum sizes differ by at most one
        for (survey, region, urb), c in counts.items():
            idx = [i for i, r in enumerate(recs)
                   if (r.survey, r.region, r.urbanicity) == (survey, region, urb)]
            sizes = np.bincount(plan.fold[idx], minlength=11)[1:]
            assert sizes.max() - sizes.min() <= 1


def weighted_cluster(y, n, w):
    return ClusterRecord(y, n, "U", "geomasked", 0, weight=w)


class TestDirectEstimate:
    def test_constant_rate(self):
        recs = [weighted_cluster(3, 10, 2.0) for _ in range(5)]
        mean, var = direct_estimate(recs)
        assert mean == pytest.approx(0.3)
        assert var == pytest.approx(0.0, abs=1e-18)

    def test_two_cluster_hand_value(self):
        recs = [weighted_cluster(2, 10, 1.0), weighted_cluster(8, 10, 1.0)]
        mean, var = direct_estimate(recs)
        assert mean == pytest.approx(0.5)
        z = np.array([1.0 * (2 - 0.5 * 10), 1.0 * (8 - 0.5 * 10)])
        want = 2 / 1 * np.sum((z - z.mean()) ** 2) / (20.0 ** 2)
        assert var == pytest.approx(want)

    @given(st.floats(0.1, 20.0))
    def test_weight_rescaling_invariance(self, scale):
        rng = np.random.default_rng(5)
        recs = [weighted_cluster(int(rng.integers(0, 11)), 10, float(w))
                for w in rng.uniform(0.5, 2.0, 6)]
        scaled = [ClusterRecord(r.y, r.n, r.urbanicity, r.survey, r.region,
                                weight=r.weight * scale) for r in recs]
        m1, v1 = direct_estimate(recs)
        m2, v2 = direct_estimate(scaled)
        assert m1 == pytest.approx(m2, rel=1e-12)
        assert v1 == pytest.approx(v2, rel=1e-9)

    def test_single_cluster_variance_missing(self):
        mean, var = direct_estimate([weighted_cluster(3, 10, 1.0)])
        assert mean == pytest.approx(0.3)
        assert math.isnan(var)


class TestPrecisionWeightedCombine:
    def test_equal_variances_average(self):
        m, v = precision_weighted_combine((0.2, 0.02), (0.6, 0.02))
        assert m == pytest.approx(0.4)
        assert v == pytest.approx(0.01)

    def test_infinite_variance_limit(self):
        m, v = precision_weighted_combine((0.2, 0.01), (0.9, 1e12))
        assert m == pytest.approx(0.2, abs=1e-8)

    def test_hand_value(self):
        m, v = precision_weighted_combine((0.4, 0.01), (0.6, 0.03))
        assert m == pytest.approx(0.45)
        assert v == pytest.approx(0.0075)

    def test_zero_variance_passthrough(self):
        assert precision_weighted_combine((0.4, 0.0), (0.6, 0.03)) == (0.4, 0.0)


class TestDiffDistribution:
    def test_degenerate_zero(self):
        rng = np.random.default_rng(6)
        diff = diff_distribution(np.full(100, 0.4), (0.4, 0.0), rng, 100)
        assert np.all(diff.draws == 0.0)

    def test_mean_shift(self):
        rng = np.random.default_rng(7)
        model = np.full(1000, 0.5) + rng.normal(0, 1e-6, 1000)
        diff = diff_distribution(model, (0.4, 1e-12), rng, 1000)
        assert diff.draws.mean() == pytest.approx(0.1, abs=1e-4)

    def test_crps_decreases_toward_agreement(self):
        rng = np.random.default_rng(8)
        scores = []
        for model_mean in (0.8, 0.65, 0.5):
            model = np.clip(rng.normal(model_mean, 0.02, 2000), 0, 1)
            diff = diff_distribution(model, (0.5, 0.0004), rng, 2000)
            scores.append(crps(0.0, diff))
        assert scores[0] > scores[1] > scores[2]


class TestAggregateScores:
    def test_equal_scores(self):
        assert aggregate_scores([0.3, 0.3, 0.3], [1, 5, 2]) == pytest.approx(0.3)

    def test_zero_weight_excluded(self):
        assert aggregate_scores([0.3, 99.0], [1.0, 0.0]) == pytest.approx(0.3)

    def test_survey_combination(self):
        # two-survey weighting by sample size: N = (100, 300)
        s = (100 * 0.2 + 300 * 0.4) / 400
        assert aggregate_scores([0.2, 0.4], [100, 300]) == pytest.approx(s)
        assert s == pytest.approx(0.25 * 0.2 + 0.75 * 0.4)

    @given(st.floats(0.01, 100.0))
    def test_rescaling_invariance(self, scale):
        scores = [0.1, 0.5, 0.9]
        weights = np.array([1.0, 2.0, 3.0])
        a = aggregate_scores(scores, weights)
        b = aggregate_scores(scores, weights * scale)
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_total_weight_errors(self):
        with pytest.raises(DataError):
            aggregate_scores([0.1], [0.0])


class TestPropriety:
    def test_crps_and_is_prefer_the_truth(self):
        # sign test over replicates, ties dropped (the interval score ties
        # whenever neither interval is breached)
        from scipy.stats import binomtest

        rng = np.random.default_rng(9)
        crps_wins = crps_n = is_wins = is_n = 0
        n_rep = 200
        for _ in range(n_rep):
            mu = rng.uniform(0.3, 0.7)
            y = rng.normal(mu, 0.05)
            true_draws = rng.normal(mu, 0.05, 400)
            shifted = true_draws + 0.08
            c_t, c_s = crps(y, true_draws), crps(y, shifted)
            if abs(c_t - c_s) > 1e-12:
                crps_n += 1
                crps_wins += c_t < c_s
            i_t, i_s = interval_score(y, true_draws), interval_score(y, shifted)
            if abs(i_t - i_s) > 1e-12:
                is_n += 1
                is_wins += i_t < i_s
        assert binomtest(crps_wins, crps_n, 0.5, alternative="greater").pvalue < 0.01
        assert binomtest(is_wins, is_n, 0.5, alternative="greater").pvalue < 0.01
