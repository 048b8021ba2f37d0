import math

import numpy as np
import pytest

from mfe import ModelParams, RewardFn, ThresholdPolicy, reward_eval, switch_probability


class TestRewardFn:
    def test_inverse_n(self):
        assert reward_eval(RewardFn.inverse_n(), 1, 4) == 0.25

    def test_zero_resource(self):
        assert reward_eval(RewardFn.inverse_n(), 0, 4) == 0.0

    def test_inverse_sqrt_n(self):
        assert reward_eval(RewardFn.inverse_sqrt_n(), 1, 16) == 0.25

    def test_inverse_n_squared(self):
        assert RewardFn.inverse_n_squared()(5) == pytest.approx(0.04)

    def test_zero_occupancy_rejected(self):
        with pytest.raises(ValueError):
            reward_eval(RewardFn.inverse_n(), 1, 0)

    def test_table_values_and_zero_tail(self):
        f = RewardFn.table([3.0, 1.0, 0.5])
        assert f(1) == 3.0 and f(3) == 0.5
        assert f(4) == 0.0 and f(100) == 0.0

    def test_table_must_be_non_increasing(self):
        with pytest.raises(ValueError):
            RewardFn.table([1.0, 2.0])

    def test_table_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            RewardFn.table([1.0, -0.5])

    def test_monotone_non_increasing(self):
        for f in (
            RewardFn.inverse_n(),
            RewardFn.inverse_n_squared(),
            RewardFn.inverse_sqrt_n(),
            RewardFn.table([5.0, 5.0, 2.0, 0.1]),
        ):
            vals = [f(n) for n in range(1, 60)]
            assert all(b <= a for a, b in zip(vals, vals[1:]))
            assert all(v >= 0 for v in vals)


class TestModelParams:
    def test_validation(self):
        good = dict(lam=1.0, gamma=0.9, beta=2.0, mu01=1.0, mu10=1.0,
                    reward=RewardFn.inverse_n())
        ModelParams(**good)
        for key, bad in [("lam", 0.0), ("gamma", 1.0), ("gamma", 0.0),
                         ("beta", -1.0), ("mu01", 0.0), ("mu10", -2.0)]:
            with pytest.raises(ValueError):
                ModelParams(**{**good, key: bad})

    def test_flip_rates_and_marginal(self):
        p = ModelParams(lam=1.0, gamma=0.9, beta=2.0, mu01=0.3, mu10=0.7,
                        reward=RewardFn.inverse_n())
        assert p.mu(0) == 0.3 and p.mu(1) == 0.7
        assert p.z_marginal() == pytest.approx(0.3)


class TestThresholdPolicy:
    def test_validation(self):
        ThresholdPolicy(0.0, 0.0)
        for bad in (-1.0, math.inf, math.nan):
            with pytest.raises(ValueError):
                ThresholdPolicy(bad, 1.0)

    def test_threshold_lookup(self):
        p = ThresholdPolicy(1.5, 4.0)
        assert p.threshold(0) == 1.5 and p.threshold(1) == 4.0


class TestSwitchProbability:
    def test_integer_threshold_switches_at_threshold(self):
        assert switch_probability(ThresholdPolicy(4.0, 4.0), 0, 4) == 1.0

    def test_fractional_threshold_mixes(self):
        assert switch_probability(ThresholdPolicy(4.3, 4.3), 1, 4) == pytest.approx(0.7)

    def test_below_floor_stays(self):
        assert switch_probability(ThresholdPolicy(4.3, 4.3), 1, 3) == 0.0

    def test_above_threshold_switches(self):
        assert switch_probability(ThresholdPolicy(4.3, 4.3), 1, 5) == 1.0

    def test_occupancy_zero_rejected(self):
        with pytest.raises(ValueError):
            switch_probability(ThresholdPolicy(1.0, 1.0), 0, 0)

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            pol = ThresholdPolicy(float(rng.uniform(0, 12)), float(rng.uniform(0, 12)))
            for z in (0, 1):
                probs = [switch_probability(pol, z, n) for n in range(1, 20)]
                assert all(0.0 <= s <= 1.0 for s in probs)
                assert all(b >= a for a, b in zip(probs, probs[1:]))

    def test_matches_indicator_expression(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            nz = float(rng.uniform(0, 10))
            pol = ThresholdPolicy(nz, nz)
            n = int(rng.integers(1, 14))
            expected = float(n > nz) + (n + 1 - nz) * float(n == math.floor(nz))
            assert switch_probability(pol, 0, n) == pytest.approx(expected)
