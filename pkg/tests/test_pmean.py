import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpharm import (Exponent, InvalidExponent, InvalidSample, WeightedSample, as_exponent,
                    compute_pmean, pmean_oracle, signed_power, weighted_median)

P_SET = [1, 1.3, 1.5, 2, 3, 4, 10, "inf"]


def sample(values, weights=None):
    return WeightedSample(np.asarray(values, float), None if weights is None else np.asarray(weights, float))


class TestExponent:
    def test_finite_range(self):
        assert Exponent.finite(1).value == 1.0
        for bad in (0.5, float("nan"), -1):
            with pytest.raises(InvalidExponent):
                Exponent.finite(bad)

    def test_infinity_is_a_tag(self):
        p = Exponent.infinity()
        assert p.is_infinite
        assert as_exponent("inf") == p
        assert not as_exponent(1e300).is_infinite


class TestSignedPower:
    @pytest.mark.parametrize("t,p,want", [(-2, 3, -4), (0, 1, 0), (0.25, 1.5, 0.5), (3, 1, 1), (-3, 1, -1)])
    def test_values(self, t, p, want):
        assert signed_power(t, p) == pytest.approx(want, abs=1e-15)

    def test_rejects_small_p(self):
        with pytest.raises(InvalidExponent):
            signed_power(1.0, 0.5)


class TestSample:
    def test_normalizes(self):
        s = sample([1, 2], [2, 6])
        assert s.weights.sum() == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("vals,w", [([], None), ([1, float("nan")], None), ([1, 2], [1, -1]), ([1, 2], [0, 0])])
    def test_invalid(self, vals, w):
        with pytest.raises(InvalidSample):
            sample(vals, w)


class TestComputePmean:
    def test_mean(self):
        assert compute_pmean(sample([1, 2, 3]), 2).nu == pytest.approx(2)

    def test_midrange_any_weights(self):
        assert compute_pmean(sample([0, 10, 4], [0.1, 0.2, 0.7]), "inf").nu == 5

    def test_p3_closed_form(self):
        assert compute_pmean(sample([0, 0, 1]), 3).nu == pytest.approx(1 / (1 + math.sqrt(2)), abs=1e-10)

    def test_p4_symmetric(self):
        assert compute_pmean(sample([0, 1]), 4).nu == pytest.approx(0.5, abs=1e-12)

    def test_zero_weight_values_ignored_at_inf(self):
        assert compute_pmean(sample([0, 10, 100], [0.5, 0.5, 0.0]), "inf").nu == 5

    def test_constant_sample(self):
        for p in P_SET:
            assert compute_pmean(sample([3.5] * 7), p).nu == 3.5

    def test_agrees_with_oracle(self, rng):
        for _ in range(40):
            n = int(rng.integers(1, 30))
            s = sample(rng.normal(size=n), rng.random(n) + 0.01)
            for p in P_SET:
                assert abs(compute_pmean(s, p).nu - pmean_oracle(s, p, n_scan=2001)) <= 1e-6


class TestMedian:
    def test_odd(self):
        assert weighted_median(sample([1, 2, 100])) == 2

    def test_singleton(self):
        assert weighted_median(sample([5])) == 5

    def test_tie_midpoint(self):
        # dense sampling of the indicator of [-1, 1] on [-2, 2]: every nu in [0, 1] minimizes
        x = np.linspace(-2, 2, 4000, endpoint=False) + 0.0005
        v = (np.abs(x) <= 1).astype(float)
        assert weighted_median(sample(v)) == pytest.approx(0.5)
        assert compute_pmean(sample(v), 1).nu == pytest.approx(0.5)


class TestOracle:
    def test_examples(self):
        assert pmean_oracle(sample([1, 2, 3]), 2) == pytest.approx(2, abs=1e-7)
        assert pmean_oracle(sample([0, 0, 1]), 3) == pytest.approx(0.414214, abs=1e-6)
        assert pmean_oracle(sample([0, 10, 4]), "inf") == pytest.approx(5, abs=1e-7)

    def test_nearly_flat_objective(self):
        # mass left of the median is 0.5 - 1e-5: the L1 objective is almost flat there
        s = sample([-90, 7.7, 95], [0.5 - 1e-5, 2e-5, 0.5 - 1e-5])
        assert pmean_oracle(s, 1, n_scan=2001) == pytest.approx(7.7, abs=1e-9)
        wide = sample(np.linspace(-100, 100, 41), np.linspace(1, 2, 41))
        for p in (1.3, 1.5):
            assert pmean_oracle(wide, p, n_scan=2001) == pytest.approx(compute_pmean(wide, p).nu, abs=1e-9)


finite_values = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40)
exponents = st.sampled_from(P_SET)


@settings(max_examples=150, deadline=None)
@given(finite_values, exponents, st.floats(-50, 50), st.floats(0.01, 20))
def test_translation_and_scaling(vals, p, c, lam):
    s = sample(vals)
    nu = compute_pmean(s, p).nu
    spread = max(1.0, max(vals) - min(vals))
    assert compute_pmean(sample(np.asarray(vals) + c), p).nu == pytest.approx(nu + c, abs=1e-8 * (spread + abs(c)))
    assert compute_pmean(sample(lam * np.asarray(vals)), p).nu == pytest.approx(lam * nu, abs=1e-8 * lam * spread)


@settings(max_examples=150, deadline=None)
@given(finite_values, exponents, st.data())
def test_monotone_and_bracketed(vals, p, data):
    v = np.asarray(vals)
    bump = np.asarray(data.draw(st.lists(st.floats(0, 10), min_size=len(v), max_size=len(v))))
    nu = compute_pmean(sample(v), p).nu
    assert v.min() - 1e-12 <= nu <= v.max() + 1e-12
    assert compute_pmean(sample(v + bump), p).nu >= nu - 1e-9 * max(1.0, np.ptp(v) + bump.max())
