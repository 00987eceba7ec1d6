import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ncx2

from uavmec.physics import DomainError
from uavmec.robustness import (
    ChanceSpec,
    JitterModel,
    chance_satisfied,
    mc_violation_probability,
    noncentral_chi2_cdf,
    sample_jitter,
    speed_violation_probability,
)

# Frozen from a standalone 10^6-sample Monte-Carlo run that drew explicit
# before/after jitter pairs with numpy (seed 20240601).
MC_ORIGIN_SIGMA1_LIMIT3 = 0.212089
MC_28M_SIGMA1_LIMIT30 = 0.085869


class TestSampleJitter:
    def test_zero_sigma(self):
        assert np.array_equal(sample_jitter(JitterModel(0.0), np.random.default_rng(0)), np.zeros(3))

    def test_moments(self):
        rng = np.random.default_rng(3)
        model = JitterModel(1.0)
        x = np.array([sample_jitter(model, rng) for _ in range(200_000)])
        # vectorized draw for the million-sample bound
        x = np.vstack([x, rng.normal(0.0, 1.0, size=(800_000, 3))])
        var = x.var(axis=0)
        assert np.all(np.abs(var - 1.0) < 0.01)
        cov = np.cov(x.T)
        off = cov[~np.eye(3, dtype=bool)]
        assert np.all(np.abs(off) < 0.01)

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            JitterModel(-1.0)


class TestNoncentralChi2:
    @pytest.mark.parametrize("x,nc", [(0.5, 0.0), (4.5, 0.0), (450.0, 392.0), (10.0, 3.0), (1e-3, 50.0), (800.0, 900.0)])
    def test_against_reference(self, x, nc):
        ref = ncx2.cdf(x, 3, nc) if nc > 0 else __import__("scipy.stats", fromlist=["chi2"]).chi2.cdf(x, 3)
        assert noncentral_chi2_cdf(x, 3.0, nc) == pytest.approx(ref, abs=1e-10)

    def test_nonpositive_x(self):
        assert noncentral_chi2_cdf(0.0, 3.0, 5.0) == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            noncentral_chi2_cdf(float("nan"), 3.0, 1.0)
        with pytest.raises(DomainError):
            noncentral_chi2_cdf(1.0, 0.0, 1.0)


class TestSpeedViolation:
    def test_zero_sigma_indicator(self):
        assert speed_violation_probability((10, 0, 0), JitterModel(0.0), 30.0) == 0.0
        assert speed_violation_probability((31, 0, 0), JitterModel(0.0), 30.0) == 1.0

    def test_origin_against_mc_oracle(self):
        p = speed_violation_probability((0, 0, 0), JitterModel(1.0), 3.0)
        assert abs(p - MC_ORIGIN_SIGMA1_LIMIT3) <= 3e-3

    def test_origin_matches_scaled_chi(self):
        # |n| / sqrt(2) is chi with 3 dof when d = 0
        from scipy.stats import chi

        p = speed_violation_probability((0, 0, 0), JitterModel(1.0), 3.0)
        assert p == pytest.approx(chi.sf(3.0 / math.sqrt(2.0), 3), abs=1e-10)

    def test_near_limit_against_mc_oracle(self):
        p = speed_violation_probability((28, 0, 0), JitterModel(1.0), 30.0)
        assert abs(p - MC_28M_SIGMA1_LIMIT30) <= 3e-3

    def test_domain(self):
        with pytest.raises(DomainError):
            speed_violation_probability((math.nan, 0, 0), JitterModel(1.0), 30.0)
        with pytest.raises(DomainError):
            speed_violation_probability((1, 0, 0), JitterModel(1.0), 0.0)
        with pytest.raises(DomainError):
            speed_violation_probability((1, 0), JitterModel(1.0), 30.0)

    @given(st.floats(0.0, 40.0), st.floats(0.0, 40.0), st.floats(0.1, 3.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_norm(self, a, b, sigma):
        lo, hi = sorted((a, b))
        m = JitterModel(sigma)
        assert speed_violation_probability((lo, 0, 0), m, 30.0) <= speed_violation_probability((hi, 0, 0), m, 30.0) + 1e-10

    @given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.0, 30.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_sigma_inside_limit(self, s1, s2, d):
        lo, hi = sorted((s1, s2))
        assert (speed_violation_probability((d, 0, 0), JitterModel(lo), 30.0)
                <= speed_violation_probability((d, 0, 0), JitterModel(hi), 30.0) + 1e-10)

    def test_sigma_helps_when_plan_exceeds_limit(self):
        # beyond the limit, extra noise can carry the realized move back inside
        p1 = speed_violation_probability((31, 0, 0), JitterModel(1.0), 30.0)
        p2 = speed_violation_probability((31, 0, 0), JitterModel(2.0), 30.0)
        assert p2 < p1

    @given(st.floats(5.0, 50.0), st.floats(5.0, 50.0), st.floats(0.0, 40.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_limit(self, l1, l2, d):
        lo, hi = sorted((l1, l2))
        m = JitterModel(1.0)
        assert speed_violation_probability((d, 0, 0), m, hi) <= speed_violation_probability((d, 0, 0), m, lo) + 1e-10

    @given(st.floats(0.0, 40.0), st.floats(0.0, 2 * math.pi), st.floats(-1.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_rotation_invariant(self, r, az, c):
        s = math.sqrt(1 - c * c)
        d = (r * s * math.cos(az), r * s * math.sin(az), r * c)
        m = JitterModel(1.5)
        assert speed_violation_probability(d, m, 30.0) == pytest.approx(
            speed_violation_probability((r, 0, 0), m, 30.0), abs=1e-10
        )


class TestMonteCarlo:
    def test_zero_sigma(self):
        rng = np.random.default_rng(0)
        assert mc_violation_probability((31, 0, 0), JitterModel(0.0), 30.0, 5, rng) == 1.0
        assert mc_violation_probability((29, 0, 0), JitterModel(0.0), 30.0, 5, rng) == 0.0

    def test_single_sample(self):
        p = mc_violation_probability((29, 0, 0), JitterModel(2.0), 30.0, 1, np.random.default_rng(0))
        assert p in (0.0, 1.0)

    def test_binomial_agreement(self):
        n = 200_000
        d, m = (27.0, 0.0, 0.0), JitterModel(1.0)
        p = speed_violation_probability(d, m, 30.0)
        est = mc_violation_probability(d, m, 30.0, n, np.random.default_rng(5))
        assert abs(est - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_needs_samples(self):
        with pytest.raises(DomainError):
            mc_violation_probability((0, 0, 0), JitterModel(1.0), 30.0, 0, np.random.default_rng(0))


class TestChanceSatisfied:
    def test_boundaries(self):
        spec = ChanceSpec(0.1)
        assert chance_satisfied(0.0, spec)
        assert chance_satisfied(0.1, spec)
        assert not chance_satisfied(0.1 + 1e-9, spec)

    def test_invalid(self):
        with pytest.raises(DomainError):
            ChanceSpec(0.0)
        with pytest.raises(DomainError):
            chance_satisfied(1.5, ChanceSpec(0.1))
