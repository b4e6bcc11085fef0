import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from diffsurv.data import embedded_leukemia
from diffsurv.paths import DiffusionPath, TimeGrid, make_grid
from diffsurv.survival import (
    ABS,
    IDENTITY,
    SQUARE,
    HazardSpec,
    Observation,
    SurvivalDataset,
    cumulative_hazard,
    density_curve,
    hazard_curve,
    kaplan_meier,
    likelihood_weights,
    log_likelihood,
    sample_event_time,
    survival_curve,
)

import oracles


def constant_path(c, end=1.0, dt=0.1, extra=()):
    g = make_grid(0, end, dt, extra)
    return DiffusionPath(g, np.full(len(g), float(c)))


class TestHazardSpec:
    def test_builtins(self):
        u = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_array_equal(ABS(u), [2, 0, 3])
        np.testing.assert_array_equal(SQUARE(u), [4, 0, 9])
        np.testing.assert_array_equal(IDENTITY(u), [0, 0, 3])
        np.testing.assert_allclose(HazardSpec("exp", 0.5)(u), np.exp(0.5 * u))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            HazardSpec("cube")


class TestDataset:
    def test_rejects_bad_times(self):
        for t in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(ValueError):
                Observation(t, True)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            SurvivalDataset(())

    def test_groups(self):
        d = SurvivalDataset.from_arrays([1, 2, 3], [1, 0, 1], groups=["a", "b", "a"])
        assert d.group_labels == ["a", "b"]
        np.testing.assert_array_equal(d.by_group()["a"].times, [1, 3])
        assert d.pooled().group_labels == [None]
        assert d.y_max == 3.0


class TestCumulativeHazard:
    def test_hand_left_riemann(self):
        p = DiffusionPath(TimeGrid(np.array([0, 0.5, 1.0])), np.array([1.0, 3.0, 2.0]))
        assert cumulative_hazard(p, ABS, 1.0) == 2.0

    def test_constant_path(self):
        p = constant_path(1.5)
        assert cumulative_hazard(p, SQUARE, 1.0) == pytest.approx(2.25)
        assert cumulative_hazard(p, SQUARE, 0.0) == 0.0

    def test_off_grid(self):
        with pytest.raises(ValueError):
            cumulative_hazard(constant_path(1.0), SQUARE, 0.55)

    def test_nondecreasing(self, rng):
        g = make_grid(0, 1, 0.01)
        p = DiffusionPath(g, rng.standard_normal(len(g)))
        lam = [cumulative_hazard(p, ABS, t) for t in g.nodes]
        assert lam[0] == 0.0
        assert np.all(np.diff(lam) >= 0)


class TestLogLikelihood:
    def test_single_event_constant_hazard(self):
        p = constant_path(2.0, extra=[0.45])
        d = SurvivalDataset.from_arrays([0.45], [1])
        assert log_likelihood(d, p, IDENTITY) == pytest.approx(math.log(2) - 2 * 0.45, abs=1e-14)

    def test_single_censored(self):
        p = constant_path(2.0, extra=[0.45])
        d = SurvivalDataset.from_arrays([0.45], [0])
        assert log_likelihood(d, p, IDENTITY) == pytest.approx(-0.9, abs=1e-14)

    def test_hand_value_three_observations(self):
        p = constant_path(2.0)
        d = SurvivalDataset.from_arrays([0.4, 0.8, 0.9], [1, 1, 0])
        assert log_likelihood(d, p, SQUARE) == pytest.approx(2 * math.log(4) - 4 * (0.4 + 0.8 + 0.9), abs=1e-12)

    def test_zero_hazard_event_is_minus_inf(self):
        p = constant_path(0.0)
        d = SurvivalDataset.from_arrays([0.5], [1])
        assert log_likelihood(d, p, ABS) == -math.inf

    def test_off_grid_and_short_path(self):
        p = constant_path(1.0)
        with pytest.raises(ValueError):
            log_likelihood(SurvivalDataset.from_arrays([0.55], [1]), p, ABS)
        with pytest.raises(ValueError):
            log_likelihood(SurvivalDataset.from_arrays([1.5], [1]), p, ABS)

    def test_extra_censoring_never_increases(self, rng):
        g = make_grid(0, 1, 0.1)
        p = DiffusionPath(g, 1 + rng.random(len(g)))
        d = SurvivalDataset.from_arrays([0.3, 0.7], [1, 0])
        d2 = SurvivalDataset.from_arrays([0.3, 0.7, 0.5], [1, 0, 0])
        assert log_likelihood(d2, p, ABS) <= log_likelihood(d, p, ABS)

    def test_weights_reproduce_likelihood(self, rng):
        g = make_grid(0, 1, 0.1)
        x = 1 + rng.random(len(g))
        times, events = np.array([0.3, 0.7, 1.0]), np.array([True, False, True])
        counts, w = likelihood_weights(g, times, events)
        direct = log_likelihood(SurvivalDataset.from_arrays(times, events), DiffusionPath(g, x), ABS)
        assert np.sum(counts * np.log(x) - w * x) == pytest.approx(direct, rel=1e-13)


class TestCurves:
    def test_constant_path_survival(self):
        p = constant_path(1.5)
        s = survival_curve(p, SQUARE)
        np.testing.assert_allclose(s.values, np.exp(-2.25 * p.grid.nodes), rtol=1e-14)
        assert s.values[0] == 1.0

    def test_consistency_bit_exact(self, rng):
        g = make_grid(0, 1, 0.01)
        p = DiffusionPath(g, rng.standard_normal(len(g)))
        s, h, f = survival_curve(p, ABS), hazard_curve(p, ABS), density_curve(p, ABS)
        assert np.max(np.abs(f.values - h.values * s.values)) == 0.0
        assert np.all(np.diff(s.values) <= 0)
        assert np.all(f.values >= 0)

    def test_zero_hazard_region_flat(self):
        g = make_grid(0, 1, 0.1)
        x = np.where(g.nodes < 0.5, 0.0, 1.0)
        s = survival_curve(DiffusionPath(g, x), IDENTITY)
        assert np.all(s.values[g.nodes <= 0.5] == 1.0)


class TestEventTime:
    def test_ks_against_exponential(self):
        rng = np.random.default_rng(7)
        p = constant_path(2.0, end=20.0, dt=0.01)
        draws = [sample_event_time(p, SQUARE, 20.0, rng) for _ in range(10_000)]
        assert all(d.event for d in draws)
        assert stats.kstest([d.time for d in draws], stats.expon(scale=0.25).cdf).pvalue > 0.01

    def test_zero_hazard_censored(self, rng):
        d = sample_event_time(constant_path(0.0), ABS, 1.0, rng)
        assert d.time == 1.0 and not d.event

    def test_piecewise_inversion(self):
        g = make_grid(0, 2, 0.5)
        p = DiffusionPath(g, np.where(g.nodes < 1, 1.0, 3.0))
        d = sample_event_time(p, IDENTITY, 2.0, barrier=2.0)
        assert d.event
        assert d.time == pytest.approx(1 + 1 / 3, abs=1e-14)


class TestKaplanMeier:
    def test_uncensored_is_empirical(self, rng):
        t = rng.exponential(size=50)
        km = kaplan_meier((t, np.ones(50, dtype=bool)))
        for s in np.sort(t):
            assert km(s) == pytest.approx(np.mean(t > s), abs=1e-12)
        np.testing.assert_array_equal(km.times[1:], np.sort(t))

    def test_leukemia_6mp(self):
        d = embedded_leukemia("weeks").by_group()["6MP"]
        km = kaplan_meier(d)
        for t, s in oracles.KM_6MP.items():
            assert abs(km(t) - float(s)) < 1e-12
        assert km(6) == pytest.approx(1 - 3 / 21)

    def test_leukemia_placebo(self):
        km = kaplan_meier(embedded_leukemia("weeks").by_group()["placebo"])
        for t, s in oracles.KM_PLACEBO.items():
            assert abs(km(t) - float(s)) < 1e-12
        assert km(8) == pytest.approx(float(Fraction(8, 21)), abs=1e-15)

    def test_deaths_before_censorings(self):
        km = kaplan_meier(([1.0, 1.0, 2.0], [True, False, True]))
        assert km(1.0) == pytest.approx(2 / 3)
        assert km(2.0) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            kaplan_meier(([], []))
