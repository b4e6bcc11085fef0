import math

import numpy as np
import pytest
from scipy import stats

from diffsurv import models
from diffsurv.drift import LinearBasisDrift
from diffsurv.mcmc import (
    GibbsSampler,
    SamplerConfig,
    block_knots,
    blocks_from_knots,
    build_strands,
    conjugate_posterior,
    conjugate_theta_update,
    independence_update,
    reconstruct_path,
    run_chain,
)
from diffsurv.models import Beta, Gaussian, ModelInstance, Uniform
from diffsurv.paths import (
    NoiseIncrements,
    euler_maruyama_simulate,
    girsanov_logdensity,
    make_grid,
    sample_brownian_path,
    sample_noise,
)
from diffsurv.summary import acf_ess
from diffsurv.survival import ABS, SurvivalDataset

import oracles
import simdata

OU = LinearBasisDrift([models.BasisTerm("identity")], ["theta"])


def brownian_model(sigma=1.5, x0=0.5):
    """No parameters, zero drift: the latent path is a scaled Brownian motion."""
    return ModelInstance("bm", LinearBasisDrift([], []), ABS, (), (), sigma=sigma, x0=x0)


def small_toy():
    data, _ = simdata.toy_dataset(20, seed=11)
    return models.toy_model(), data


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"burn_in": 10, "iterations": 5},
            {"block_length": 0.01, "dt": 0.01},
            {"parametrization": "cp"},
            {"thin": 0},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig(**kw).validate()

    def test_retained(self):
        assert SamplerConfig(iterations=10, burn_in=3, thin=2).retained == 4

    def test_horizon_below_data(self):
        m, data = small_toy()
        with pytest.raises(ValueError, match="horizon"):
            build_strands(m, data, SamplerConfig(horizon=0.1))

    def test_no_data_needs_horizon(self):
        with pytest.raises(ValueError):
            build_strands(models.toy_model(), None, SamplerConfig())


class TestBlocks:
    def test_reference_blocking(self):
        blocks = blocks_from_knots(block_knots(0, 1, 0.2))
        np.testing.assert_allclose([b[:2] for b in blocks], [[0, 0.4], [0.2, 0.6], [0.4, 0.8], [0.6, 1.0]])
        assert [b[2] for b in blocks] == [False, False, False, True]

    def test_two_block_lengths_is_one_free_block(self):
        assert blocks_from_knots(block_knots(0, 0.4, 0.2)) == [(0.0, 0.4, True)]

    def test_short_horizon_falls_back(self):
        assert blocks_from_knots(block_knots(0, 0.3, 0.2)) == [(0.0, 0.3, True)]

    @pytest.mark.parametrize("T,bl", [(1.0, 0.2), (0.93, 0.2), (2.5, 0.3), (0.05, 0.2), (1.0, 0.5)])
    def test_coverage(self, T, bl):
        blocks = blocks_from_knots(block_knots(0, T, bl))
        assert blocks[0][0] == 0 and blocks[-1][1] == T and blocks[-1][2]
        for (a0, b0, _), (a1, _, _) in zip(blocks, blocks[1:]):
            assert a1 <= b0

    def test_knots_on_grid(self):
        m, data = small_toy()
        (strand,) = build_strands(m, data, SamplerConfig(dt=0.01, block_length=0.2, horizon=1.0))
        for lo, hi, _ in strand.blocks:
            assert hi > lo
        assert strand.blocks[-1][1] == strand.iw
        assert strand.grid.nodes[strand.iw] == data.y_max


class TestConjugate:
    def test_constant_path(self):
        c, T, sigma, lam, mu = 1.5, 1.0, 0.7, 0.2, 0.3
        g = make_grid(0, T, 0.01)
        x = np.full(len(g), c)
        mean, cov, _ = conjugate_posterior([x[:-1, None]], [np.diff(x)], [g.dt], sigma, [mu], [[lam]])
        prec = c * c * T / sigma**2 + lam
        assert cov[0, 0] == pytest.approx(1 / prec, rel=1e-12)
        assert mean[0] == pytest.approx(lam * mu / prec, rel=1e-12)

    def test_empty_window_is_prior(self, rng):
        mu, lam = np.array([-1.4, -1.0]), np.diag([0.2, 0.2])
        mean, cov, _ = conjugate_posterior([np.zeros((0, 2))], [np.zeros(0)], [np.zeros(0)], 1.0, mu, lam)
        np.testing.assert_allclose(mean, mu)
        np.testing.assert_allclose(cov, np.linalg.inv(lam))

    def test_matches_quadrature(self):
        rng = np.random.default_rng(1)
        g = make_grid(0, 1, 0.01)
        p = euler_maruyama_simulate(OU, [-1.0], 0.8, 1.0, g, sample_noise(g, rng))
        mu, var = 0.5, 2.0
        mean, cov, _ = conjugate_posterior([p.values[:-1, None]], [np.diff(p.values)], [g.dt], 0.8, [mu], [[1 / var]])
        q_mean, q_var = oracles.quadrature_posterior(
            lambda t: stats.norm.logpdf(t, mu, math.sqrt(var)) + girsanov_logdensity(p, OU, [t], 0.8)
        )
        assert abs(mean[0] / q_mean - 1) < 1e-4
        assert abs(cov[0, 0] / q_var - 1) < 1e-4

    def test_multi_window_sums(self, rng):
        m = models.toy_model()
        mu, lam = m.conjugate_prior()
        windows = []
        for end in (0.5, 0.8):
            g = make_grid(0, end, 0.01)
            windows.append((sample_brownian_path(g, 1.0, 2.0, rng).values, g.dt))
        F = [m.drift.basis_matrix(v[:-1], [0, 0]) for v, _ in windows]
        mean, cov, _ = conjugate_posterior(F, [np.diff(v) for v, _ in windows], [d for _, d in windows], 1.0, mu, lam)
        L = lam + sum(f.T @ (f * d[:, None]) for f, (_, d) in zip(F, windows))
        S = lam @ mu + sum(f.T @ np.diff(v) for f, (v, _) in zip(F, windows))
        np.testing.assert_allclose(cov, np.linalg.inv(L), rtol=1e-12)
        np.testing.assert_allclose(mean, np.linalg.solve(L, S), rtol=1e-12)

    def test_draw_moments(self, rng):
        m = models.toy_model()
        mu, lam = m.conjugate_prior()
        g = make_grid(0, 1, 0.01)
        v = sample_brownian_path(g, 1.0, 2.0, rng).values
        F = m.drift.basis_matrix(v[:-1], [0, 0])
        mean, cov, _ = conjugate_posterior([F], [np.diff(v)], [g.dt], 1.0, mu, lam)
        draws = np.array([conjugate_theta_update(m.drift, [0, 0], [(v, g.dt)], 1.0, mu, lam, rng) for _ in range(20000)])
        assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * np.sqrt(np.diag(cov) / 20000))
        np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.05, atol=0.01)

    def test_degenerate_basis(self):
        x = np.zeros(11)
        with pytest.raises(ValueError, match="positive definite"):
            conjugate_posterior([x[:-1, None]], [np.diff(x)], [np.full(10, 0.1)], 1.0, [0.0], [[0.0]])


class TestIndependenceUpdate:
    def test_proposal_equals_target(self, rng):
        d = Beta(2, 3)
        assert all(independence_update(0.4, d, d.logpdf, rng)[1] for _ in range(500))

    def test_current_value_proposed(self, rng):
        class Point:
            def logpdf(self, x):
                return 0.0

            def sample(self, rng):
                return 0.3

        assert independence_update(0.3, Point(), lambda v: -v * v, rng) == (0.3, True)

    def test_zero_density_at_current(self, rng):
        with pytest.raises(ValueError):
            independence_update(1.5, Beta(0.5, 0.5), lambda v: 0.0, rng)

    def test_uniform_target_with_arcsine_proposal(self):
        rng = np.random.default_rng(4)
        target, prop = Uniform(0, 1), Beta(0.5, 0.5)
        x, out = 0.5, np.empty(100_000)
        for i in range(out.shape[0]):
            x, _ = independence_update(x, prop, target.logpdf, rng)
            out[i] = x
        se = math.sqrt(out.var() / acf_ess(out).ess)
        assert abs(out.mean() - 0.5) < 3 * se


class TestReconstruct:
    def test_zero_drift_ncp(self, rng):
        g = make_grid(0, 1, 0.1)
        noise = sample_noise(g, rng)
        p = reconstruct_path("ncp", OU, [0.0], 0.7, noise, 1.2, 1.0)
        np.testing.assert_allclose(p.values, 1.2 + 0.7 * np.concatenate(([0], np.cumsum(noise.increments))), rtol=1e-14)

    def test_pnc_identity_without_tail(self, rng):
        g = make_grid(0, 1, 0.1)
        lat = sample_brownian_path(g, 1.0, 1.0, rng)
        np.testing.assert_array_equal(reconstruct_path("pnc", OU, [0.5], 1.0, lat, 1.0, 1.0).values, lat.values)

    def test_pnc_tail_continuity(self, rng):
        g = make_grid(0, 2, 0.1)
        lat = sample_brownian_path(g, 1.0, 1.0, rng)
        p = reconstruct_path("pnc", OU, [-0.5], 1.0, lat, 1.0, 1.0)
        k = g.index(1.0)
        np.testing.assert_array_equal(p.values[: k + 1], lat.values[: k + 1])
        dw = np.diff(lat.values)
        assert p.values[k + 1] == p.values[k] + (-0.5 * p.values[k]) * g.dt[k] + dw[k]

    def test_centered_identity(self, rng):
        g = make_grid(0, 1, 0.1)
        lat = sample_brownian_path(g, 1.0, 1.0, rng)
        assert reconstruct_path("centered", OU, [0.0], 1.0, lat, 1.0, 1.0) is lat

    def test_off_grid(self, rng):
        g = make_grid(0, 1, 0.1)
        with pytest.raises(ValueError):
            reconstruct_path("pnc", OU, [0.0], 1.0, sample_brownian_path(g, 1, 0, rng), 0.0, 0.55)


def sampler_and_state(param, model=None, data=None, horizon=None, seed=0, sigma=None):
    if model is None:
        model, data = small_toy()
    cfg = SamplerConfig(iterations=1, burn_in=0, dt=0.02, block_length=0.2, horizon=horizon, parametrization=param)
    s = GibbsSampler(model, data, cfg)
    state = s.initial_state(np.random.default_rng(seed), np.random.default_rng(seed + 1))
    return s, state


class TestBlockRatios:
    @pytest.mark.parametrize("param", ["centered", "pnc", "ncp"])
    def test_identical_segment(self, param):
        s, st = sampler_and_state(param, horizon=1.2)
        for block in s.strands[0].blocks:
            lo, hi, _ = block
            lr, _ = s.segment_log_ratio(st, 0, block, st.strands[0].head[lo : hi + 1].copy())
            assert lr == 0.0

    @pytest.mark.parametrize("param", ["centered", "pnc", "ncp"])
    def test_antisymmetry(self, param, rng):
        s, st = sampler_and_state(param, horizon=1.2)
        for block in s.strands[0].blocks:
            lo, hi, _ = block
            old = st.strands[0].head[lo : hi + 1].copy()
            seg = s.propose_segment(s.strands[0], st.strands[0], block, rng)
            fwd, new = s.segment_log_ratio(st, 0, block, seg)
            moved = st.copy()
            s.apply_segment(moved, 0, block, seg, new)
            back, _ = s.segment_log_ratio(moved, 0, block, old)
            assert fwd + back == pytest.approx(0.0, abs=1e-9)

    def test_zero_drift_ratio_is_likelihood_ratio(self, rng):
        data = SurvivalDataset.from_arrays([0.3, 0.5, 0.8], [1, 0, 1])
        s, st = sampler_and_state("centered", model=brownian_model(x0=2.0), data=data)
        for block in s.strands[0].blocks:
            seg = s.propose_segment(s.strands[0], st.strands[0], block, rng)
            lr, new = s.segment_log_ratio(st, 0, block, seg)
            moved = st.copy()
            s.apply_segment(moved, 0, block, seg, new)
            assert lr == pytest.approx(s.log_likelihood(moved) - s.log_likelihood(st), abs=1e-10)

    @pytest.mark.parametrize("param", ["centered", "pnc", "ncp"])
    def test_local_ratio_equals_global_posterior_change(self, param, rng):
        s, st = sampler_and_state(param, horizon=1.2)
        bounds = s._bounds(s._params(st.theta))

        def log_post(state):
            total = s.log_likelihood(state)
            if param != "ncp":
                total += s._girsanov_total(state, bounds, state.sigma)
            return total

        for block in s.strands[0].blocks:
            seg = s.propose_segment(s.strands[0], st.strands[0], block, rng)
            lr, new = s.segment_log_ratio(st, 0, block, seg)
            moved = st.copy()
            s.apply_segment(moved, 0, block, seg, new)
            assert lr == pytest.approx(log_post(moved) - log_post(st), abs=1e-8)

    @pytest.mark.parametrize("param", ["centered", "pnc", "ncp"])
    def test_cache_consistent_after_updates(self, param):
        m, data = small_toy()
        trace = run_chain(m, data, SamplerConfig(iterations=30, burn_in=0, dt=0.02, horizon=1.2, parametrization=param,
                                                 seed=3))
        s = GibbsSampler(m, data, SamplerConfig(dt=0.02, horizon=1.2, parametrization=param))
        fresh = trace.final_state.copy()
        s.reconstruct(fresh)
        for a, b in zip(trace.final_state.strands, fresh.strands):
            np.testing.assert_array_equal(a.paths[0], b.paths[0])


class TestSigma:
    def test_fixed_sigma_rejects_update(self, rng):
        s, st = sampler_and_state("pnc")
        with pytest.raises(ValueError):
            s.sigma_update(st, rng)

    def test_unit_path_starts_at_zero(self):
        m, data = small_toy()
        s, st = sampler_and_state("pnc", model=models.toy_model(sigma=None), data=data)
        assert st.strands[0].head[0] == 0.0
        assert st.sigma == 1.0

    def test_quadratic_variation(self, rng):
        g = make_grid(0, 1, 1e-4)
        x = sample_brownian_path(g, 1.7, 0.0, rng).values
        assert np.sum(np.diff(x) ** 2) == pytest.approx(1.7**2, rel=0.05)

    @pytest.mark.parametrize("param", ["pnc", "ncp"])
    def test_sigma_moves_and_cache_consistent(self, param):
        m, data = small_toy()
        m = models.toy_model(sigma=None)
        cfg = SamplerConfig(iterations=50, burn_in=0, dt=0.02, parametrization=param, seed=2)
        tr = run_chain(m, data, cfg)
        assert 0 < tr.acceptance["sigma"][0] <= tr.acceptance["sigma"][1] == 50
        assert len(np.unique(tr.column("sigma"))) > 1
        s = GibbsSampler(m, data, cfg)
        fresh = tr.final_state.copy()
        s.reconstruct(fresh)
        np.testing.assert_array_equal(fresh.strands[0].paths[0], tr.final_state.strands[0].paths[0])


class TestRunChain:
    def test_empty_trace(self):
        m, data = small_toy()
        tr = run_chain(m, data, SamplerConfig(iterations=5, burn_in=5, dt=0.02))
        assert len(tr) == 0
        assert tr.acceptance["path"][1] > 0
        assert all(a <= n for a, n in tr.acceptance.values())

    def test_thinning_length(self):
        m, data = small_toy()
        tr = run_chain(m, data, SamplerConfig(iterations=23, burn_in=3, thin=4, dt=0.02))
        assert len(tr) == 5
        np.testing.assert_array_equal(tr.iterations, [3, 7, 11, 15, 19])
        assert tr.curves["all"]["survival"].shape == (5, len(tr.curve_times["all"]))

    @pytest.mark.parametrize("param", ["centered", "pnc", "ncp"])
    def test_determinism(self, param):
        m, data = small_toy()
        cfg = SamplerConfig(iterations=40, burn_in=5, dt=0.02, parametrization=param, seed=2**63 + 5)
        a, b = run_chain(m, data, cfg), run_chain(m, data, cfg)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.curves["all"]["density"], b.curves["all"]["density"])
        assert a.acceptance == b.acceptance

    @pytest.mark.parametrize("param", ["pnc", "ncp"])
    def test_horizon_robustness(self, param):
        m, data = small_toy()
        runs = []
        for T in (data.y_max, 2 * data.y_max):
            heads = []
            cfg = SamplerConfig(iterations=60, burn_in=0, dt=0.02, horizon=T, parametrization=param, seed=9)
            tr = run_chain(m, data, cfg, callback=lambda it, s, st: heads.append(st.strands[0].head.copy()))
            runs.append((tr.theta, heads))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        for h0, h1 in zip(runs[0][1], runs[1][1]):
            np.testing.assert_array_equal(h0, h1)

    def test_centered_not_horizon_robust(self):
        m, data = small_toy()
        thetas = [
            run_chain(m, data, SamplerConfig(iterations=20, burn_in=0, dt=0.02, horizon=T, parametrization="centered",
                                             seed=9)).theta
            for T in (data.y_max, 2 * data.y_max)
        ]
        assert not np.array_equal(*thetas)

    def test_groups_are_separate_strands(self):
        from diffsurv.data import embedded_leukemia

        data = embedded_leukemia()
        m = models.weibull_perturbation()
        s = GibbsSampler(m, data, SamplerConfig(dt=0.01, horizon=0.75))
        assert [st.label for st in s.strands] == ["6MP", "placebo"]
        pooled = GibbsSampler(models.weibull_perturbation(pool_groups=True), data, SamplerConfig(dt=0.01, horizon=0.75))
        assert len(pooled.strands) == 1

    def test_weibull_power_uses_independence_sampler(self):
        from diffsurv.data import embedded_leukemia

        tr = run_chain(models.weibull_perturbation(), embedded_leukemia(),
                       SamplerConfig(iterations=50, burn_in=0, dt=0.01, horizon=0.75, seed=1))
        assert set(tr.acceptance) == {"path", "theta2", "theta.conjugate"}
        assert np.all((tr.column("theta2") > 0) & (tr.column("theta2") < 1))

    def test_covariate_model_needs_ncp(self):
        data = simdata.two_cell_dataset(20, seed=1)
        m = models.build_covariate_model(models.CovariateModelSpec.from_dataset(data, ["H"], []), sigma=1.0)
        with pytest.raises(ValueError, match="ncp"):
            GibbsSampler(m, data, SamplerConfig(parametrization="pnc"))
        tr = run_chain(m, data, SamplerConfig(iterations=20, burn_in=0, dt=0.02, parametrization="ncp", seed=1))
        assert set(tr.curves) == {"H=0", "H=1"}

    def test_covariate_cells_share_noise(self):
        data = simdata.two_cell_dataset(20, seed=1)
        m = models.build_covariate_model(models.CovariateModelSpec.from_dataset(data, ["H"], []), sigma=1.0)
        s, st = sampler_and_state("ncp", model=m, data=data)
        (strand,) = s.strands
        params = s._params(st.theta)
        for c, cell in enumerate(strand.cells):
            x = np.empty(strand.n)
            x[0] = m.x0_for(params, cell.z)
            noise = NoiseIncrements(strand.grid, np.diff(np.concatenate((st.strands[0].head, st.strands[0].tail[1:]))))
            ref = euler_maruyama_simulate(m.drift, params, m.sigma, x[0], strand.grid, noise, cell.z)
            np.testing.assert_allclose(st.strands[0].paths[c], ref.values, rtol=1e-12)


class TestStationarity:
    def test_prior_recovery(self):
        m = models.gompertz_perturbation(Gaussian([0.0], [[1.0]]), sigma=1.0, x0=1.0)
        cfg = SamplerConfig(iterations=40_000, burn_in=0, thin=4, dt=0.05, block_length=0.1, horizon=0.2,
                            parametrization="centered", seed=3, record_curves=False)
        th = run_chain(m, None, cfg).column("theta")
        assert len(th) == 10_000
        assert stats.kstest(th, stats.norm(0, 1).cdf).pvalue > 0.01

    @pytest.mark.slow
    def test_zero_drift_brownian_marginal(self):
        m = brownian_model(sigma=1.5, x0=0.5)
        cfg = SamplerConfig(iterations=150_000, burn_in=0, dt=0.05, block_length=0.25, horizon=1.0,
                            parametrization="centered", seed=1, record_curves=False)
        vals = []
        run_chain(m, None, cfg, callback=lambda it, s, st: vals.append(st.strands[0].paths[0][8]) if it % 15 == 0 else None)
        assert stats.kstest(vals, stats.norm(0.5, 1.5 * math.sqrt(0.4)).cdf).pvalue > 0.01


@pytest.mark.slow
class TestParametrizationEquivalence:
    def test_centered_and_pnc_agree(self):
        m, data = small_toy()
        est = []
        for param in ("centered", "pnc"):
            tr = run_chain(m, data, SamplerConfig(iterations=50_000, burn_in=2_000, dt=0.02, parametrization=param,
                                                  seed=5, record_curves=False))
            est.append([(tr.theta[:, j].mean(), math.sqrt(tr.theta[:, j].var() / acf_ess(tr.theta[:, j]).ess))
                        for j in range(2)])
        for (m0, se0), (m1, se1) in zip(*est):
            assert abs(m0 - m1) < 3 * math.hypot(se0, se1)


@pytest.mark.slow
class TestCovariateConsistency:
    def test_start_ratio_recovered_when_path_noise_is_small(self):
        # with a nearly deterministic path the start ratio is a plain parametric estimate
        data = simdata.two_cell_dataset(4000, seed=1, sigma=0.01)
        m = models.build_covariate_model(models.CovariateModelSpec.from_dataset(data, ["H"], []), sigma=0.01)
        tr = run_chain(m, data, SamplerConfig(iterations=4000, burn_in=1000, dt=0.01, parametrization="ncp", seed=1,
                                              record_curves=False))
        h = tr.column("start_H")
        assert abs(h.mean() - math.log(2.0)) < 3 * h.std()
        assert h.std() < 0.1
