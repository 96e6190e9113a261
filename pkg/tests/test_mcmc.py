import math

import numpy as np
import pytest
from scipy import stats

from soilcarbon.mcmc import (
    ChainConfig,
    CpmState,
    InitializationError,
    SoilCarbonContext,
    chain_seeds,
    cpm_step,
    initial_state,
    run_chain,
    run_chains,
    worker_count,
)
from soilcarbon.priors import Prior, PriorSet, Proposal, ProposalSet
from soilcarbon.simulator import example_theta
from soilcarbon.toy import NormalMeanContext

Y = np.random.default_rng(0).normal(1.0, 1.0, 10)


class NeverFinite(NormalMeanContext):
    def loglik(self, theta, bank):
        return -math.inf


class TestChainConfig:
    def test_kept_count(self):
        assert ChainConfig(iterations=20000, burn_in=8000, stride=30).n_kept == 400
        assert ChainConfig.full().n_kept == 4000

    def test_presets(self):
        desk = ChainConfig.desk(seed=3)
        assert (desk.iterations, desk.burn_in, desk.stride, desk.n_particles, desk.seed) == (20000, 8000, 30, 200, 3)
        assert ChainConfig.full().tau == 0.99

    @pytest.mark.parametrize("kw", [dict(iterations=10, burn_in=10), dict(stride=0), dict(tau=1.5),
                                    dict(iterations=10, burn_in=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChainConfig(**kw)

    def test_digest_changes(self):
        assert ChainConfig(seed=1).digest() != ChainConfig(seed=2).digest()
        assert ChainConfig(seed=1).digest() == ChainConfig(seed=1).digest()


class TestCpmStep:
    def test_constant_chain_when_nothing_moves(self):
        ctx = NormalMeanContext(Y, noise_sd=0.5, n_noise=3)
        ctx.proposals = ctx.proposals.scaled(0.0)
        rng = np.random.default_rng(1)
        state = initial_state(ctx, rng)
        for _ in range(50):
            new, ok = cpm_step(state, 1.0, ctx, rng)
            assert ok
            assert new.loglik == state.loglik
            np.testing.assert_array_equal(new.theta, state.theta)
            state = new

    def test_outside_support_rejected(self):
        ctx = NormalMeanContext(Y)
        ctx.priors = PriorSet({"mu": Prior("uniform", 0.0, 1.0)})
        state = CpmState(np.array([0.999]), ctx.new_bank(np.random.default_rng(0)),
                         ctx.loglik([0.999], None), 0.0)
        ctx.proposals = ProposalSet({"mu": Proposal(100.0)})
        rng = np.random.default_rng(2)
        rejected = 0
        for _ in range(100):
            new, ok = cpm_step(state, 0.5, ctx, rng)
            rejected += new is state
        assert rejected >= 95

    def test_fixed_random_order(self):
        ctx = NormalMeanContext(Y)
        state = initial_state(ctx, np.random.default_rng(3))
        a = cpm_step(state, 0.9, ctx, np.random.default_rng(4))
        b = cpm_step(state, 0.9, ctx, np.random.default_rng(4))
        np.testing.assert_array_equal(a[0].theta, b[0].theta)
        assert a[1] == b[1]

    def test_rejects_bad_tau(self):
        ctx = NormalMeanContext(Y)
        state = initial_state(ctx, np.random.default_rng(0))
        with pytest.raises(ValueError):
            cpm_step(state, -0.1, ctx, np.random.default_rng(0))


class TestRunChain:
    def test_shapes_and_rate(self):
        ctx = NormalMeanContext(Y)
        out = run_chain(ctx, ChainConfig(iterations=1000, burn_in=100, stride=3, seed=1))
        assert out.theta.shape == (300, 1)
        assert out.loglik.shape == (300,)
        assert 0.0 < out.acceptance_rate < 1.0
        assert out.param_names == ("mu",)

    def test_deterministic(self):
        ctx = NormalMeanContext(Y, noise_sd=0.3, n_noise=4)
        cfg = ChainConfig(iterations=500, burn_in=100, stride=2, seed=7)
        a, b = run_chain(ctx, cfg), run_chain(ctx, cfg)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.loglik, b.loglik)

    def test_exact_posterior_with_noisy_likelihood(self):
        ctx = NormalMeanContext(Y, noise_sd=0.5, n_noise=4, step=0.6)
        cfg = ChainConfig(iterations=101_000, burn_in=1000, stride=1, tau=0.9, seed=11)
        out = run_chain(ctx, cfg)
        m, v = ctx.posterior()
        ks = stats.kstest(out.theta[:, 0], stats.norm(m, math.sqrt(v)).cdf).statistic
        assert ks < 0.05

    def test_initialization_error(self):
        with pytest.raises(InitializationError):
            run_chain(NeverFinite(Y), ChainConfig(iterations=10, burn_in=0, init_retries=5))

    def test_theta0_respected(self):
        ctx = NormalMeanContext(Y)
        ctx.proposals = ctx.proposals.scaled(0.0)
        out = run_chain(ctx, ChainConfig(iterations=20, burn_in=0, stride=1, tau=1.0), theta0=[0.25])
        np.testing.assert_array_equal(out.theta[:, 0], 0.25)


class TestRunChains:
    def test_seeds_independent_and_stable(self):
        s = chain_seeds(42, 4)
        assert len(set(s)) == 4
        assert s == chain_seeds(42, 4)
        assert s[:2] == chain_seeds(42, 2)

    def test_chains_differ_and_reproduce(self):
        ctx = NormalMeanContext(Y)
        cfg = ChainConfig(iterations=300, burn_in=100, stride=5, seed=5)
        a = run_chains(ctx, cfg, n_chains=3)
        b = run_chains(ctx, cfg, n_chains=3)
        assert len(a) == 3
        assert not np.array_equal(a[0].theta, a[1].theta)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.theta, y.theta)

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("SOILCARBON_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("SOILCARBON_WORKERS", "x")
        with pytest.raises(ValueError):
            worker_count()


class TestSoilCarbonContext:
    def test_short_chain(self, one_pool, one_pool_data):
        data, _ = one_pool_data
        ctx = SoilCarbonContext(one_pool, data, n_particles=30)
        out = run_chain(ctx, ChainConfig(iterations=40, burn_in=20, stride=5, n_particles=30, seed=0))
        assert out.theta.shape == (4, len(ctx.names))
        assert out.trajectories.shape == (4, 3, data.horizon, len(one_pool.state_names))
        assert np.all(out.trajectories > 0)
        assert out.spec == one_pool

    def test_truncated_context(self, one_pool, one_pool_data):
        data, _ = one_pool_data
        ctx = SoilCarbonContext(one_pool, data, n_particles=30)
        assert ctx.truncated(10).horizon == 10

    def test_loglik_increment_consistency(self, one_pool, one_pool_data):
        data, truth = one_pool_data
        ctx = SoilCarbonContext(one_pool, data, n_particles=50)
        th = example_theta(one_pool)
        theta = np.array([th[n] for n in ctx.names])
        bank = ctx.new_bank(np.random.default_rng(0))
        total = sum(ctx.increment(theta, bank, t) for t in range(ctx.horizon))
        assert total == pytest.approx(ctx.loglik(theta, bank), rel=1e-10)

    def test_invalid(self, one_pool, one_pool_data):
        with pytest.raises(ValueError):
            SoilCarbonContext(one_pool, one_pool_data[0], n_particles=0)
        with pytest.raises(ValueError):
            SoilCarbonContext(one_pool, one_pool_data[0], coupling="smoothed")
