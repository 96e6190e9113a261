import math

import numpy as np
import pytest

from soilcarbon.core import ChainOutput, ModelSpec, Pools, Site, sampled_parameters
from soilcarbon.diagnostics import gelman_rubin, percentile_bands, soc_change, statistic_samples
from soilcarbon.simulator import example_theta

ONE = ModelSpec(Pools.ONE, Site.TARLEE)


def brute_rhat(x):
    """Textbook sqrt(V / W) with V = (n-1)/n W + B/n (no df correction)."""
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    return math.sqrt(((n - 1) / n * W + (1 + 1 / m) * B / n) / W)


class TestGelmanRubin:
    def test_identical_chains(self):
        x = np.random.default_rng(0).normal(size=1000)
        r = gelman_rubin(np.stack([x, x]))
        # zero between-chain variance leaves only the (n-1)/n within-chain factor
        assert r.rhat[0] == pytest.approx(1.0, abs=1e-3)
        assert r.rhat[0] <= 1.0

    def test_separated_chains(self):
        rng = np.random.default_rng(1)
        r = gelman_rubin(np.stack([rng.normal(0, 1, 500), rng.normal(10, 1, 500)]))
        assert r.rhat[0] > 1.2
        assert r.rhat[0] > 5

    def test_mixed_chains_near_one(self):
        x = np.random.default_rng(2).normal(size=(4, 10_000))
        r = gelman_rubin(x)
        assert r.rhat[0] < 1.05
        assert r.upper[0] >= r.rhat[0]

    def test_close_to_textbook_value(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2000)) + np.array([[0.0], [0.1], [0.2], [0.0]])
        assert gelman_rubin(x).rhat[0] == pytest.approx(brute_rhat(x), rel=2e-3)

    def test_affine_invariant(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 300)) + rng.normal(size=(3, 1))
        a = gelman_rubin(x)
        b = gelman_rubin(5.0 - 3.0 * x)
        np.testing.assert_allclose(a.rhat, b.rhat, rtol=1e-10)
        np.testing.assert_allclose(a.upper, b.upper, rtol=1e-10)

    def test_constant_chains_infinite(self):
        r = gelman_rubin(np.ones((2, 20)))
        assert math.isinf(r.rhat[0])
        assert not r.converged()

    def test_multi_parameter_names(self):
        x = np.random.default_rng(5).normal(size=(2, 50, 3))
        r = gelman_rubin(x, names=["a", "b", "c"])
        assert r.names == ("a", "b", "c")
        assert set(r.as_dict()) == {"a", "b", "c"}

    def test_chain_output_input(self):
        rng = np.random.default_rng(6)
        chains = [ChainOutput(seed=i, param_names=("K_C",), theta=rng.normal(size=(40, 1)),
                              trajectories=np.empty((40, 0, 0, 0)), loglik=np.zeros(40),
                              acceptance_rate=0.2, iterations=100, burn_in=60, stride=1)
                  for i in range(2)]
        assert gelman_rubin(chains).names == ("K_C",)

    def test_rejects(self):
        with pytest.raises(ValueError):
            gelman_rubin(np.zeros((1, 100)))
        with pytest.raises(ValueError):
            gelman_rubin(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            gelman_rubin(np.zeros((2, 20, 2)), names=["a"])


def _samples(S=30, T=5, seed=0):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(1.0, 50.0, size=(S, 3, T, len(ONE.state_names)))
    return vals


class TestSocChange:
    def test_single_sample(self):
        arr = _samples(S=1)
        res = soc_change(arr, spec=ONE, baseline=1978, target=1980, t0=1978)
        c = ONE.state_names.index("C")
        diff = arr[0, :, 2, c] - arr[0, :, 0, c]
        np.testing.assert_allclose(res.mean, diff)
        np.testing.assert_allclose(res.quantiles, np.repeat(diff[:, None], 5, axis=1))

    def test_mean_of_differences(self):
        arr = _samples(S=40)
        res = soc_change(arr, spec=ONE, t0=1978)
        c = ONE.state_names.index("C")
        np.testing.assert_allclose(res.mean, (arr[:, :, -1, c] - arr[:, :, 0, c]).mean(axis=0))
        assert (res.baseline, res.target) == (1978, 1982)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            soc_change(_samples(), spec=ONE, baseline=1970, t0=1978)


class TestPercentileBands:
    def test_interpolation_rule(self):
        values = np.arange(1.0, 101.0).reshape(100, 1, 1)
        bands = percentile_bands(values)
        assert bands[0, 0, 0] == pytest.approx(3.475, abs=1e-12)
        assert bands[0, 0, 2] == pytest.approx(50.5, abs=1e-12)

    def test_single_sample(self):
        arr = _samples(S=1)
        bands = percentile_bands(arr, "total_soc", spec=ONE)
        c = ONE.state_names.index("C")
        np.testing.assert_array_equal(bands, np.repeat(arr[0, :, :, c][..., None], 5, axis=-1))

    def test_monotone_in_quantile(self):
        bands = percentile_bands(_samples(S=200), "total_soc", spec=ONE)
        assert np.all(np.diff(bands, axis=-1) >= 0)

    def test_soc_change_starts_at_zero(self):
        bands = percentile_bands(_samples(), "soc_change", spec=ONE)
        np.testing.assert_array_equal(bands[:, 0, :], 0.0)

    def test_emitted_needs_chains(self):
        with pytest.raises(ValueError):
            statistic_samples(_samples(), "emitted_co2", spec=ONE)

    def test_emitted_from_chains(self):
        th = example_theta(ONE)
        names = sampled_parameters(ONE)
        arr = _samples(S=4)
        chain = ChainOutput(seed=0, param_names=names, theta=np.tile([th[n] for n in names], (4, 1)),
                            trajectories=arr, loglik=np.zeros(4), acceptance_rate=0.2,
                            iterations=10, burn_in=5, stride=1, spec=ONE, t0=1978)
        bands = percentile_bands([chain], "emitted_co2")
        assert bands.shape == (3, 5, 5)
        np.testing.assert_array_equal(bands[:, 0, :], 0.0)
        assert np.all(bands[:, 1:, :] > 0)

    def test_unknown_statistic(self):
        with pytest.raises(ValueError):
            statistic_samples(_samples(), "respiration", spec=ONE)

    def test_bad_quantiles(self):
        with pytest.raises(ValueError):
            percentile_bands(_samples(), quantiles=(1.5,), spec=ONE)
