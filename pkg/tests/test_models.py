import math

import numpy as np
import pytest
from scipy import stats

from soilcarbon.core import (
    CARBON_NOISE_DIM,
    DECAY_RATE,
    OUTGOING,
    LatentTrajectory,
    ModelSpec,
    Pools,
    Site,
    Treatment,
)
from soilcarbon.models import (
    FIVE_POOL_SHARES,
    carbon_fluxes,
    carbon_input,
    emitted_co2,
    initial_carbon,
    initial_crops,
    obs_logdensity,
    step_carbon,
    step_crops,
)
from soilcarbon.simulator import example_theta

from oracles import random_theta

TARLEE_ONE = ModelSpec(Pools.ONE, Site.TARLEE)
THREE = ModelSpec(Pools.THREE, Site.TARLEE)
FIVE = ModelSpec(Pools.FIVE, Site.TARLEE)


class TestCarbonInput:
    PARAMS = dict(c=0.45, r_W=0.5, r_P=1.0, r_S=0.4, p=0.1)

    def test_fallow_zero(self):
        assert carbon_input({"GW": 1.0, "W": 2.0, "P": 3.0}, Treatment.Fallow, self.PARAMS) == 0.0

    def test_cleared_zero(self):
        assert carbon_input({"GW": 1, "W": 2, "GS": 1, "S": 2}, Treatment.Cleared, self.PARAMS) == 0.0

    def test_wheat_for_grain(self):
        v = carbon_input({"GW": 1.0, "W": 2.0, "P": 1.0}, Treatment.WheatForGrain, self.PARAMS)
        assert v == pytest.approx(0.90, abs=1e-14)

    def test_pasture(self):
        v = carbon_input({"GW": 1.0, "W": 1.0, "P": 3.0}, Treatment.Pasture, self.PARAMS)
        assert v == pytest.approx(2.70, abs=1e-14)

    def test_wheat_for_hay(self):
        v = carbon_input({"GW": 1.0, "W": 2.0, "P": 1.0}, Treatment.WheatForHay, self.PARAMS)
        assert v == pytest.approx(0.45 * 0.1 * 2 + 0.45 * 0.5 * 2, abs=1e-14)

    def test_pasture_for_hay(self):
        v = carbon_input({"GW": 1.0, "W": 1.0, "P": 3.0}, Treatment.PastureForHay, self.PARAMS)
        assert v == pytest.approx(0.45 * 0.1 * 3 + 0.45 * 1.0 * 3, abs=1e-14)

    def test_sorghum(self):
        crop = {"GW": 1.0, "W": 2.0, "GS": 1.5, "S": 4.0}
        grain = carbon_input(crop, Treatment.SorghumForGrain, self.PARAMS)
        hay = carbon_input(crop, Treatment.SorghumForHay, self.PARAMS)
        assert grain == pytest.approx(0.45 * 2.5 + 0.45 * 0.4 * 4.0, abs=1e-14)
        assert hay == pytest.approx(0.45 * 0.1 * 4.0 + 0.45 * 0.4 * 4.0, abs=1e-14)

    def test_site_mismatch(self):
        with pytest.raises(ValueError):
            carbon_input({"GW": 1, "W": 2, "P": 1}, Treatment.SorghumForGrain, self.PARAMS)
        with pytest.raises(ValueError):
            carbon_input({"GW": 1, "W": 2, "GS": 1, "S": 1}, Treatment.Pasture, self.PARAMS)

    def test_non_negative_when_grain_exceeds_total(self):
        v = carbon_input({"GW": 3.0, "W": 2.0, "P": 1.0}, Treatment.WheatForGrain, self.PARAMS)
        assert v == pytest.approx(0.45 * 0.5 * 2.0)


class TestStepCarbon:
    def test_identity(self):
        th = example_theta(TARLEE_ONE).replace(K_C=0.0)
        np.testing.assert_array_equal(step_carbon(TARLEE_ONE, [40.0], 0.0, th), [40.0])

    def test_half_life(self):
        th = example_theta(TARLEE_ONE).replace(K_C=math.log(2.0))
        np.testing.assert_allclose(step_carbon(TARLEE_ONE, [40.0], 0.0, th), [20.0], rtol=1e-15)

    def test_one_pool_formula(self):
        th = example_theta(TARLEE_ONE)
        got = step_carbon(TARLEE_ONE, [40.0], 1.5, th, noise=[0.7])
        expect = (40.0 * math.exp(-th["K_C"]) + 1.5) * math.exp(math.sqrt(th["s2_eta"]) * 0.7)
        np.testing.assert_allclose(got, [expect], rtol=1e-14)

    def test_three_pool_example(self):
        th = example_theta(THREE).replace(K_C=0.0665, K_B=0.66, pi_BC=0.2)
        got = step_carbon(THREE, [30.0, 4.0, 1.0], 0.0, th)
        np.testing.assert_allclose(got[0], 30 * math.exp(-0.0665) + (1 - math.exp(-0.66)) * 0.2, rtol=1e-14)
        assert got[1] == 4.0

    def test_three_pool_bio(self):
        th = example_theta(THREE).replace(K_C=0.1, K_B=0.66, pi_CB=0.05, pi_BB=0.3)
        got = step_carbon(THREE, [30.0, 4.0, 1.0], 0.0, th)
        expect = math.exp(-0.66) + 30 * (1 - math.exp(-0.1)) * 0.05 + (1 - math.exp(-0.66)) * 0.3
        np.testing.assert_allclose(got[2], expect, rtol=1e-14)

    def test_five_pool_inputs(self):
        th = dict(random_theta(FIVE, np.random.default_rng(0)))
        for n in OUTGOING[Pools.FIVE]["D"] + OUTGOING[Pools.FIVE]["R"]:
            th[n] = 0.0
        x = np.array([1.0, 10.0, 20.0, 1.0, 4.0])
        got = step_carbon(FIVE, x, 2.0, th)
        np.testing.assert_allclose(got[0], math.exp(-th["K_D"]) + th["P_D"] * 2.0, rtol=1e-14)
        np.testing.assert_allclose(got[1], 10 * math.exp(-th["K_R"]) + (1 - th["P_D"]) * 2.0, rtol=1e-14)
        assert got[4] == 4.0

    def test_pure_decay(self, any_spec):
        rng = np.random.default_rng(3)
        th = dict(random_theta(any_spec, rng))
        for outs in OUTGOING[any_spec.pools].values():
            for n in outs:
                th[n] = 0.0
        x = rng.uniform(1.0, 30.0, len(any_spec.carbon_states))
        got = step_carbon(any_spec, x, 0.0, th)
        for j, name in enumerate(any_spec.carbon_states):
            if name == "IOM":
                assert got[j] == x[j]
            else:
                np.testing.assert_allclose(got[j], x[j] * math.exp(-th[DECAY_RATE[name]]), rtol=1e-14)

    def test_noise_round_trip(self, any_spec):
        rng = np.random.default_rng(4)
        th = example_theta(any_spec)
        x = initial_carbon(any_spec, th)[0]
        z = rng.standard_normal(CARBON_NOISE_DIM[any_spec.pools])
        a = step_carbon(any_spec, x, 1.0, th, noise=z)
        b = step_carbon(any_spec, x, 1.0, th, noise=z.copy())
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_state(self):
        th = example_theta(TARLEE_ONE)
        with pytest.raises(ValueError):
            step_carbon(TARLEE_ONE, [-1.0], 0.0, th)
        with pytest.raises(ValueError):
            step_carbon(TARLEE_ONE, [1.0], -1.0, th)

    def test_transition_moments(self):
        # one-pool transition is LN(log m, s2): check mean and variance over 1e5 draws
        th = example_theta(TARLEE_ONE).replace(s2_eta=0.01)
        rng = np.random.default_rng(5)
        z = rng.standard_normal(100_000)
        m = 40.0 * math.exp(-th["K_C"]) + 1.0
        draws = m * np.exp(0.1 * z)
        one = step_carbon(TARLEE_ONE, [40.0], 1.0, th, noise=[z[0]])
        assert one[0] == pytest.approx(draws[0], rel=1e-14)
        mean, var = m * math.exp(0.005), m * m * math.expm1(0.01) * math.exp(0.01)
        se = math.sqrt(var / z.size)
        assert abs(draws.mean() - mean) < 3 * se


class TestInitialCarbon:
    def test_shares(self, any_spec):
        th = example_theta(any_spec)
        x = initial_carbon(any_spec, th)
        assert x.shape == (3, len(any_spec.carbon_states))
        if "IOM" in any_spec.carbon_states:
            np.testing.assert_array_equal(x[:, any_spec.carbon_states.index("IOM")], th["X_IOM"])
        non_iom = [j for j, n in enumerate(any_spec.carbon_states) if n != "IOM"]
        np.testing.assert_allclose(x[:, non_iom].sum(axis=1),
                                   [th["X_C0_1"], th["X_C0_2"], th["X_C0_3"]], rtol=1e-14)

    def test_five_pool_split(self):
        th = example_theta(FIVE)
        x = initial_carbon(FIVE, th)
        np.testing.assert_allclose(x[0, :4], [th["X_C0_1"] * FIVE_POOL_SHARES[k] for k in "DRHB"])


class TestStepCrops:
    def test_rho_zero(self):
        th = example_theta(TARLEE_ONE).replace(rho_GW=0.0)
        got = step_crops(TARLEE_ONE, [5.0, 9.0, 2.0], th)
        assert got[0] == pytest.approx(math.exp(th["mu_GW"]), rel=1e-14)

    def test_unit_harvest_index(self):
        th = example_theta(TARLEE_ONE).replace(h_W=1.0)
        got = step_crops(TARLEE_ONE, [5.0, 9.0, 2.0], th)
        assert got[1] == pytest.approx(got[0], rel=1e-14)

    def test_pasture_example(self):
        th = example_theta(TARLEE_ONE).replace(mu_P=1.41, rho_P=0.5)
        got = step_crops(TARLEE_ONE, [1.0, 1.0, math.exp(2.0)], th)
        assert got[2] == pytest.approx(math.exp(1.41 + 0.5 * (2.0 - 1.41)), rel=1e-14)

    def test_brigalow_sorghum(self):
        spec = ModelSpec(Pools.ONE, Site.BRIGALOW)
        th = example_theta(spec).replace(rho_GS=0.0, h_S=2.0)
        got = step_crops(spec, {"GW": 1.0, "W": 2.0, "GS": 3.0, "S": 4.0}, th)
        assert got[2] == pytest.approx(math.exp(th["mu_GS"]), rel=1e-14)
        assert got[3] == pytest.approx(2.0 * got[2], rel=1e-14)

    def test_stationary_initial(self):
        th = example_theta(TARLEE_ONE)
        rng = np.random.default_rng(6)
        draws = np.array([initial_crops(TARLEE_ONE, th, rng.standard_normal(3)) for _ in range(20000)])
        logg = np.log(draws[:, 0])
        sd = math.sqrt(th["s2_GW"] / (1 - th["rho_GW"] ** 2))
        assert abs(logg.mean() - th["mu_GW"]) < 4 * sd / math.sqrt(20000)
        assert logg.std() == pytest.approx(sd, rel=0.03)


class TestObsLogdensity:
    def test_empty(self):
        assert obs_logdensity(TARLEE_ONE, {"C": 40.0}, {}, example_theta(TARLEE_ONE)) == 0.0

    def test_one_pool_mode(self):
        v = obs_logdensity(TARLEE_ONE, {"C": 40.0}, {"TOC": 40.0}, example_theta(TARLEE_ONE))
        assert v == pytest.approx(-0.5 * math.log(2 * math.pi * 0.025) - math.log(40.0), abs=1e-12)

    def test_three_pool_toc(self):
        latent = {"C": 30.0, "IOM": 4.0, "B": 1.0}
        v = obs_logdensity(THREE, latent, {"TOC": 37.0}, example_theta(THREE))
        expect = stats.lognorm(s=math.sqrt(0.025), scale=35.0).logpdf(37.0)
        assert v == pytest.approx(expect, abs=1e-12)

    def test_five_pool_kinds(self):
        latent = {"D": 1.0, "R": 10.0, "H": 20.0, "B": 1.0, "IOM": 4.0}
        th = example_theta(FIVE)
        poc = obs_logdensity(FIVE, latent, {"POC": 11.0}, th)
        hum = obs_logdensity(FIVE, latent, {"H": 18.0}, th)
        iom = obs_logdensity(FIVE, latent, {"IOM": 4.5}, th)
        assert poc == pytest.approx(stats.lognorm(s=math.sqrt(0.9), scale=12.0).logpdf(11.0), abs=1e-12)
        assert hum == pytest.approx(stats.lognorm(s=math.sqrt(0.1), scale=20.0).logpdf(18.0), abs=1e-12)
        assert iom == pytest.approx(stats.lognorm(s=math.sqrt(0.01), scale=4.0).logpdf(4.5), abs=1e-12)

    def test_additive(self):
        latent = {"GW": 1.0, "W": 2.0, "P": 3.0, "D": 1.0, "R": 10.0, "H": 20.0, "B": 1.0, "IOM": 4.0}
        obs = {"TOC": 35.0, "POC": 11.0, "H": 19.0, "IOM": 4.2, "GW": 1.1, "W": 2.5, "P": 2.0}
        th = example_theta(FIVE)
        full = obs_logdensity(FIVE, latent, obs, th)
        parts = sum(obs_logdensity(FIVE, latent, {k: v}, th) for k, v in obs.items())
        assert full == pytest.approx(parts, abs=1e-12)

    def test_unused_kind_ignored(self):
        v = obs_logdensity(TARLEE_ONE, {"C": 40.0}, {"POC": 3.0}, example_theta(TARLEE_ONE))
        assert v == 0.0

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            obs_logdensity(TARLEE_ONE, {"C": 40.0}, {"TOC": 0.0}, example_theta(TARLEE_ONE))


class TestEmission:
    def test_one_pool_all_emitted(self):
        th = example_theta(TARLEE_ONE).replace(K_C=math.log(2.0))
        vals = np.ones((3, 2, 4))
        vals[:, 0, 3] = 40.0
        out = emitted_co2(LatentTrajectory(TARLEE_ONE, 1978, vals), TARLEE_ONE, th)
        np.testing.assert_allclose(out[:, 1], 20.0, rtol=1e-15)
        np.testing.assert_array_equal(out[:, 0], 0.0)

    def test_three_pool_full_transfer(self):
        th = example_theta(THREE).replace(pi_CB=1.0)
        fl = carbon_fluxes(THREE, [30.0, 4.0, 1.0], th)
        assert fl.emitted["C"] == 0.0

    def test_three_pool_bio_remainder(self):
        th = example_theta(THREE).replace(K_B=0.66, pi_BC=0.2, pi_BB=0.3)
        fl = carbon_fluxes(THREE, [30.0, 4.0, 1.0], th)
        assert fl.emitted["B"] == pytest.approx((1 - math.exp(-0.66)) * 0.5, rel=1e-14)

    def test_emitted_matches_fluxes(self, any_spec):
        th = example_theta(any_spec)
        rng = np.random.default_rng(8)
        vals = rng.uniform(1.0, 20.0, size=(3, 3, len(any_spec.state_names)))
        traj = LatentTrajectory(any_spec, any_spec.t0, vals)
        out = emitted_co2(traj, any_spec, th)
        ng = len(any_spec.crop_states)
        for f in range(3):
            fl = carbon_fluxes(any_spec, vals[f, 0, ng:], th)
            assert out[f, 1] == pytest.approx(sum(fl.emitted.values()), rel=1e-12)

    @pytest.mark.parametrize("pools", list(Pools))
    def test_mass_balance(self, pools):
        spec = ModelSpec(pools, Site.TARLEE)
        rng = np.random.default_rng(int(pools))
        for _ in range(200):
            th = random_theta(spec, rng)
            x = rng.uniform(0.01, 100.0, len(spec.carbon_states))
            fl = carbon_fluxes(spec, x, th)
            for pool, d in fl.decayed.items():
                moved = sum(v for (src, _), v in fl.transfers.items() if src == pool)
                assert d == pytest.approx(moved + fl.emitted[pool], rel=1e-12)
