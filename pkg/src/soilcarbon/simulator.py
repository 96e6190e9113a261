"""Forward simulation of synthetic soil-carbon datasets with ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    CARBON_NOISE_DIM,
    OBS_INDEX,
    PARAM_INDEX,
    Dataset,
    FieldSeries,
    LatentTrajectory,
    ManagementSchedule,
    ModelSpec,
    ParameterVector,
    Pools,
    Site,
    Treatment,
    default_schedule,
)
from .models import (
    bio_ok_kernel,
    carbon_step_kernel,
    crop_init_kernel,
    crop_step_kernel,
    initial_carbon,
    input_kernel,
)

_CROP_OF = {"GW": "wheat", "W": "wheat", "P": "pasture", "GS": "sorghum", "S": "sorghum"}
_GROWN = {
    "wheat": {Treatment.WheatForGrain, Treatment.WheatForHay},
    "pasture": {Treatment.Pasture, Treatment.PastureForHay},
    "sorghum": {Treatment.SorghumForGrain, Treatment.SorghumForHay},
}
_OBS_VAR = {k: f"s2_eps_{k}" for k in OBS_INDEX}


class ConstraintError(RuntimeError):
    """Simulation could not satisfy the three-pool BIO cap."""


def sparse_years(t0: int, last_year: int) -> tuple[int, ...]:
    """Years 1, 2, 3 of the record, then every third year (1-based offsets)."""
    n = last_year - t0 + 1
    idx = [i for i in range(1, n + 1) if i <= 3 or i % 3 == 0]
    return tuple(t0 + i - 1 for i in idx)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to draw one synthetic dataset.

    ``missingness`` maps an observation kind to the years it is observed.
    Kinds left out default to the sparse pattern (:func:`sparse_years`) for
    carbon kinds and to every year the crop is grown for crop kinds.  Pass
    ``dense=True`` to observe every kind in every year instead.
    """

    spec: ModelSpec
    theta: ParameterVector
    schedule: ManagementSchedule | None = None
    horizon: int = 20
    seed: int = 0
    missingness: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    dense: bool = False
    max_retries: int = 1000

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2 years")
        if not isinstance(self.theta, ParameterVector):
            object.__setattr__(self, "theta", ParameterVector(self.theta))
        self.theta.validate(self.spec)
        if self.schedule is None:
            object.__setattr__(self, "schedule", default_schedule(self.spec.site, self.last_year))
        for kind, years in self.missingness.items():
            if kind not in OBS_INDEX:
                raise ValueError(f"unknown observation kind {kind!r}")
            for y in years:
                if not self.spec.t0 <= y <= self.last_year:
                    raise ValueError(f"{kind} observation year {y} outside the horizon")

    @property
    def last_year(self) -> int:
        return self.spec.t0 + self.horizon - 1

    def observation_years(self, kind: str, field_schedule: Mapping[int, Treatment]) -> set[int]:
        years = range(self.spec.t0, self.last_year + 1)
        if kind in self.missingness:
            return set(self.missingness[kind])
        if self.dense:
            return set(years)
        if kind in _CROP_OF:
            grown = _GROWN[_CROP_OF[kind]]
            return {y for y in years if field_schedule.get(y, Treatment.Fallow) in grown}
        return set(sparse_years(self.spec.t0, self.last_year))


def simulate(config: SimConfig) -> tuple[Dataset, LatentTrajectory]:
    """Forward-sample latent states and observations.

    Returns the dataset (restricted to the observation kinds the model
    uses) and the ground-truth latent trajectory on the natural scale.
    """
    spec, theta = config.spec, config.theta
    th = theta.as_array()
    rng = np.random.default_rng(config.seed)
    T = config.horizon
    years = np.arange(spec.t0, spec.t0 + T)
    sched = config.schedule
    codes = sched.codes(list(years))
    ng, nc = len(spec.crop_states), len(spec.carbon_states)
    nz = CARBON_NOISE_DIM[spec.pools]
    pools, site = int(spec.pools), int(spec.site)

    values = np.empty((spec.fields, T, ng + nc))
    xc0 = initial_carbon(spec, theta)
    g = np.empty(ng)
    c = np.empty(nc)
    for f in range(spec.fields):
        crop_init_kernel(site, rng.standard_normal(ng), th, g)
        c[:] = xc0[f]
        values[f, 0, :ng] = np.exp(g)
        values[f, 0, ng:] = c
        for t in range(1, T):
            g_new = np.empty(ng)
            crop_step_kernel(site, g, rng.standard_normal(ng), th, g_new)
            g = g_new
            ic = input_kernel(site, codes[f, t], np.exp(g), th)
            c_new = np.empty(nc)
            for _ in range(config.max_retries):
                carbon_step_kernel(pools, c, ic, rng.standard_normal(nz), th, c_new)
                if spec.pools != Pools.THREE or bio_ok_kernel(c_new):
                    break
            else:
                raise ConstraintError(
                    f"field {f + 1}, year {years[t]}: BIO cap unmet after {config.max_retries} draws")
            c = c_new
            values[f, t, :ng] = np.exp(g)
            values[f, t, ng:] = c

    truth = LatentTrajectory(spec, spec.t0, values)
    fields = []
    for f in range(spec.fields):
        fsched = dict(sched[f])
        obs: dict[int, dict[str, float]] = {}
        for kind in spec.obs_kinds:
            var = th[PARAM_INDEX[_OBS_VAR[kind]]]
            for y in sorted(config.observation_years(kind, fsched)):
                t = y - spec.t0
                mean = _latent_obs_mean(spec, kind, values[f, t])
                obs.setdefault(y, {})[kind] = float(math.exp(math.log(mean) + math.sqrt(var) * rng.standard_normal()))
        fields.append(FieldSeries(obs, {y: fsched.get(y, Treatment.Fallow) for y in years}))
    return Dataset(spec.site, tuple(fields), spec.t0, int(years[-1])), truth


def _latent_obs_mean(spec: ModelSpec, kind: str, row: np.ndarray) -> float:
    names = spec.state_names
    if kind in spec.crop_states:
        return float(row[names.index(kind)])
    ng = len(spec.crop_states)
    if kind == "TOC":
        return float(row[ng:].sum())
    if kind == "IOM":
        return float(row[names.index("IOM")])
    if kind == "H":
        return float(row[names.index("H")])
    if kind == "POC":
        return float(row[names.index("D")] + row[names.index("R")] + row[names.index("B")])
    raise ValueError(f"kind {kind} not produced by {spec}")


def example_theta(spec: ModelSpec) -> ParameterVector:
    """A plausible parameter vector near the prior centres (for demos and tests)."""
    base = dict(
        K_C=math.exp(-2.71), K_D=math.exp(-2.71), K_R=math.exp(-2.5), K_H=0.02, K_B=0.66,
        pi_CB=0.3, pi_BC=0.3, pi_BB=0.2,
        pi_DH=0.3, pi_RH=0.3, pi_HH=0.3, pi_BH=0.3, pi_DB=0.1, pi_RB=0.1, pi_HB=0.1,
        P_D=0.6, c=0.45, r_W=0.5, r_S=0.5, r_P=1.0, p=0.1, h_W=2.3, h_S=1.6,
        mu_GW=0.42, mu_GS=0.42, mu_P=1.41, rho_GW=0.3, rho_GS=0.3, rho_P=0.3,
        s2_eta=0.001, s2_etaC=0.001, s2_etaB=0.01, s2_etaD=0.01, s2_etaR=0.005, s2_etaH=0.001,
        s2_GW=0.1, s2_GS=0.1, s2_W=0.01, s2_S=0.01, s2_P=0.1,
        X_C0_1=40.0, X_C0_2=38.0, X_C0_3=45.0, X_IOM=4.0,
    )
    if spec.site == Site.BRIGALOW:
        base.update(X_C0_1=60.0, X_C0_2=55.0, X_C0_3=65.0, X_IOM=12.0, K_R=0.15)
    if spec.pools == Pools.THREE:
        # keep the BIO pool comfortably below its cap
        base.update(pi_CB=0.02, K_B=0.66, s2_etaB=0.001)
    return ParameterVector(base)
