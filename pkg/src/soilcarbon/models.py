"""Process and observation models for the four soil-carbon pool structures.

The arithmetic lives in small ``numba`` kernels operating on the full
parameter array (indexed by :data:`soilcarbon.core.PARAM_INDEX`).  The same
kernels back the public functions below and the particle filter, so there is
exactly one implementation of every transition.

Crop states are handled on the log scale inside the kernels; the public
functions take and return natural-scale masses (t/ha).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from typing import NamedTuple

import numpy as np
from numba import njit

from .core import (
    CARBON_NOISE_DIM,
    DECAY_RATE,
    OBS_INDEX,
    OBS_KINDS,
    OUTGOING,
    PARAM_INDEX,
    PARAM_NAMES,
    LatentTrajectory,
    ModelSpec,
    ParameterVector,
    Pools,
    Site,
    Treatment,
)

# Full-layout parameter indices, frozen as compile-time constants by numba.
_K_C = PARAM_INDEX["K_C"]
_K_D = PARAM_INDEX["K_D"]
_K_R = PARAM_INDEX["K_R"]
_K_H = PARAM_INDEX["K_H"]
_K_B = PARAM_INDEX["K_B"]
_PI_CB = PARAM_INDEX["pi_CB"]
_PI_BC = PARAM_INDEX["pi_BC"]
_PI_BB = PARAM_INDEX["pi_BB"]
_PI_DH = PARAM_INDEX["pi_DH"]
_PI_RH = PARAM_INDEX["pi_RH"]
_PI_HH = PARAM_INDEX["pi_HH"]
_PI_BH = PARAM_INDEX["pi_BH"]
_PI_DB = PARAM_INDEX["pi_DB"]
_PI_RB = PARAM_INDEX["pi_RB"]
_PI_HB = PARAM_INDEX["pi_HB"]
_P_D = PARAM_INDEX["P_D"]
_C = PARAM_INDEX["c"]
_R_W = PARAM_INDEX["r_W"]
_R_S = PARAM_INDEX["r_S"]
_R_P = PARAM_INDEX["r_P"]
_P = PARAM_INDEX["p"]
_H_W = PARAM_INDEX["h_W"]
_H_S = PARAM_INDEX["h_S"]
_MU_GW = PARAM_INDEX["mu_GW"]
_MU_GS = PARAM_INDEX["mu_GS"]
_MU_P = PARAM_INDEX["mu_P"]
_RHO_GW = PARAM_INDEX["rho_GW"]
_RHO_GS = PARAM_INDEX["rho_GS"]
_RHO_P = PARAM_INDEX["rho_P"]
_S2_ETA = PARAM_INDEX["s2_eta"]
_S2_ETAC = PARAM_INDEX["s2_etaC"]
_S2_ETAB = PARAM_INDEX["s2_etaB"]
_S2_ETAD = PARAM_INDEX["s2_etaD"]
_S2_ETAR = PARAM_INDEX["s2_etaR"]
_S2_ETAH = PARAM_INDEX["s2_etaH"]
_S2_GW = PARAM_INDEX["s2_GW"]
_S2_GS = PARAM_INDEX["s2_GS"]
_S2_W = PARAM_INDEX["s2_W"]
_S2_S = PARAM_INDEX["s2_S"]
_S2_P = PARAM_INDEX["s2_P"]
_E_TOC = PARAM_INDEX["s2_eps_TOC"]
_E_POC = PARAM_INDEX["s2_eps_POC"]
_E_GW = PARAM_INDEX["s2_eps_GW"]
_E_GS = PARAM_INDEX["s2_eps_GS"]
_E_W = PARAM_INDEX["s2_eps_W"]
_E_S = PARAM_INDEX["s2_eps_S"]
_E_P = PARAM_INDEX["s2_eps_P"]
_E_IOM = PARAM_INDEX["s2_eps_IOM"]
_E_H = PARAM_INDEX["s2_eps_H"]
_X_C0 = PARAM_INDEX["X_C0_1"]
_X_IOM = PARAM_INDEX["X_IOM"]

_O_TOC = OBS_INDEX["TOC"]
_O_IOM = OBS_INDEX["IOM"]
_O_H = OBS_INDEX["H"]
_O_POC = OBS_INDEX["POC"]

_WHEAT_GRAIN = int(Treatment.WheatForGrain)
_WHEAT_HAY = int(Treatment.WheatForHay)
_PASTURE = int(Treatment.Pasture)
_PASTURE_HAY = int(Treatment.PastureForHay)
_SORGHUM_GRAIN = int(Treatment.SorghumForGrain)
_SORGHUM_HAY = int(Treatment.SorghumForHay)

_TARLEE = int(Site.TARLEE)
_LOG_2PI = math.log(2.0 * math.pi)

# Split of the initial decomposable carbon X_C(t0) between pools.
THREE_POOL_BIO_SHARE = 0.02
FIVE_POOL_SHARES = {"D": 0.01, "R": 0.12, "H": 0.85, "B": 0.02}


# ---------------------------------------------------------------------------
# kernels
#
# The ``*_row`` kernels address particle ``i`` of a 2-D state array directly
# (``x[i, j]``) so the particle filter never materialises per-particle views.
# The 1-D kernels are thin wrappers used by the public functions.
# ---------------------------------------------------------------------------

_JIT = dict(cache=True, error_model="numpy")
_JIT_INLINE = dict(cache=True, error_model="numpy", inline="always")


@njit(**_JIT_INLINE)
def lognormal_logpdf(y, mean_log, var):
    z = math.log(y) - mean_log
    return -0.5 * (_LOG_2PI + math.log(var)) - math.log(y) - 0.5 * z * z / var


@njit(**_JIT_INLINE)
def input_row(site, treat, g, i, th):
    """Carbon input from the log crop masses ``g[i]`` (site-specific layout)."""
    c = th[_C]
    if treat == _WHEAT_GRAIN or treat == _WHEAT_HAY:
        w = math.exp(g[i, 1])
        if treat == _WHEAT_GRAIN:
            above = c * max(w - math.exp(g[i, 0]), 0.0)
        else:
            above = c * th[_P] * w
        return above + c * th[_R_W] * w
    if site == _TARLEE:
        if treat == _PASTURE or treat == _PASTURE_HAY:
            pa = math.exp(g[i, 2])
            above = c * pa if treat == _PASTURE else c * th[_P] * pa
            return above + c * th[_R_P] * pa
    elif treat == _SORGHUM_GRAIN or treat == _SORGHUM_HAY:
        s = math.exp(g[i, 3])
        if treat == _SORGHUM_GRAIN:
            above = c * max(s - math.exp(g[i, 2]), 0.0)
        else:
            above = c * th[_P] * s
        return above + c * th[_R_S] * s
    return 0.0


@njit(**_JIT)
def carbon_coefs(pools, th):
    """Per-call constants of the carbon transition: decay factors and noise sds."""
    out = np.zeros(8)
    if pools == 1 or pools == 2:
        out[0] = math.exp(-th[_K_C])
        out[4] = math.sqrt(th[_S2_ETA])
    elif pools == 3:
        out[0] = math.exp(-th[_K_C])
        out[1] = math.exp(-th[_K_B])
        out[4] = math.sqrt(th[_S2_ETAC])
        out[5] = math.sqrt(th[_S2_ETAB])
    else:
        out[0] = math.exp(-th[_K_D])
        out[1] = math.exp(-th[_K_R])
        out[2] = math.exp(-th[_K_H])
        out[3] = math.exp(-th[_K_B])
        out[4] = math.sqrt(th[_S2_ETAD])
        out[5] = math.sqrt(th[_S2_ETAR])
        out[6] = math.sqrt(th[_S2_ETAH])
        out[7] = math.sqrt(th[_S2_ETAB])
    return out


@njit(**_JIT_INLINE)
def carbon_step_row(pools, x, i, ic, z, zi, th, co, out, oi):
    """Carbon transition of ``x[i]`` into ``out[oi]`` driven by normals ``z[zi, :]``.

    ``co`` is ``carbon_coefs(pools, th)``.  Each stochastic pool is log-normal
    around its deterministic mass balance: ``mean * exp(sd * z)``.
    """
    if pools == 1 or pools == 2:
        out[oi, 0] = (x[i, 0] * co[0] + ic) * math.exp(co[4] * z[zi, 0])
        if pools == 2:
            out[oi, 1] = x[i, 1]
    elif pools == 3:
        xc, xb = x[i, 0], x[i, 2]
        dc, db = xc - xc * co[0], xb - xb * co[1]
        mc = xc * co[0] + ic + db * th[_PI_BC]
        mb = xb * co[1] + dc * th[_PI_CB] + db * th[_PI_BB]
        out[oi, 0] = mc * math.exp(co[4] * z[zi, 0])
        out[oi, 1] = x[i, 1]
        out[oi, 2] = mb * math.exp(co[5] * z[zi, 1])
    else:
        xd, xr, xh, xb = x[i, 0], x[i, 1], x[i, 2], x[i, 3]
        dd, dr = xd - xd * co[0], xr - xr * co[1]
        dh, db = xh - xh * co[2], xb - xb * co[3]
        md = xd * co[0] + th[_P_D] * ic
        mr = xr * co[1] + (1.0 - th[_P_D]) * ic
        mh = xh * co[2] + dd * th[_PI_DH] + dr * th[_PI_RH] + dh * th[_PI_HH] + db * th[_PI_BH]
        mb = xb * co[3] + dd * th[_PI_DB] + dr * th[_PI_RB] + dh * th[_PI_HB] + db * th[_PI_BB]
        out[oi, 0] = md * math.exp(co[4] * z[zi, 0])
        out[oi, 1] = mr * math.exp(co[5] * z[zi, 1])
        out[oi, 2] = mh * math.exp(co[6] * z[zi, 2])
        out[oi, 3] = mb * math.exp(co[7] * z[zi, 3])
        out[oi, 4] = x[i, 4]


@njit(**_JIT_INLINE)
def crop_step_row(site, g, i, z, zi, zo, th, out, oi):
    """Log-scale AR(1) crop transition of ``g[i]`` with normals ``z[zi, zo:]``."""
    mu, rho = th[_MU_GW], th[_RHO_GW]
    gw = mu + rho * (g[i, 0] - mu) + math.sqrt(th[_S2_GW]) * z[zi, zo]
    out[oi, 0] = gw
    out[oi, 1] = math.log(th[_H_W]) + gw + math.sqrt(th[_S2_W]) * z[zi, zo + 1]
    if site == _TARLEE:
        mu, rho = th[_MU_P], th[_RHO_P]
        out[oi, 2] = mu + rho * (g[i, 2] - mu) + math.sqrt(th[_S2_P]) * z[zi, zo + 2]
    else:
        mu, rho = th[_MU_GS], th[_RHO_GS]
        gs = mu + rho * (g[i, 2] - mu) + math.sqrt(th[_S2_GS]) * z[zi, zo + 2]
        out[oi, 2] = gs
        out[oi, 3] = math.log(th[_H_S]) + gs + math.sqrt(th[_S2_S]) * z[zi, zo + 3]


@njit(**_JIT_INLINE)
def crop_init_row(site, z, zi, zo, th, out, oi):
    """Log crop states from the stationary law of the AR(1) processes."""
    mu, rho = th[_MU_GW], th[_RHO_GW]
    gw = mu + math.sqrt(th[_S2_GW] / (1.0 - rho * rho)) * z[zi, zo]
    out[oi, 0] = gw
    out[oi, 1] = math.log(th[_H_W]) + gw + math.sqrt(th[_S2_W]) * z[zi, zo + 1]
    if site == _TARLEE:
        mu, rho = th[_MU_P], th[_RHO_P]
        out[oi, 2] = mu + math.sqrt(th[_S2_P] / (1.0 - rho * rho)) * z[zi, zo + 2]
    else:
        mu, rho = th[_MU_GS], th[_RHO_GS]
        gs = mu + math.sqrt(th[_S2_GS] / (1.0 - rho * rho)) * z[zi, zo + 2]
        out[oi, 2] = gs
        out[oi, 3] = math.log(th[_H_S]) + gs + math.sqrt(th[_S2_S]) * z[zi, zo + 3]


@njit(**_JIT_INLINE)
def toc_row(x, i):
    s = 0.0
    for j in range(x.shape[1]):
        s += x[i, j]
    return s


@njit(**_JIT_INLINE)
def bio_ok_row(x, i):
    """Three-pool cap: BIO at most 5% of total carbon."""
    return x[i, 2] <= 0.05 * (x[i, 0] + x[i, 1] + x[i, 2])


@njit(**_JIT)
def carbon_obs_prep(pools, y, present, th, slots, ly, ivar):
    """Precompute the carbon observations of one time.

    Fills ``slots`` (which latent summary each observation scores: 0 TOC,
    1 IOM, 2 H, 3 POC), log observations ``ly`` and inverse variances; returns
    ``(count, constant)`` where the constant collects the parts of the
    log-density that do not depend on the latent state.
    """
    n = 0
    const = 0.0
    for slot in range(4):
        if slot == 0:
            o, v = _O_TOC, th[_E_TOC]
        elif slot == 1:
            if pools < 2:
                continue
            o, v = _O_IOM, th[_E_IOM]
        elif slot == 2:
            if pools != 5:
                continue
            o, v = _O_H, th[_E_H]
        else:
            if pools != 5:
                continue
            o, v = _O_POC, th[_E_POC]
        if not present[o]:
            continue
        slots[n] = slot
        ly[n] = math.log(y[o])
        ivar[n] = 1.0 / v
        const += -0.5 * (_LOG_2PI + math.log(v)) - ly[n]
        n += 1
    return n, const


@njit(**_JIT_INLINE)
def carbon_obs_row(pools, x, i, slots, ly, ivar, n):
    """State-dependent part of the carbon observation log-density of ``x[i]``."""
    lw = 0.0
    for k in range(n):
        slot = slots[k]
        if slot == 0:
            m = toc_row(x, i)
        elif slot == 1:
            m = x[i, 4] if pools == 5 else x[i, 1]
        elif slot == 2:
            m = x[i, 2]
        else:
            m = x[i, 0] + x[i, 1] + x[i, 3]
        d = ly[k] - math.log(m)
        lw -= 0.5 * d * d * ivar[k]
    return lw


# 1-D wrappers ---------------------------------------------------------------

@njit(**_JIT)
def input_kernel(site, treat, crop, th):
    """Carbon input from natural-scale crop masses."""
    return input_row(site, treat, np.log(crop).reshape(1, -1), 0, th)


@njit(**_JIT)
def carbon_step_kernel(pools, x, ic, z, th, out):
    """One annual carbon transition; ``z`` are standard-normal draws."""
    carbon_step_row(pools, x.reshape(1, -1), 0, ic, z.reshape(1, -1), 0, th,
                    carbon_coefs(pools, th), out.reshape(1, -1), 0)


@njit(**_JIT)
def crop_step_kernel(site, g, z, th, out):
    """Log-scale crop transition; ``g`` and ``out`` are log masses."""
    crop_step_row(site, g.reshape(1, -1), 0, z.reshape(1, -1), 0, 0, th, out.reshape(1, -1), 0)


@njit(**_JIT)
def crop_init_kernel(site, z, th, out):
    """Draw log crop states from the stationary law of the AR(1) processes."""
    crop_init_row(site, z.reshape(1, -1), 0, 0, th, out.reshape(1, -1), 0)


@njit(**_JIT)
def toc_kernel(x):
    return toc_row(x.reshape(1, -1), 0)


@njit(**_JIT)
def bio_ok_kernel(x):
    return bio_ok_row(x.reshape(1, -1), 0)


@njit(**_JIT)
def carbon_obs_kernel(pools, x, y, present, th):
    """Log-density of the carbon observations present at one time."""
    slots = np.empty(4, dtype=np.int64)
    ly = np.empty(4)
    ivar = np.empty(4)
    n, const = carbon_obs_prep(pools, y, present, th, slots, ly, ivar)
    if n == 0:
        return 0.0
    return const + carbon_obs_row(pools, x.reshape(1, -1), 0, slots, ly, ivar, n)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, ParameterVector):
        return theta.as_array()
    if isinstance(theta, np.ndarray) and theta.shape == (len(PARAM_NAMES),):
        return theta
    return ParameterVector(theta).as_array()


def _crop_layout(site: Site) -> tuple[str, ...]:
    return ("GW", "W", "P") if site == Site.TARLEE else ("GW", "W", "GS", "S")


def carbon_input(crop: Mapping[str, float], treatment: Treatment, theta,
                 site: Site | None = None) -> float:
    """Carbon entering the soil in one year (t/ha) from the crop masses.

    ``crop`` maps crop-state names (``GW``, ``W``, ``P``, ``GS``, ``S``) to
    natural-scale dry-matter masses.  The site is inferred from the keys when
    not given.
    """
    treatment = Treatment(treatment)
    if site is None:
        site = Site.BRIGALOW if ("GS" in crop or "S" in crop) else Site.TARLEE
    site = Site(site)
    if not ModelSpec(Pools.ONE, site).allows(treatment):
        raise ValueError(f"treatment {treatment.name} is not valid at {site.name}")
    layout = _crop_layout(site)
    vec = np.array([float(crop.get(k, 1.0)) for k in layout])
    for k in layout:
        if k in crop and not crop[k] > 0:
            raise ValueError(f"crop state {k} must be positive")
    return float(input_kernel(int(site), int(treatment), vec, _theta_array(theta)))


def initial_carbon(spec: ModelSpec, theta) -> np.ndarray:
    """Carbon states at t0 for each field, shape ``(fields, n_carbon)``.

    ``X_C0_i`` is the decomposable (non-inert) carbon of field i; the
    three- and five-pool models split it between pools with fixed shares.
    """
    th = _theta_array(theta)
    xc0 = th[_X_C0:_X_C0 + spec.fields]
    out = np.empty((spec.fields, len(spec.carbon_states)))
    if spec.pools == Pools.ONE:
        out[:, 0] = xc0
    elif spec.pools == Pools.TWO:
        out[:, 0] = xc0
        out[:, 1] = th[_X_IOM]
    elif spec.pools == Pools.THREE:
        out[:, 0] = xc0 * (1.0 - THREE_POOL_BIO_SHARE)
        out[:, 1] = th[_X_IOM]
        out[:, 2] = xc0 * THREE_POOL_BIO_SHARE
    else:
        for j, name in enumerate(("D", "R", "H", "B")):
            out[:, j] = xc0 * FIVE_POOL_SHARES[name]
        out[:, 4] = th[_X_IOM]
    return out


def _carbon_vector(spec: ModelSpec, state) -> np.ndarray:
    if isinstance(state, Mapping):
        return np.array([float(state[k]) for k in spec.carbon_states])
    return np.asarray(state, dtype=float).reshape(len(spec.carbon_states))


def step_carbon(spec: ModelSpec, state, I_C: float, theta, noise=None) -> np.ndarray:
    """Advance the carbon pools by one year.

    ``state`` is a mapping or array in ``spec.carbon_states`` order.  ``noise``
    holds standard-normal draws, one per stochastic pool (zeros if omitted).
    """
    x = _carbon_vector(spec, state)
    if np.any(x <= 0):
        raise ValueError("carbon states must be positive")
    if I_C < 0:
        raise ValueError("carbon input must be non-negative")
    nd = CARBON_NOISE_DIM[spec.pools]
    z = np.zeros(nd) if noise is None else np.asarray(noise, dtype=float).reshape(nd)
    out = np.empty_like(x)
    carbon_step_kernel(int(spec.pools), x, float(I_C), z, _theta_array(theta), out)
    return out


def step_crops(spec: ModelSpec, crops, theta, noise=None) -> np.ndarray:
    """Advance the crop states one year (natural-scale in, natural-scale out)."""
    layout = spec.crop_states
    if isinstance(crops, Mapping):
        crops = [crops[k] for k in layout]
    x = np.asarray(crops, dtype=float).reshape(len(layout))
    if np.any(x <= 0):
        raise ValueError("crop states must be positive")
    z = np.zeros(len(layout)) if noise is None else np.asarray(noise, dtype=float).reshape(len(layout))
    out = np.empty_like(x)
    crop_step_kernel(int(spec.site), np.log(x), z, _theta_array(theta), out)
    return np.exp(out)


def initial_crops(spec: ModelSpec, theta, noise) -> np.ndarray:
    """Natural-scale crop states drawn from the stationary AR(1) law."""
    z = np.asarray(noise, dtype=float).reshape(len(spec.crop_states))
    out = np.empty(len(spec.crop_states))
    crop_init_kernel(int(spec.site), z, _theta_array(theta), out)
    return np.exp(out)


_CROP_OBS_VAR = {"GW": "s2_eps_GW", "W": "s2_eps_W", "P": "s2_eps_P",
                 "GS": "s2_eps_GS", "S": "s2_eps_S"}


def obs_logdensity(spec: ModelSpec, latent: Mapping[str, float], observed: Mapping[str, float],
                   theta) -> float:
    """Joint log-density of the observations present at one (field, year).

    ``latent`` maps state names to natural-scale values; ``observed`` maps
    observation kinds to measured values.  Kinds the model does not use
    (for instance POC under the one-pool model) are ignored.
    """
    th = _theta_array(theta)
    used = set(spec.obs_kinds)
    y = np.ones(len(OBS_KINDS))
    present = np.zeros(len(OBS_KINDS), dtype=np.bool_)
    total = 0.0
    for kind, value in observed.items():
        if kind not in OBS_INDEX:
            raise ValueError(f"unknown observation kind {kind!r}")
        if not value > 0:
            raise ValueError(f"observation {kind}={value} must be positive")
        if kind not in used:
            continue
        if kind in _CROP_OBS_VAR:
            total += lognormal_logpdf(float(value), math.log(latent[kind]),
                                      th[PARAM_INDEX[_CROP_OBS_VAR[kind]]])
        else:
            y[OBS_INDEX[kind]] = value
            present[OBS_INDEX[kind]] = True
    if present.any():
        x = _carbon_vector(spec, latent)
        total += carbon_obs_kernel(int(spec.pools), x, y, present, th)
    return float(total)


class CarbonFluxes(NamedTuple):
    decayed: dict        # pool -> mass leaving the pool by decay
    transfers: dict      # (source, target) -> mass moved
    emitted: dict        # pool -> mass emitted as CO2


def carbon_fluxes(spec: ModelSpec, state, theta) -> CarbonFluxes:
    """Decay, transfer and emission of each decaying pool over one year."""
    th = ParameterVector(theta) if not isinstance(theta, ParameterVector) else theta
    x = dict(zip(spec.carbon_states, _carbon_vector(spec, state)))
    decayed, transfers, emitted = {}, {}, {}
    for pool, outs in OUTGOING[spec.pools].items():
        d = x[pool] * -math.expm1(-th[DECAY_RATE[pool]] * spec.dt)
        decayed[pool] = d
        share = 0.0
        for name in outs:
            transfers[(pool, name[-1])] = d * th[name]
            share += th[name]
        emitted[pool] = d * (1.0 - share)
    return CarbonFluxes(decayed, transfers, emitted)


def emitted_co2(traj: LatentTrajectory, spec: ModelSpec, theta) -> np.ndarray:
    """CO2-carbon emitted per field and year, shape ``(fields, T)``.

    The entry for year t is the emission over the step t-1 -> t; the first
    year has no preceding step and is zero.
    """
    th = ParameterVector(theta) if not isinstance(theta, ParameterVector) else theta
    nc = len(spec.crop_states)
    values = traj.values
    F, T = values.shape[:2]
    out = np.zeros((F, T))
    factors = []
    for pool, outs in OUTGOING[spec.pools].items():
        j = nc + spec.carbon_states.index(pool)
        k = -math.expm1(-th[DECAY_RATE[pool]] * spec.dt)
        factors.append((j, k * (1.0 - sum(th[n] for n in outs))))
    for j, f in factors:
        out[:, 1:] += values[:, :-1, j] * f
    return out
