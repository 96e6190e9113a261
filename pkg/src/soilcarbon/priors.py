"""Prior distributions and random-walk proposals for the static parameters.

Default tables follow the published prior and proposal tables for the Tarlee
and Brigalow sites.  Densities are evaluated with plain ``math`` so that the
per-iteration cost inside the sampler stays small.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .core import OUTGOING, PARAM_INDEX, ModelSpec, Pools, Site, sampled_parameters

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_MAX = math.log(sys.float_info.max)

KINDS = ("lognormal", "normal", "truncnormal", "beta", "uniform", "invgamma", "loguniform")


def _log_norm_mass(mu, sd, lower, upper):
    """log P(lower < N(mu, sd^2) < upper)."""
    a = -math.inf if lower is None else (lower - mu) / sd
    b = math.inf if upper is None else (upper - mu) / sd
    if b == math.inf:
        return float(log_ndtr(-a))
    if a == -math.inf:
        return float(log_ndtr(b))
    # upper tail is more accurate when both bounds sit above the mean
    if a > 0:
        return float(math.log(ndtr(-a) - ndtr(-b)))
    return float(math.log(ndtr(b) - ndtr(a)))


@dataclass(frozen=True)
class Prior:
    """One univariate prior.

    ``a``/``b`` are the two hyperparameters of the family: (log-mean, log-sd)
    for log-normal, (mean, sd) for normal and truncated normal, the shape
    pair for beta, the bounds for uniform and log-uniform, (shape, scale)
    for inverse-gamma.
    """

    kind: str
    a: float
    b: float
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prior family {self.kind!r}")
        if self.kind == "truncnormal" and self.lower is None and self.upper is None:
            raise ValueError("truncated normal needs at least one bound")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind in ("lognormal", "invgamma"):
            return 0.0, math.inf
        if self.kind == "beta":
            return 0.0, 1.0
        if self.kind in ("uniform", "loguniform"):
            return self.a, self.b
        if self.kind == "truncnormal":
            lo = -math.inf if self.lower is None else self.lower
            hi = math.inf if self.upper is None else self.upper
            return lo, hi
        return -math.inf, math.inf

    def logpdf(self, x: float) -> float:
        k, a, b = self.kind, self.a, self.b
        if not math.isfinite(x):
            return -math.inf
        if k == "normal":
            z = (x - a) / b
            return -0.5 * z * z - math.log(b) - _LOG_SQRT_2PI
        if k == "truncnormal":
            lo, hi = self.support
            if not lo <= x <= hi:
                return -math.inf
            z = (x - a) / b
            return -0.5 * z * z - math.log(b) - _LOG_SQRT_2PI - _log_norm_mass(a, b, self.lower, self.upper)
        if k == "lognormal":
            if x <= 0:
                return -math.inf
            lx = math.log(x)
            z = (lx - a) / b
            return -0.5 * z * z - math.log(b) - _LOG_SQRT_2PI - lx
        if k == "beta":
            if not 0 < x < 1:
                return -math.inf
            return ((a - 1) * math.log(x) + (b - 1) * math.log1p(-x)
                    - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
        if k == "uniform":
            return -math.log(b - a) if a <= x <= b else -math.inf
        if k == "loguniform":
            return -math.log(x) - math.log(math.log(b / a)) if a <= x <= b else -math.inf
        # inverse gamma (shape a, scale b)
        if x <= 0:
            return -math.inf
        return a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(x) - b / x

    def sample(self, rng: np.random.Generator) -> float:
        k, a, b = self.kind, self.a, self.b
        if k == "normal":
            return float(rng.normal(a, b))
        if k == "truncnormal":
            return _truncnormal_draw(a, b, self.lower, self.upper, rng.random())
        if k == "lognormal":
            return float(math.exp(rng.normal(a, b)))
        if k == "beta":
            return float(rng.beta(a, b))
        if k == "uniform":
            return float(rng.uniform(a, b))
        if k == "loguniform":
            return float(math.exp(rng.uniform(math.log(a), math.log(b))))
        # log-space draw: Gamma(a) with tiny a underflows to zero directly
        log_g = math.log(rng.gamma(a + 1.0)) + math.log(rng.random()) / a
        return math.exp(min(math.log(b) - log_g, _LOG_MAX))


def _truncnormal_draw(mu, sd, lower, upper, u):
    """Inverse-CDF draw from N(mu, sd^2) restricted to (lower, upper)."""
    a = -math.inf if lower is None else (lower - mu) / sd
    b = math.inf if upper is None else (upper - mu) / sd
    if a > 0:
        # mirror so that the tail computation stays in the accurate region
        pa, pb = ndtr(-b), ndtr(-a)
        z = -float(ndtri(pa + u * (pb - pa)))
    else:
        pa, pb = ndtr(a), ndtr(b)
        z = float(ndtri(pa + u * (pb - pa)))
    x = mu + sd * z
    lo = -math.inf if lower is None else lower
    hi = math.inf if upper is None else upper
    return min(max(x, lo), hi)


# Heavy-tailed inverse-gamma(0.001, 0.001) draws are numerically useless as
# chain starting points; such variances start from this dispersed range.
VARIANCE_INIT = Prior("loguniform", 0.005, 0.05)


class PriorSet(Mapping):
    """Priors for the sampled parameters of one model."""

    def __init__(self, priors: Mapping[str, Prior], names=None, init: Mapping[str, Prior] | None = None):
        self._priors = dict(priors)
        self.names = tuple(names) if names is not None else tuple(self._priors)
        missing = set(self.names) - set(self._priors)
        if missing:
            raise ValueError(f"no prior for {sorted(missing)}")
        self._order = [self._priors[n] for n in self.names]
        self.init = dict(init or {})
        self._outgoing: tuple = ()

    def __getitem__(self, name):
        return self._priors[name]

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    @classmethod
    def for_spec(cls, spec: ModelSpec, overrides: Mapping[str, Prior] | None = None) -> "PriorSet":
        names = sampled_parameters(spec)
        table = dict(_COMMON_PRIORS)
        if spec.site == Site.BRIGALOW:
            table.update(_BRIGALOW_PRIORS)
        table.update(overrides or {})
        ps = cls({n: table[n] for n in names}, names,
                 init={n: VARIANCE_INIT for n in names if table[n].kind == "invgamma"})
        ps._outgoing = tuple(
            tuple(names.index(n) for n in outs)
            for outs in OUTGOING[spec.pools].values() if len(outs) > 1 and all(n in names for n in outs)
        )
        return ps

    def log_prior(self, values) -> float:
        """Joint log-density of a vector in ``self.names`` order (or a mapping).

        Returns ``-inf`` outside the support, including when the outgoing
        transfer proportions of some pool sum to more than one.
        """
        if isinstance(values, Mapping):
            values = [values[n] for n in self.names]
        total = 0.0
        for prior, x in zip(self._order, values):
            total += prior.logpdf(float(x))
            if total == -math.inf:
                return -math.inf
        for idx in self._outgoing:
            if sum(values[i] for i in idx) > 1.0:
                return -math.inf
        return total

    def sample(self, rng: np.random.Generator, for_init: bool = False) -> np.ndarray:
        """One joint draw in ``self.names`` order (``for_init`` swaps in the
        dispersed start distribution for vague variance priors)."""
        out = np.empty(len(self.names))
        for i, n in enumerate(self.names):
            p = self.init.get(n, self._priors[n]) if for_init else self._priors[n]
            out[i] = p.sample(rng)
        return out


@dataclass(frozen=True)
class Proposal:
    """Random-walk kernel ``N(x, s^2)`` truncated to ``[lower, upper]``.

    The step ``s`` is ``scale``, or ``|x| / relative`` when ``relative`` is set
    (a state-dependent scale).
    """

    scale: float = 0.0
    lower: float | None = None
    upper: float | None = None
    relative: float | None = None

    def step(self, x: float) -> float:
        return abs(x) / self.relative if self.relative else self.scale

    def log_density(self, to: float, frm: float) -> float:
        s = self.step(frm)
        z = (to - frm) / s
        lq = -0.5 * z * z - math.log(s)
        if self.lower is not None or self.upper is not None:
            lq -= _log_norm_mass(frm, s, self.lower, self.upper)
        return lq

    def draw(self, x: float, u: float) -> tuple[float, float]:
        """``(x', log q(x|x') - log q(x'|x))`` from a uniform ``u``."""
        s = self.step(x)
        if s == 0.0:
            return x, 0.0
        if self.lower is None and self.upper is None:
            xn = x + s * float(ndtri(u))
            if self.relative:
                return xn, self.log_density(x, xn) - self.log_density(xn, x)
            return xn, 0.0
        xn = _truncnormal_draw(x, s, self.lower, self.upper, u)
        if self.relative and self.step(xn) == 0.0:
            return x, 0.0
        return xn, self.log_density(x, xn) - self.log_density(xn, x)


class ProposalSet(Mapping):
    """Componentwise random-walk proposals, all components moved jointly."""

    def __init__(self, proposals: Mapping[str, Proposal], names=None):
        self._props = dict(proposals)
        self.names = tuple(names) if names is not None else tuple(self._props)
        missing = set(self.names) - set(self._props)
        if missing:
            raise ValueError(f"no proposal for {sorted(missing)}")
        self._order = [self._props[n] for n in self.names]

    def __getitem__(self, name):
        return self._props[name]

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    @classmethod
    def for_spec(cls, spec: ModelSpec, overrides: Mapping[str, Proposal] | None = None) -> "ProposalSet":
        names = sampled_parameters(spec)
        table = dict(_proposal_table(spec))
        table.update(overrides or {})
        return cls({n: table[n] for n in names}, names)

    def scaled(self, factor: float) -> "ProposalSet":
        """All step sizes multiplied by ``factor``."""
        out = {}
        for n, p in self._props.items():
            out[n] = replace(p, scale=p.scale * factor,
                             relative=None if p.relative is None else (p.relative / factor if factor else None))
        return ProposalSet(out, self.names)

    def propose(self, values, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Move every component; returns ``(theta', log proposal ratio)``."""
        u = rng.random(len(self.names))
        out = np.empty(len(self.names))
        lr = 0.0
        for i, (p, x) in enumerate(zip(self._order, values)):
            out[i], d = p.draw(float(x), float(u[i]))
            lr += d
        return out, lr


def propose(values, proposals: ProposalSet, rng: np.random.Generator):
    return proposals.propose(values, rng)


def log_prior(values, priors: PriorSet) -> float:
    return priors.log_prior(values)


# ---------------------------------------------------------------------------
# default tables
# ---------------------------------------------------------------------------

def _tn(mu, sd, lower=0.0, upper=None):
    return Prior("truncnormal", mu, sd, lower, upper)


_IG3 = Prior("invgamma", 0.001, 0.001)
_COMMON_PRIORS = {
    "X_C0_1": _tn(40, 10), "X_C0_2": _tn(40, 10), "X_C0_3": _tn(40, 10),
    "X_IOM": _tn(4, 0.5),
    "K_C": Prior("lognormal", -2.71, 0.127),
    "K_D": Prior("lognormal", -2.71, 0.127),
    "K_B": _tn(0.66, 0.3),
    "K_R": Prior("lognormal", -2.5, 0.135),
    "K_H": _tn(0.02, 0.01),
    "c": Prior("normal", 0.45, 0.01),
    "r_W": Prior("normal", 0.5, 0.067),
    "r_P": Prior("normal", 1.0, 0.125),
    "p": Prior("beta", 89.9, 809.1),
    "h_W": Prior("lognormal", 0.825, 0.36),
    "mu_GW": Prior("normal", 0.42, 1.18),
    "mu_P": Prior("normal", 1.41, 1.81),
    "rho_GW": Prior("uniform", -1.0, 1.0),
    "rho_P": Prior("uniform", -1.0, 1.0),
    "s2_eta": _IG3, "s2_etaC": _IG3, "s2_etaD": _IG3, "s2_etaB": _IG3,
    "s2_etaR": Prior("invgamma", 0.01, 0.01), "s2_etaH": _IG3,
    "s2_GW": _IG3, "s2_W": _IG3, "s2_P": _IG3,
    "P_D": Prior("uniform", 0.0, 1.0),
    **{n: Prior("uniform", 0.0, 1.0) for n in PARAM_INDEX if n.startswith("pi_")},
}
_BRIGALOW_PRIORS = {
    "X_C0_1": _tn(60, 15), "X_C0_2": _tn(60, 15), "X_C0_3": _tn(60, 15),
    "X_IOM": _tn(12, 2),
    "h_S": Prior("lognormal", 0.46, 1.6),
    "rho_GS": Prior("uniform", -1.0, 1.0),
    "mu_GS": Prior("normal", 0.42, 1.18),
    "r_S": Prior("normal", 0.5, 0.067),
    "K_R": _tn(0.15, 0.075),
    "s2_GS": _IG3,
    "s2_etaB": _tn(0, 0.5), "s2_etaR": _tn(0, 0.5), "s2_etaH": _tn(0, 0.5),
    "s2_S": _IG3,
}


def _pos(s):
    return Proposal(s, 0.0)


def _unit(s):
    return Proposal(s, 0.0, 1.0)


def _corr(s):
    return Proposal(s, -1.0, 1.0)


def _rel(k):
    return Proposal(0.0, 0.0, None, k)


def _xc(s):
    return {f"X_C0_{i}": _pos(s) for i in (1, 2, 3)}


_TARLEE_123 = {
    "K_C": Proposal(0.001), "K_B": _pos(0.09), "c": _unit(0.005), "r_W": _pos(0.05),
    "r_P": _pos(0.05), "p": _unit(0.005), "h_W": _pos(0.05), "mu_GW": Proposal(0.05),
    "mu_P": Proposal(0.05), "rho_GW": _corr(0.05), "rho_P": _corr(0.1),
    "s2_eta": _pos(0.001), "s2_etaC": _pos(0.001), "s2_etaB": _pos(0.01),
    "s2_GW": _rel(20), "s2_W": _pos(0.001), "s2_P": _pos(0.1),
    "pi_CB": _unit(0.05), "pi_BC": _unit(0.1), "pi_BB": _unit(0.1),
    **_xc(5), "X_IOM": _pos(0.9),
}
_TARLEE_3 = {
    **_TARLEE_123,
    "K_C": Proposal(0.005), "mu_GW": Proposal(0.075), "mu_P": Proposal(0.1),
    **_xc(2), "X_IOM": _pos(0.09),
}
_TARLEE_5 = {
    "K_D": _pos(0.005), "K_B": _pos(0.09), "K_R": _pos(0.005), "K_H": _pos(0.006),
    "c": _unit(0.005), "r_W": _pos(0.05), "r_P": _pos(0.05), "p": _unit(0.005),
    "h_W": _pos(0.05), "mu_GW": Proposal(0.075), "mu_P": Proposal(0.1),
    "rho_GW": _corr(0.25), "rho_P": _corr(0.2), "s2_etaD": _pos(0.1), "s2_GW": _rel(20),
    "s2_W": _pos(0.01), "s2_P": _pos(0.1), "X_IOM": _pos(0.09), **_xc(1.3),
    "s2_etaB": _pos(0.1), "P_D": _unit(0.15), "s2_etaR": _pos(0.09), "s2_etaH": _pos(0.01),
    "pi_DB": _unit(0.05), "pi_BB": _unit(0.15), "pi_DH": _unit(0.09), "pi_RH": _unit(0.1),
    "pi_HH": _unit(0.1), "pi_BH": _unit(0.015), "pi_RB": _unit(0.09), "pi_HB": _unit(0.1),
}
_BRIG_1 = {
    "K_C": Proposal(0.002), "c": _unit(0.005), "r_W": _pos(0.05), "p": _unit(0.005),
    "h_W": _pos(0.05), "mu_GW": Proposal(0.05), "rho_GW": _corr(0.05), "s2_eta": _pos(0.001),
    "s2_GW": _rel(20), "s2_W": _pos(0.001), **_xc(2), "r_S": _pos(0.05), "s2_S": _pos(0.05),
    "mu_GS": Proposal(0.05), "rho_GS": _corr(0.25), "s2_GS": _rel(20), "h_S": _pos(0.25),
}
_BRIG_2 = {
    **_BRIG_1,
    "K_C": Proposal(0.01), "h_W": _pos(0.1), "s2_W": _pos(0.01), "X_IOM": _pos(0.05),
    "s2_S": _pos(0.01),
}
# The three- and five-pool Brigalow tables bound transfer proportions below only.
_BRIG_3 = {
    **_BRIG_2,
    "s2_etaC": _pos(0.001), "s2_etaB": _pos(0.1), "K_B": _pos(0.09), "pi_DB": _pos(0.1),
    "pi_BB": _pos(0.1), "pi_BC": _pos(0.1), "pi_CB": _pos(0.05), "K_R": _pos(0.1),
}
_BRIG_5 = {
    **_BRIG_3,
    "s2_etaD": _pos(0.02), "s2_etaB": _pos(0.1), "s2_etaR": _pos(0.9), "s2_etaH": _pos(0.1),
    "s2_GW": _rel(30), "s2_GS": _rel(10), "s2_S": _pos(0.05), "X_IOM": _pos(0.9), **_xc(3),
    "K_D": _pos(0.005), "K_B": _pos(0.1), "K_R": _pos(0.05), "K_H": _pos(0.01),
    "h_W": _pos(0.05), "h_S": _pos(0.5), "P_D": _pos(0.15), "pi_DH": _pos(0.09),
    "pi_RH": _pos(0.1), "pi_HH": _pos(0.1), "pi_BH": _pos(0.15), "pi_RB": _pos(0.09),
    "pi_HB": _pos(0.1), "rho_GS": _corr(0.1),
}
_PROPOSALS = {
    (Site.TARLEE, Pools.ONE): _TARLEE_123,
    (Site.TARLEE, Pools.TWO): _TARLEE_123,
    (Site.TARLEE, Pools.THREE): _TARLEE_3,
    (Site.TARLEE, Pools.FIVE): _TARLEE_5,
    (Site.BRIGALOW, Pools.ONE): _BRIG_1,
    (Site.BRIGALOW, Pools.TWO): _BRIG_2,
    (Site.BRIGALOW, Pools.THREE): _BRIG_3,
    (Site.BRIGALOW, Pools.FIVE): _BRIG_5,
}


def _proposal_table(spec: ModelSpec) -> dict:
    return _PROPOSALS[(spec.site, spec.pools)]
