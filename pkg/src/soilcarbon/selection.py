"""Leave-future-out cross-validation.

For each fit length ``t`` the model is refitted on the first ``t`` years
and scored on year ``t + 1`` by the log predictive density

    LPD_{t+1} = log( (1/S) sum_s p(Y_{t+1} | Y_{1:t}, theta_s) ),

where each term is the one-step filter increment (exact Kalman predictive
for crops, particle-predictive mixture for carbon).  ELPD is the sum of the
LPDs over the scored years.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from scipy.special import logsumexp

from .core import Site
from .mcmc import ChainConfig, InitializationError, ModelContext, run_chains

log = logging.getLogger(__name__)

DEFAULT_L = {Site.TARLEE: 12, Site.BRIGALOW: 13}


class LfoError(RuntimeError):
    """A refit inside the leave-future-out loop failed."""


def log_predictive(samples, context: ModelContext, t: int, rng: np.random.Generator) -> float:
    """Monte Carlo LPD of year index ``t`` (0-based) from posterior ``samples``.

    ``samples`` is ``(S, P)`` in ``context.names`` order, drawn from the
    posterior given years ``0..t-1``.  ``context`` must cover year ``t``; it
    is truncated to ``t + 1`` years here so nothing later can leak in.  Each
    sample gets a fresh random bank.
    """
    return _logmeanexp(predictive_terms(samples, context, t, rng))


def _logmeanexp(terms: np.ndarray) -> float:
    return float(logsumexp(terms) - math.log(terms.size))


def predictive_terms(samples, context: ModelContext, t: int, rng: np.random.Generator) -> np.ndarray:
    """Per-sample estimates of ``log p(Y_t | Y_{0..t-1}, theta_s)``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 1:
        raise ValueError("need at least one posterior sample")
    if not 0 < t < context.horizon:
        raise ValueError(f"year index {t} outside 1..{context.horizon - 1}")
    if not context.has_observations(t):
        raise ValueError(f"no observations to score at year index {t}")
    ctx = context.truncated(t + 1)
    return np.array([ctx.increment(th, ctx.new_bank(rng), t) for th in samples])


@dataclass(frozen=True)
class LfoResult:
    """Per-year LPDs and their sum.

    ``times`` are 1-based year indices ``t + 1`` of the scored years and
    ``fit_lengths`` the number of years each refit saw and ``kinds`` the
    observation kinds scored.  ``lpd`` pools all chains' samples;
    ``lpd_chains[i, c]`` uses chain ``c`` alone.
    """

    model: str
    L: int
    times: tuple[int, ...]
    fit_lengths: tuple[int, ...]
    kinds: tuple[tuple[str, ...], ...]
    lpd: np.ndarray           # (n_times,)
    lpd_chains: np.ndarray    # (n_times, n_chains)
    elpd: float
    elpd_chains: np.ndarray   # (n_chains,)
    acceptance: np.ndarray    # (n_times, n_chains)

    @property
    def lpd_mean(self) -> np.ndarray:
        return self.lpd_chains.mean(axis=1)

    @property
    def lpd_sd(self) -> np.ndarray:
        return _sd(self.lpd_chains, axis=1)

    @property
    def elpd_mean(self) -> float:
        return float(self.elpd_chains.mean())

    @property
    def elpd_sd(self) -> float:
        return float(_sd(self.elpd_chains, axis=0))


def _sd(x, axis):
    x = np.asarray(x)
    return x.std(axis=axis, ddof=1) if x.shape[axis] > 1 else np.zeros(np.delete(x.shape, axis))


def _fit_seed(master: int, t: int) -> int:
    return int(np.random.SeedSequence([master, t]).generate_state(1, np.uint64)[0])


def default_L(context: ModelContext) -> int:
    spec = getattr(context, "spec", None)
    if spec is None:
        raise ValueError("no default L for this context; pass L explicitly")
    return DEFAULT_L[spec.site]


def elpd_lfo(context: ModelContext, config: ChainConfig, L: int | None = None,
             n_chains: int = 4, workers: int | None = None) -> LfoResult:
    """Leave-future-out ELPD for fit lengths ``t = L .. T-1``.

    Years without any observation at ``t + 1`` are skipped.  Refit ``t``
    uses seed ``SeedSequence([config.seed, t])`` so results do not depend
    on which other years are scored.
    """
    T = context.horizon
    L = default_L(context) if L is None else int(L)
    if not 1 <= L < T:
        raise ValueError(f"L must satisfy 1 <= L < T = {T}, got {L}")
    cfg = replace(config, record_paths=False)
    times, fits, kinds, lpd, lpd_chains, acc = [], [], [], [], [], []
    for t in range(L, T):
        if not context.has_observations(t):
            log.info("no observations at t=%d, skipped", t + 1)
            continue
        seed = _fit_seed(config.seed, t)
        try:
            chains = run_chains(context.truncated(t), replace(cfg, seed=seed), n_chains, workers=workers)
        except (InitializationError, ValueError, FloatingPointError) as exc:
            raise LfoError(f"refit on years 1..{t} for t={t + 1} failed: {exc}") from exc
        rng = np.random.default_rng(seed)
        terms = [predictive_terms(c.theta, context, t, rng) for c in chains]
        times.append(t + 1)
        fits.append(t)
        kinds.append(tuple(context.observed_kinds(t)) if hasattr(context, "observed_kinds") else ())
        lpd.append(_logmeanexp(np.concatenate(terms)))
        lpd_chains.append([_logmeanexp(x) for x in terms])
        acc.append([c.acceptance_rate for c in chains])
    if not times:
        raise ValueError(f"no observations after year index {L}")
    lpd_arr = np.array(lpd)
    chains_arr = np.array(lpd_chains)
    return LfoResult(
        model=_label(context), L=L, times=tuple(times), fit_lengths=tuple(fits),
        kinds=tuple(kinds), lpd=lpd_arr, lpd_chains=chains_arr, elpd=math.fsum(lpd),
        elpd_chains=np.array([math.fsum(chains_arr[:, c]) for c in range(chains_arr.shape[1])]),
        acceptance=np.array(acc),
    )


def _label(context: Any) -> str:
    spec = getattr(context, "spec", None)
    return str(spec) if spec is not None else type(context).__name__
