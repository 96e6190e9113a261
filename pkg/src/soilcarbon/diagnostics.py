"""Convergence diagnostics and posterior summaries of the latent trajectories."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from .core import ChainOutput, LatentTrajectory, ModelSpec, total_soc_array
from .models import emitted_co2

DEFAULT_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


class RhatReport(NamedTuple):
    names: tuple[str, ...]
    rhat: np.ndarray     # point estimates
    upper: np.ndarray    # upper confidence bounds

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {n: (float(r), float(u)) for n, r, u in zip(self.names, self.rhat, self.upper)}

    def converged(self, threshold: float = 1.2) -> bool:
        return bool(np.all(self.rhat < threshold))


def _psrf(x: np.ndarray, confidence: float) -> tuple[float, float]:
    """Potential scale reduction of one parameter; ``x`` is (chains, n)."""
    m, n = x.shape
    s2 = x.var(axis=1, ddof=1)
    xbar = x.mean(axis=1)
    W = s2.mean()
    if W == 0.0:
        return math.inf, math.inf
    B = n * xbar.var(ddof=1)
    var_w = s2.var(ddof=1) / m
    var_b = 2.0 * B * B / (m - 1)
    mu = xbar.mean()
    cov_wb = (n / m) * (np.cov(s2, xbar ** 2)[0, 1] - 2.0 * mu * np.cov(s2, xbar)[0, 1])
    V = (n - 1) / n * W + (1 + 1 / m) * B / n
    var_v = ((n - 1) ** 2 * var_w + (1 + 1 / m) ** 2 * var_b
             + 2 * (n - 1) * (1 + 1 / m) * cov_wb) / n ** 2
    df_adj = 1.0 if var_v <= 0 else ((2 * V * V / var_v) + 3) / ((2 * V * V / var_v) + 1)
    r_fixed = (n - 1) / n
    r_random = (1 + 1 / m) * (1 / n) * (B / W)
    q = (1 + confidence) / 2
    if var_w > 0:
        fq = stats.f.ppf(q, m - 1, 2 * W * W / var_w)
    else:
        fq = stats.chi2.ppf(q, m - 1) / (m - 1)
    return (math.sqrt(df_adj * (r_fixed + r_random)),
            math.sqrt(df_adj * (r_fixed + fq * r_random)))


def gelman_rubin(chains, names: Sequence[str] | None = None, confidence: float = 0.95) -> RhatReport:
    """Gelman-Rubin (1992) potential scale reduction factors.

    ``chains`` is an array of shape ``(chains, samples)`` or
    ``(chains, samples, parameters)``, or a sequence of :class:`ChainOutput`.
    Uses the degrees-of-freedom corrected estimator with an F-based upper
    confidence bound.  A parameter that never moves within any chain gets
    ``inf``.
    """
    if len(chains) and isinstance(chains[0], ChainOutput):
        names = names or chains[0].param_names
        x = np.stack([c.theta for c in chains])
    else:
        x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    m, n, p = x.shape
    if m < 2:
        raise ValueError("need at least two chains")
    if n < 10:
        raise ValueError("need at least 10 samples per chain")
    names = tuple(names) if names is not None else tuple(f"theta[{i}]" for i in range(p))
    if len(names) != p:
        raise ValueError(f"{len(names)} names for {p} parameters")
    r = np.empty(p)
    u = np.empty(p)
    for j in range(p):
        r[j], u[j] = _psrf(x[:, :, j], confidence)
    return RhatReport(names, r, u)


def _trajectory_samples(samples, spec: ModelSpec | None):
    """(S, F, T, D) array plus spec from chains or a raw array."""
    if isinstance(samples, ChainOutput):
        samples = [samples]
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], ChainOutput):
        spec = spec or samples[0].spec
        return np.concatenate([c.trajectories for c in samples]), spec
    if isinstance(samples, LatentTrajectory):
        return samples.values[None], spec or samples.spec
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    return arr, spec


def _quantiles(values: np.ndarray, quantiles) -> np.ndarray:
    q = np.asarray(quantiles, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantiles must lie in [0, 1]")
    return np.moveaxis(np.percentile(values, 100 * q, axis=0, method="linear"), 0, -1)


class SocChange(NamedTuple):
    baseline: int
    target: int
    mean: np.ndarray         # (fields,)
    quantiles: np.ndarray    # (fields, len(levels))
    levels: tuple[float, ...]


def soc_change(samples, spec: ModelSpec | None = None, baseline: int | None = None,
               target: int | None = None, t0: int | None = None,
               quantiles=DEFAULT_QUANTILES) -> SocChange:
    """Posterior change of total SOC between two years, per field.

    ``samples`` are trajectory samples (chains or an ``(S, F, T, D)`` array);
    ``t0`` is the first trajectory year (taken from the chains when omitted).
    """
    if isinstance(samples, ChainOutput):
        t0 = samples.t0 if t0 is None else t0
    elif isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], ChainOutput):
        t0 = samples[0].t0 if t0 is None else t0
    arr, spec = _trajectory_samples(samples, spec)
    if spec is None:
        raise ValueError("a model spec is needed to total the carbon pools")
    t0 = spec.t0 if t0 is None else t0
    T = arr.shape[2]
    baseline = t0 if baseline is None else baseline
    target = t0 + T - 1 if target is None else target
    for y in (baseline, target):
        if not t0 <= y < t0 + T:
            raise IndexError(f"year {y} outside trajectory range {t0}..{t0 + T - 1}")
    toc = total_soc_array(arr, spec)
    diff = toc[:, :, target - t0] - toc[:, :, baseline - t0]
    return SocChange(baseline, target, diff.mean(axis=0), _quantiles(diff, quantiles),
                     tuple(float(q) for q in quantiles))


def statistic_samples(samples, statistic: str = "total_soc", spec: ModelSpec | None = None,
                      baseline: int | None = None) -> np.ndarray:
    """Per-sample ``(S, F, T)`` curves of ``total_soc``, ``soc_change`` or ``emitted_co2``.

    ``emitted_co2`` needs the parameter draws and therefore chain output.
    ``soc_change`` is measured from ``baseline`` (default: first year).
    """
    if statistic == "emitted_co2":
        chains = [samples] if isinstance(samples, ChainOutput) else list(samples)
        if not chains or not isinstance(chains[0], ChainOutput):
            raise ValueError("emitted_co2 bands need chain output (parameter draws)")
        out = []
        for c in chains:
            for s in range(c.n_samples):
                out.append(emitted_co2(c.trajectory(s), c.spec, c.parameters(s)))
        return np.stack(out)
    arr, spec = _trajectory_samples(samples, spec)
    if spec is None:
        raise ValueError("a model spec is needed to total the carbon pools")
    toc = total_soc_array(arr, spec)
    if statistic == "total_soc":
        return toc
    if statistic == "soc_change":
        t0 = spec.t0
        if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], ChainOutput):
            t0 = samples[0].t0
        elif isinstance(samples, ChainOutput):
            t0 = samples.t0
        b = 0 if baseline is None else baseline - t0
        if not 0 <= b < toc.shape[2]:
            raise IndexError(f"baseline {baseline} outside trajectory range")
        return toc - toc[:, :, b:b + 1]
    raise ValueError(f"unknown statistic {statistic!r}")


def percentile_bands(samples, statistic: str = "total_soc", quantiles=DEFAULT_QUANTILES,
                     spec: ModelSpec | None = None, baseline: int | None = None) -> np.ndarray:
    """Empirical quantile curves, shape ``(fields, T, len(quantiles))``.

    Quantiles use linear interpolation between order statistics.
    ``samples`` may also be a ready ``(S, F, T)`` array of statistic values,
    in which case ``statistic`` is ignored.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 3 and spec is None:
        values = samples
    else:
        values = statistic_samples(samples, statistic, spec, baseline)
    if values.shape[0] < 1:
        raise ValueError("need at least one sample")
    return _quantiles(values, quantiles)
