"""Exactly tractable model contexts for checking the sampler and LFO code.

:class:`NormalMeanContext` observes ``y_t ~ N(mu, sigma^2)`` independently
with a normal prior on ``mu``, so posteriors and one-step predictive
densities are available in closed form.  Optionally its log-likelihood is
returned through a noisy but unbiased (on the natural scale) estimator
driven by a :class:`~soilcarbon.filters.RandomBank`, which makes it a
stand-in for a particle filter with known target.
"""

from __future__ import annotations

import math

import numpy as np

from .filters import RandomBank
from .priors import Prior, PriorSet, Proposal, ProposalSet

_LOG_2PI = math.log(2.0 * math.pi)


def normal_logpdf(y, mean, var):
    y = np.asarray(y, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


class NormalMeanContext:
    """Conjugate normal-normal model wired to the sampler interface.

    ``noise_sd > 0`` replaces the exact log-likelihood by
    ``exact + log mean_i exp(noise_sd * z_i - noise_sd^2 / 2)`` with
    ``z = bank.U`` of length ``n_noise``; its exponential is unbiased for the
    exact likelihood, so CPM still targets the exact posterior.
    """

    names = ("mu",)

    def __init__(self, y, sigma: float = 1.0, prior_mean: float = 0.0, prior_sd: float = 1.0,
                 step: float = 0.5, noise_sd: float = 0.0, n_noise: int = 1):
        self.y = np.asarray(y, dtype=float).ravel()
        if self.y.size < 1:
            raise ValueError("need at least one observation")
        if sigma <= 0 or prior_sd <= 0:
            raise ValueError("standard deviations must be positive")
        self.sigma = float(sigma)
        self.prior_mean = float(prior_mean)
        self.prior_sd = float(prior_sd)
        self.step = float(step)
        self.noise_sd = float(noise_sd)
        self.n_noise = int(n_noise)
        self.priors = PriorSet({"mu": Prior("normal", prior_mean, prior_sd)})
        self.proposals = ProposalSet({"mu": Proposal(step)})

    @property
    def horizon(self) -> int:
        return self.y.size

    def new_bank(self, rng: np.random.Generator) -> RandomBank:
        return RandomBank.draw(rng, (self.n_noise,), (0,))

    def correlate(self, bank: RandomBank, tau: float, rng: np.random.Generator) -> RandomBank:
        return bank.correlated(tau, rng)

    def _noise(self, bank: RandomBank) -> float:
        if self.noise_sd == 0.0:
            return 0.0
        s = self.noise_sd
        a = s * bank.U - 0.5 * s * s
        m = a.max()
        return float(m + math.log(np.mean(np.exp(a - m))))

    def loglik(self, theta, bank: RandomBank) -> float:
        mu = float(theta[0])
        return float(normal_logpdf(self.y, mu, self.sigma ** 2).sum()) + self._noise(bank)

    def path(self, theta, bank):
        return None

    def increment(self, theta, bank, t: int) -> float:
        return float(normal_logpdf(self.y[t], float(theta[0]), self.sigma ** 2))

    def has_observations(self, t: int) -> bool:
        return 0 <= t < self.y.size

    def observed_kinds(self, t: int) -> tuple[str, ...]:
        return ("y",) if self.has_observations(t) else ()

    def truncated(self, n_times: int) -> "NormalMeanContext":
        if not 1 <= n_times <= self.y.size:
            raise ValueError(f"cannot truncate {self.y.size} observations to {n_times}")
        return NormalMeanContext(self.y[:n_times], self.sigma, self.prior_mean, self.prior_sd,
                                 self.step, self.noise_sd, self.n_noise)

    # closed forms ---------------------------------------------------------

    def posterior(self, n_times: int | None = None) -> tuple[float, float]:
        """Posterior ``(mean, variance)`` of ``mu`` given the first ``n_times`` observations."""
        y = self.y if n_times is None else self.y[:n_times]
        prec = 1.0 / self.prior_sd ** 2 + y.size / self.sigma ** 2
        mean = (self.prior_mean / self.prior_sd ** 2 + y.sum() / self.sigma ** 2) / prec
        return float(mean), float(1.0 / prec)

    def predictive_logpdf(self, t: int) -> float:
        """Exact ``log p(y_t | y_0..y_{t-1})`` (0-based ``t``)."""
        m, v = self.posterior(t)
        return float(normal_logpdf(self.y[t], m, v + self.sigma ** 2))
