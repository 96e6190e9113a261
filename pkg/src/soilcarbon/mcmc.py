"""Correlated pseudo-marginal Metropolis-Hastings.

The sampler talks to a *model context*: an object that knows the parameter
names, draws and correlates random banks, evaluates the (estimated)
log-likelihood for a parameter vector and a bank, and holds the priors and
proposals.  :class:`SoilCarbonContext` wires the soil-carbon RBPF into that
interface; :mod:`soilcarbon.toy` provides exactly tractable contexts used
to check the sampler.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Protocol

import numpy as np

from .core import OBS_INDEX, OBS_KINDS, PARAM_INDEX, ChainOutput, Dataset, ModelSpec, ParameterVector, sampled_parameters
from .filters import COUPLINGS, RandomBank, bank_shape, prepare_data, rbpf_evaluate
from .priors import PriorSet, ProposalSet

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.99
DEFAULT_PARTICLES = 500


class InitializationError(RuntimeError):
    """No starting parameter vector with a finite likelihood was found."""


class ModelContext(Protocol):
    names: tuple[str, ...]
    priors: PriorSet
    proposals: ProposalSet

    def new_bank(self, rng: np.random.Generator) -> Any: ...
    def correlate(self, bank, tau: float, rng: np.random.Generator) -> Any: ...
    def loglik(self, theta: np.ndarray, bank) -> float: ...
    def path(self, theta: np.ndarray, bank) -> np.ndarray | None: ...
    def increment(self, theta: np.ndarray, bank, t: int) -> float: ...
    def truncated(self, n_times: int) -> "ModelContext": ...


class SoilCarbonContext:
    """Soil-carbon model plus data, evaluated by the Rao-Blackwellised filter.

    ``theta`` vectors handled here hold the sampled parameters in
    ``self.names`` order; fixed observation variances are filled in from
    :class:`ParameterVector` defaults.
    """

    def __init__(self, spec: ModelSpec, data: Dataset, n_particles: int = DEFAULT_PARTICLES,
                 coupling: str = "filtered", priors: PriorSet | None = None,
                 proposals: ProposalSet | None = None):
        if n_particles < 1:
            raise ValueError("need at least one particle")
        if coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {sorted(COUPLINGS)}")
        self.spec = spec
        self.data = data
        self.n_particles = int(n_particles)
        self.coupling = coupling
        self.names = sampled_parameters(spec)
        self.priors = priors or PriorSet.for_spec(spec)
        self.proposals = proposals or ProposalSet.for_spec(spec)
        self.prepared = prepare_data(spec, data)
        self._base = np.array(ParameterVector().as_array())
        self._idx = np.array([PARAM_INDEX[n] for n in self.names])
        self._coupling = COUPLINGS[coupling]

    @property
    def horizon(self) -> int:
        return self.data.horizon

    def full(self, theta) -> np.ndarray:
        th = self._base.copy()
        th[self._idx] = theta
        return th

    def parameters(self, theta) -> ParameterVector:
        return ParameterVector.from_array(self.names, theta)

    def new_bank(self, rng: np.random.Generator) -> RandomBank:
        u, v = bank_shape(self.spec, self.horizon, self.n_particles)
        return RandomBank.draw(rng, u, v)

    def correlate(self, bank: RandomBank, tau: float, rng: np.random.Generator) -> RandomBank:
        return bank.correlated(tau, rng)

    def evaluate(self, theta, bank: RandomBank, want_path: bool = False):
        return rbpf_evaluate(self.spec, self.prepared, self.full(theta), bank, self._coupling, want_path)

    def loglik(self, theta, bank: RandomBank) -> float:
        return self.evaluate(theta, bank).loglik

    def path(self, theta, bank: RandomBank) -> np.ndarray:
        return self.evaluate(theta, bank, want_path=True).paths

    def increment(self, theta, bank: RandomBank, t: int) -> float:
        """Estimated ``log p(Y_t | Y_{1:t-1}, theta)`` for 0-based year index ``t``."""
        r = self.evaluate(theta, bank)
        if not math.isfinite(r.loglik):
            return -math.inf
        return float(r.kf_increments[:, t].sum() + r.pf_increments[:, t].sum())

    def has_observations(self, t: int) -> bool:
        return bool(self.prepared.present[:, t].any())

    def observed_kinds(self, t: int) -> tuple[str, ...]:
        """Observation kinds the model scores at year index ``t`` (any field)."""
        seen = self.prepared.present[:, t].any(axis=0)
        return tuple(k for k in OBS_KINDS if seen[OBS_INDEX[k]])

    def truncated(self, n_times: int) -> "SoilCarbonContext":
        return SoilCarbonContext(self.spec, self.data.truncated(n_times), self.n_particles,
                                 self.coupling, self.priors, self.proposals)


@dataclass(frozen=True)
class CpmState:
    """Current point of a CPM chain; ``loglik`` is the cached estimate."""

    theta: np.ndarray
    bank: Any
    loglik: float
    logprior: float


def cpm_step(state: CpmState, tau: float, context: ModelContext, rng: np.random.Generator,
             priors: PriorSet | None = None, proposals: ProposalSet | None = None
             ) -> tuple[CpmState, bool]:
    """One CPM update: joint move of (theta, bank); returns ``(state, accepted)``.

    Random numbers are consumed in a fixed order (proposal, bank refresh,
    acceptance uniform) whatever the outcome, so a run is a pure function
    of its seed.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    priors = priors or context.priors
    proposals = proposals or context.proposals
    theta_new, log_q = proposals.propose(state.theta, rng)
    bank_new = context.correlate(state.bank, tau, rng)
    log_u = math.log(rng.random())
    lp_new = priors.log_prior(theta_new)
    if lp_new == -math.inf:
        return state, False
    ll_new = context.loglik(theta_new, bank_new)
    if not ll_new > -math.inf or math.isnan(ll_new):
        return state, False
    log_r = ll_new + lp_new + log_q - state.loglik - state.logprior
    if log_u < log_r:
        return CpmState(theta_new, bank_new, ll_new, lp_new), True
    return state, False


@dataclass(frozen=True)
class ChainConfig:
    """Chain length and sampler settings.

    Samples are kept at iterations ``m > burn_in`` with
    ``(m - burn_in) % stride == 0``.
    """

    iterations: int = 200_000
    burn_in: int = 80_000
    stride: int = 30
    tau: float = DEFAULT_TAU
    n_particles: int = DEFAULT_PARTICLES
    seed: int = 0
    init_retries: int = 100
    record_paths: bool = True

    def __post_init__(self):
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn-in")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn-in must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    @property
    def n_kept(self) -> int:
        return (self.iterations - self.burn_in) // self.stride

    @classmethod
    def full(cls, **kw) -> "ChainConfig":
        """Full-length settings: 200k iterations, 80k burn-in, stride 30."""
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "ChainConfig":
        """Reduced-fidelity preset: 20k iterations, 8k burn-in, stride 30, N=200."""
        base = dict(iterations=20_000, burn_in=8_000, stride=30, n_particles=200)
        base.update(kw)
        return cls(**base)

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(self.__dict__.items())).encode()).hexdigest()[:16]


def initial_state(context: ModelContext, rng: np.random.Generator, retries: int = 100,
                  theta0=None) -> CpmState:
    """Starting state from prior draws (dispersed start law for vague variances).

    Draws outside the joint prior support are redrawn without counting as
    retries; up to ``retries`` draws with a ``-inf`` likelihood are tolerated.
    """
    for attempt in range(retries):
        if theta0 is not None:
            theta = np.asarray(theta0, dtype=float)
        else:
            for _ in range(10_000):
                theta = context.priors.sample(rng, for_init=True)
                if context.priors.log_prior(theta) > -math.inf:
                    break
            else:
                raise InitializationError("prior draws never satisfied the joint support")
        lp = context.priors.log_prior(theta)
        bank = context.new_bank(rng)
        ll = context.loglik(theta, bank)
        if lp > -math.inf and ll > -math.inf and not math.isnan(ll):
            return CpmState(theta, bank, ll, lp)
        if theta0 is not None:
            break
    raise InitializationError(f"no finite-likelihood starting point after {attempt + 1} attempts")


def run_chain(context: ModelContext, config: ChainConfig, theta0=None) -> ChainOutput:
    """Run one chain and return its thinned output."""
    rng = np.random.default_rng(config.seed)
    state = initial_state(context, rng, config.init_retries, theta0)
    S = config.n_kept
    thetas = np.empty((S, len(context.names)))
    lls = np.empty(S)
    paths = []
    accepted = 0
    kept = 0
    for m in range(1, config.iterations + 1):
        state, ok = cpm_step(state, config.tau, context, rng)
        accepted += ok
        if m > config.burn_in and (m - config.burn_in) % config.stride == 0:
            thetas[kept] = state.theta
            lls[kept] = state.loglik
            if config.record_paths:
                p = context.path(state.theta, state.bank)
                if p is not None:
                    paths.append(p)
            kept += 1
    rate = accepted / config.iterations
    if not 0.05 <= rate <= 0.6:
        log.info("acceptance rate %.3f outside the usual 0.05-0.6 band", rate)
    traj = np.stack(paths) if paths else np.empty((S, 0, 0, 0))
    return ChainOutput(
        seed=int(config.seed), param_names=tuple(context.names), theta=thetas, trajectories=traj,
        loglik=lls, acceptance_rate=rate, iterations=config.iterations, burn_in=config.burn_in,
        stride=config.stride, spec=getattr(context, "spec", None),
        t0=getattr(getattr(context, "data", None), "t0", None),
        extra={"tau": config.tau, "n_particles": getattr(context, "n_particles", None),
               "coupling": getattr(context, "coupling", None), "accepted": accepted},
    )


def chain_seeds(master_seed: int, n_chains: int) -> list[int]:
    """Independent per-chain seeds: ``SeedSequence(master).spawn(n)``, first 64-bit word each."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(master_seed).spawn(n_chains)]


def worker_count(default: int = 1) -> int:
    """Worker processes for chain-level parallelism (``SOILCARBON_WORKERS`` overrides)."""
    env = os.environ.get("SOILCARBON_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"SOILCARBON_WORKERS must be an integer, got {env!r}") from None
        return max(1, n)
    return max(1, default)


def _run_one(args):
    context, config = args
    return run_chain(context, config)


def run_chains(context: ModelContext, config: ChainConfig, n_chains: int = 4,
               master_seed: int | None = None, workers: int | None = None) -> list[ChainOutput]:
    """Run ``n_chains`` independent chains with seeds split from ``master_seed``.

    ``config.seed`` is the master seed unless ``master_seed`` is given.
    Results do not depend on the number of workers.
    """
    master = config.seed if master_seed is None else master_seed
    configs = [replace(config, seed=s) for s in chain_seeds(master, n_chains)]
    workers = worker_count(1) if workers is None else workers
    if workers <= 1 or n_chains == 1:
        return [run_chain(context, c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(workers, n_chains)) as ex:
        return list(ex.map(_run_one, [(context, c) for c in configs]))
