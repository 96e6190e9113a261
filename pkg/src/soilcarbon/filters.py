"""Kalman filter, particle filters and their Rao-Blackwellised composition.

Generic pieces (:func:`kalman_filter`, :func:`bootstrap_pf`,
:func:`fixed_random_pf`) work with any model exposing the small
:class:`ParticleModel` interface.  The soil-carbon likelihood
(:func:`rbpf_loglik`) runs a specialised numba kernel of the same algorithm:
exact Kalman filtering of the log-linear crop sub-model plus a
fixed-random-number particle filter over the carbon pools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np
from numba import njit
from scipy.special import ndtr

from .core import (
    CARBON_NOISE_DIM,
    CROP_KINDS,
    OBS_INDEX,
    PARAM_INDEX,
    Dataset,
    ModelSpec,
    ParameterVector,
    Site,
    Treatment,
)
from .models import (
    bio_ok_row,
    carbon_coefs,
    carbon_obs_prep,
    carbon_obs_row,
    carbon_step_row,
    crop_init_row,
    crop_step_row,
    initial_carbon,
    input_row,
    toc_row,
)

_LOG_2PI = math.log(2.0 * math.pi)
_JITTER = 1e-12

_MU_GW = PARAM_INDEX["mu_GW"]
_MU_GS = PARAM_INDEX["mu_GS"]
_MU_P = PARAM_INDEX["mu_P"]
_RHO_GW = PARAM_INDEX["rho_GW"]
_RHO_GS = PARAM_INDEX["rho_GS"]
_RHO_P = PARAM_INDEX["rho_P"]
_S2_GW = PARAM_INDEX["s2_GW"]
_S2_GS = PARAM_INDEX["s2_GS"]
_S2_W = PARAM_INDEX["s2_W"]
_S2_S = PARAM_INDEX["s2_S"]
_S2_P = PARAM_INDEX["s2_P"]
_H_W = PARAM_INDEX["h_W"]
_H_S = PARAM_INDEX["h_S"]
_E_GW = PARAM_INDEX["s2_eps_GW"]
_E_GS = PARAM_INDEX["s2_eps_GS"]
_E_W = PARAM_INDEX["s2_eps_W"]
_E_S = PARAM_INDEX["s2_eps_S"]
_E_P = PARAM_INDEX["s2_eps_P"]
_TARLEE = int(Site.TARLEE)
_FALLOW = int(Treatment.Fallow)
_CLEARED = int(Treatment.Cleared)

FILTERED, PRIOR = 0, 1
COUPLINGS = {"filtered": FILTERED, "prior": PRIOR}


class ParticleDegeneracyError(FloatingPointError):
    """All particle weights vanished at some time step."""


# ---------------------------------------------------------------------------
# Kalman filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearGaussianSpec:
    """``X_t = A X_{t-1} + B u_t + e_t``, ``Y_t = C X_t + v_t``.

    ``x0``/``P0`` describe the state before the first observation time; the
    filter extrapolates once before using the first observation.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R", "P0"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)))
        n = self.x0.shape[0]
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.P0.shape != (n, n):
            raise ValueError("A, Q and P0 must be n x n")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B must have n rows and C n columns")
        m = self.C.shape[0]
        if self.R.shape != (m, m):
            raise ValueError("R must be m x m")
        for name in ("Q", "R", "P0"):
            M = getattr(self, name)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semi-definite")

    @property
    def state_dim(self) -> int:
        return self.x0.shape[0]


class KalmanResult(NamedTuple):
    means: np.ndarray
    covs: np.ndarray
    loglik: float


def kalman_filter(spec: LinearGaussianSpec, obs, inputs=None, masks=None) -> KalmanResult:
    """Filtered means/covariances and the exact log-likelihood.

    ``obs`` is a sequence of observation vectors, with ``None`` for times with
    no observation.  ``masks`` optionally marks which components of each
    vector are present.  ``inputs`` defaults to a constant unit input.
    """
    T = len(obs)
    n = spec.state_dim
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    x, P = spec.x0.copy(), spec.P0.copy()
    loglik = 0.0
    for t in range(T):
        u = np.ones(spec.B.shape[1]) if inputs is None else np.atleast_1d(inputs[t])
        x = spec.A @ x + spec.B @ u
        P = spec.A @ P @ spec.A.T + spec.Q
        y = obs[t]
        if y is not None:
            y = np.atleast_1d(np.asarray(y, float))
            keep = np.ones(y.shape[0], bool) if masks is None or masks[t] is None else np.asarray(masks[t], bool)
            if keep.any():
                C = spec.C[keep]
                R = spec.R[np.ix_(keep, keep)]
                S = C @ P @ C.T + R + _JITTER * np.eye(C.shape[0])
                try:
                    cho = np.linalg.cholesky(S)
                except np.linalg.LinAlgError:
                    raise np.linalg.LinAlgError(f"singular innovation covariance at t={t}") from None
                v = y[keep] - C @ x
                w = np.linalg.solve(cho, v)
                loglik += -0.5 * (len(v) * _LOG_2PI + w @ w) - np.log(np.diag(cho)).sum()
                K = np.linalg.solve(S, C @ P).T
                x = x + K @ v
                P = (np.eye(n) - K @ C) @ P
                P = 0.5 * (P + P.T)
        means[t], covs[t] = x, P
    return KalmanResult(means, covs, float(loglik))


@njit(cache=True, error_model="numpy")
def _crop_system(site, th):
    """Log-space crop system: (A, b, Q, m0, P0, obs_columns, r_diag)."""
    n = 3 if site == _TARLEE else 4
    A = np.zeros((n, n))
    b = np.zeros(n)
    Q = np.zeros((n, n))
    m0 = np.zeros(n)
    P0 = np.zeros((n, n))
    cols = np.zeros(n, dtype=np.int64)
    rdiag = np.zeros(n)
    # wheat pair (grain, total) at rows 0, 1
    mu, rho, sg, sw = th[_MU_GW], th[_RHO_GW], th[_S2_GW], th[_S2_W]
    lh = math.log(th[_H_W])
    A[0, 0] = rho
    A[1, 0] = rho
    b[0] = mu * (1.0 - rho)
    b[1] = lh + mu * (1.0 - rho)
    Q[0, 0] = sg
    Q[0, 1] = sg
    Q[1, 0] = sg
    Q[1, 1] = sg + sw
    v = sg / (1.0 - rho * rho)
    m0[0] = mu
    m0[1] = lh + mu
    P0[0, 0] = v
    P0[0, 1] = v
    P0[1, 0] = v
    P0[1, 1] = v + sw
    cols[0] = 1
    cols[1] = 2
    rdiag[0] = th[_E_GW]
    rdiag[1] = th[_E_W]
    if site == _TARLEE:
        mu, rho, sp = th[_MU_P], th[_RHO_P], th[_S2_P]
        A[2, 2] = rho
        b[2] = mu * (1.0 - rho)
        Q[2, 2] = sp
        m0[2] = mu
        P0[2, 2] = sp / (1.0 - rho * rho)
        cols[2] = 3
        rdiag[2] = th[_E_P]
    else:
        mu, rho, sg, ss = th[_MU_GS], th[_RHO_GS], th[_S2_GS], th[_S2_S]
        lh = math.log(th[_H_S])
        A[2, 2] = rho
        A[3, 2] = rho
        b[2] = mu * (1.0 - rho)
        b[3] = lh + mu * (1.0 - rho)
        Q[2, 2] = sg
        Q[2, 3] = sg
        Q[3, 2] = sg
        Q[3, 3] = sg + ss
        v = sg / (1.0 - rho * rho)
        m0[2] = mu
        m0[3] = lh + mu
        P0[2, 2] = v
        P0[2, 3] = v
        P0[3, 2] = v
        P0[3, 3] = v + ss
        cols[2] = 4
        cols[3] = 5
        rdiag[2] = th[_E_GS]
        rdiag[3] = th[_E_S]
    return A, b, Q, m0, P0, cols, rdiag


def crop_lgss(spec: ModelSpec, theta) -> LinearGaussianSpec:
    """Linear-Gaussian form of the log-scale crop sub-model.

    State order is ``spec.crop_states``; the total-dry-matter rows are
    re-expressed through the previous grain state, so their process noise is
    correlated with the grain noise.  ``x0``/``P0`` is the stationary law,
    which extrapolation leaves unchanged.
    """
    th = theta.as_array() if isinstance(theta, ParameterVector) else ParameterVector(theta).as_array()
    A, b, Q, m0, P0, _, rdiag = _crop_system(int(spec.site), th)
    n = len(m0)
    return LinearGaussianSpec(A=A, B=b.reshape(n, 1), C=np.eye(n), Q=Q, R=np.diag(rdiag), x0=m0, P0=P0)


@njit(cache=True, error_model="numpy")
def _chol_psd(P, L):
    n = P.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for j in range(n):
        s = P[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            continue
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = P[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d


@njit(cache=True, error_model="numpy")
def _crop_kf(site, th, y, present, means, chols, incr):
    """Crop Kalman filter on log observations with sequential scalar updates.

    Writes filtered means, Cholesky factors of filtered covariances and the
    per-time log-likelihood increments (including the log-normal Jacobian).
    """
    A, b, Q, m0, P0, cols, rdiag = _crop_system(site, th)
    n = m0.shape[0]
    T = y.shape[0]
    x = m0.copy()
    P = P0.copy()
    total = 0.0
    for t in range(T):
        if t > 0:
            x = A @ x + b
            P = A @ P @ A.T + Q
        lt = 0.0
        for j in range(n):
            col = cols[j]
            if not present[t, col]:
                continue
            ly = math.log(y[t, col])
            S = P[j, j] + rdiag[j] + _JITTER
            v = ly - x[j]
            lt += -0.5 * (_LOG_2PI + math.log(S) + v * v / S) - ly
            K = P[:, j] / S
            x = x + K * v
            Pj = P[j, :].copy()
            for r in range(n):
                for c in range(n):
                    P[r, c] -= K[r] * Pj[c]
        for r in range(n):
            for c in range(r + 1, n):
                s = 0.5 * (P[r, c] + P[c, r])
                P[r, c] = s
                P[c, r] = s
        means[t] = x
        _chol_psd(P, chols[t])
        incr[t] = lt
        total += lt
    return total


# ---------------------------------------------------------------------------
# resampling and random banks
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def _systematic(w, u, out):
    N = w.shape[0]
    # rounding can leave the cumulative sum just below 1; never step past the
    # last particle with positive weight
    last = N - 1
    while last > 0 and w[last] == 0.0:
        last -= 1
    j = 0
    cum = w[0]
    for k in range(N):
        thr = (u + k) / N
        while thr >= cum and j < last:
            j += 1
            cum += w[j]
        out[k] = j


def systematic_resample(weights, v: float) -> np.ndarray:
    """Ancestor indices from systematic resampling with offset ``v`` in [0, 1)."""
    w = np.asarray(weights, dtype=float)
    if not 0.0 <= v < 1.0:
        raise ValueError("v must lie in [0, 1)")
    total = w.sum()
    if not total > 0:
        raise ParticleDegeneracyError("all weights are zero")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {total}, expected 1")
    out = np.empty(w.shape[0], dtype=np.int64)
    _systematic(w, float(v), out)
    return out


@njit(cache=True, error_model="numpy")
def _phi(x):
    u = 0.5 * math.erfc(-x / math.sqrt(2.0))
    return min(u, 1.0 - 1e-16)


@dataclass(frozen=True)
class RandomBank:
    """Auxiliary random numbers that make a particle filter deterministic.

    ``U`` holds standard normals for state propagation, shape ``(..., T, N, d)``.
    ``V`` holds the resampling offsets in Gaussian form, shape ``(..., T)`` (or
    ``T + 1`` when one extra draw selects the reported trajectory); the
    uniforms actually used are ``Phi(V)``.
    """

    U: np.ndarray
    V: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, u_shape, v_shape) -> "RandomBank":
        return cls(rng.standard_normal(u_shape), rng.standard_normal(v_shape))

    def uniforms(self) -> np.ndarray:
        return np.minimum(ndtr(self.V), np.nextafter(1.0, 0.0))

    def correlated(self, tau: float, rng: np.random.Generator) -> "RandomBank":
        """``tau * self + sqrt(1 - tau^2) * xi`` with fresh normals ``xi``."""
        s = math.sqrt(max(0.0, 1.0 - tau * tau))
        xu = rng.standard_normal(self.U.shape)
        xv = rng.standard_normal(self.V.shape)
        if s == 0.0:
            return RandomBank(self.U, self.V)
        return RandomBank(tau * self.U + s * xu, tau * self.V + s * xv)


# ---------------------------------------------------------------------------
# generic particle filters
# ---------------------------------------------------------------------------

class ParticleModel(Protocol):
    """Hooks used by the generic particle filters.

    Particles are ``(N, D)`` arrays; ``u`` is an ``(N, noise_dim)`` block of
    standard normals.
    """

    noise_dim: int

    def initial(self, u: np.ndarray) -> np.ndarray: ...
    def propagate(self, t: int, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...
    def log_weight(self, t: int, x: np.ndarray, y) -> np.ndarray: ...
    def sort_key(self, x: np.ndarray) -> np.ndarray: ...


def _log_mean_weights(lw):
    m = np.max(lw)
    if not np.isfinite(m):
        return -np.inf, None
    w = np.exp(lw - m)
    s = w.sum()
    return m + math.log(s / lw.shape[0]), w / s


def bootstrap_pf(model: ParticleModel, obs, n_particles: int, rng: np.random.Generator):
    """Bootstrap particle filter with multinomial resampling at every step.

    Returns ``(loglik, particles)``.  Times with ``obs[t] is None`` propagate
    without weighting.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    x = model.initial(rng.standard_normal((n_particles, model.noise_dim)))
    total = 0.0
    for t, y in enumerate(obs):
        if t > 0:
            x = model.propagate(t, x, rng.standard_normal((n_particles, model.noise_dim)))
        if y is None:
            continue
        lt, w = _log_mean_weights(model.log_weight(t, x, y))
        if w is None:
            raise ParticleDegeneracyError(f"all particle weights are zero at t={t}")
        total += lt
        x = x[rng.choice(n_particles, size=n_particles, p=w)]
    return total, x


def fixed_random_pf(model: ParticleModel, obs, bank: RandomBank) -> float:
    """Particle filter driven entirely by ``bank`` (sorted systematic resampling).

    ``bank.U`` has shape ``(T, N, noise_dim)`` and ``bank.V`` at least ``T``
    entries.  The result is a deterministic function of the model, ``obs``
    and the bank.
    """
    T, N = bank.U.shape[:2]
    if len(obs) != T:
        raise ValueError(f"bank horizon {T} does not match {len(obs)} observations")
    v = bank.uniforms()
    x = model.initial(bank.U[0])
    total = 0.0
    idx = np.empty(N, dtype=np.int64)
    for t in range(T):
        if t > 0:
            x = model.propagate(t, x, bank.U[t])
        if obs[t] is None:
            continue
        x = x[np.argsort(model.sort_key(x), kind="mergesort")]
        lt, w = _log_mean_weights(model.log_weight(t, x, obs[t]))
        if w is None:
            raise ParticleDegeneracyError(f"all particle weights are zero at t={t}")
        total += lt
        _systematic(w, float(v[t]), idx)
        x = x[idx]
    return total


class LinearGaussianParticleModel:
    """Particle-filter hooks for a :class:`LinearGaussianSpec` (constant input)."""

    def __init__(self, spec: LinearGaussianSpec):
        self.spec = spec
        self.noise_dim = spec.state_dim
        self._lq = np.linalg.cholesky(spec.Q + _JITTER * np.eye(spec.state_dim))
        self._l0 = np.linalg.cholesky(spec.A @ spec.P0 @ spec.A.T + spec.Q + _JITTER * np.eye(spec.state_dim))
        self._b = spec.B @ np.ones(spec.B.shape[1])
        self._rinv = np.linalg.inv(spec.R)
        self._rlogdet = np.linalg.slogdet(spec.R)[1]

    def initial(self, u):
        m = self.spec.A @ self.spec.x0 + self._b
        return m + u @ self._l0.T

    def propagate(self, t, x, u):
        return x @ self.spec.A.T + self._b + u @ self._lq.T

    def log_weight(self, t, x, y):
        r = np.atleast_1d(y) - x @ self.spec.C.T
        q = np.einsum("ni,ij,nj->n", r, self._rinv, r)
        return -0.5 * (r.shape[1] * _LOG_2PI + self._rlogdet + q)

    def sort_key(self, x):
        return x.sum(axis=1)


# ---------------------------------------------------------------------------
# soil-carbon RBPF
# ---------------------------------------------------------------------------

def _make_pf_kernel(POOLS, SITE):
    """Carbon particle filter compiled for one (pools, site) pair.

    Both are compile-time constants here, which lets the compiler drop the
    branches of the generic transition kernels from the particle loop.
    """

    @njit(cache=True, error_model="numpy")
    def pf_field(th, xc0, treat, y, present, crop_mean, crop_chol, coupling,
                  U, V, want_path, path, incr):
        """Fixed-random-number particle filter over one field's carbon pools.

        Returns the log-likelihood estimate (``-inf`` if every particle is
        rejected).  ``incr`` receives per-time increments; ``path`` (natural
        scale, crops then carbon) the ancestral path of one final particle.
        """
        pools, site = POOLS, SITE
        T, N = U.shape[0], U.shape[1]
        nc = xc0.shape[0]
        ng = crop_mean.shape[1]
        cn = 4 if pools == 5 else (2 if pools == 3 else 1)
        co = carbon_coefs(pools, th)
        carb = np.empty((N, nc))
        crop = np.empty((N, ng))
        nxt_c = np.empty((N, nc))
        nxt_g = np.empty((N, ng))
        lw = np.empty(N)
        w = np.empty(N)
        idx = np.empty(N, dtype=np.int64)
        key = np.empty(N)
        slots = np.empty(4, dtype=np.int64)
        ly = np.empty(4)
        ivar = np.empty(4)
        hist_c = np.empty((T if want_path else 0, N, nc))
        hist_g = np.empty((T if want_path else 0, N, ng))
        anc = np.empty((T if want_path else 0, N), dtype=np.int64)
        parent = np.arange(N)
        total = 0.0
        for t in range(T):
            tr = treat[t]
            Ut = U[t]
            if coupling == 0:
                for k in range(N):
                    for r in range(ng):
                        s = crop_mean[t, r]
                        for c in range(r + 1):
                            s += crop_chol[t, r, c] * Ut[k, cn + c]
                        crop[k, r] = s
            else:
                for k in range(N):
                    if t == 0:
                        crop_init_row(site, Ut, k, cn, th, crop, k)
                    else:
                        crop_step_row(site, crop, k, Ut, k, cn, th, nxt_g, k)
                if t > 0:
                    crop, nxt_g = nxt_g, crop
            if t == 0:
                for k in range(N):
                    for j in range(nc):
                        carb[k, j] = xc0[j]
            else:
                for k in range(N):
                    ic = input_row(site, tr, crop, k, th)
                    carbon_step_row(pools, carb, k, ic, Ut, k, th, co, nxt_c, k)
                carb, nxt_c = nxt_c, carb
            for k in range(N):
                parent[k] = k

            n_obs, const = carbon_obs_prep(pools, y[t], present[t], th, slots, ly, ivar)
            lt = 0.0
            if n_obs > 0 or pools == 3:
                for k in range(N):
                    key[k] = toc_row(carb, k)
                perm = np.argsort(key, kind="mergesort")
                mx = -np.inf
                for k in range(N):
                    p = perm[k]
                    v = carbon_obs_row(pools, carb, p, slots, ly, ivar, n_obs)
                    if pools == 3 and not bio_ok_row(carb, p):
                        v = -np.inf
                    lw[k] = v
                    if v > mx:
                        mx = v
                if mx == -np.inf:
                    incr[t] = -np.inf
                    return -np.inf
                s = 0.0
                for k in range(N):
                    w[k] = math.exp(lw[k] - mx)
                    s += w[k]
                inv = 1.0 / s
                for k in range(N):
                    w[k] *= inv
                lt = const + mx + math.log(s / N)
                _systematic(w, _phi(V[t]), idx)
                for k in range(N):
                    p = perm[idx[k]]
                    parent[k] = p
                    for j in range(nc):
                        nxt_c[k, j] = carb[p, j]
                    for j in range(ng):
                        nxt_g[k, j] = crop[p, j]
                carb, nxt_c = nxt_c, carb
                crop, nxt_g = nxt_g, crop
            incr[t] = lt
            total += lt
            if want_path:
                for k in range(N):
                    anc[t, k] = parent[k]
                    for j in range(nc):
                        hist_c[t, k, j] = carb[k, j]
                    for j in range(ng):
                        hist_g[t, k, j] = crop[k, j]
        if want_path:
            k = min(int(_phi(V[T]) * N), N - 1)
            for t in range(T - 1, -1, -1):
                for j in range(ng):
                    path[t, j] = math.exp(hist_g[t, k, j])
                for j in range(nc):
                    path[t, ng + j] = hist_c[t, k, j]
                k = anc[t, k]
        return total

    return pf_field


_KERNELS: dict = {}


def _pf_kernel(pools: int, site: int):
    key = (int(pools), int(site))
    if key not in _KERNELS:
        _KERNELS[key] = _make_pf_kernel(*key)
    return _KERNELS[key]


class RbpfResult(NamedTuple):
    loglik: float
    kf_increments: np.ndarray   # (fields, T)
    pf_increments: np.ndarray   # (fields, T)
    paths: np.ndarray | None    # (fields, T, D) natural scale


class PreparedData(NamedTuple):
    """Dataset arrays restricted to the observation kinds a model uses."""

    values: np.ndarray
    present: np.ndarray
    carbon_present: np.ndarray
    treat: np.ndarray


def prepare_data(spec: ModelSpec, data: Dataset) -> PreparedData:
    if Site(data.site) != spec.site:
        raise ValueError(f"dataset site {data.site.name} does not match model site {spec.site.name}")
    sched = data.schedule
    for f in range(len(data.fields)):
        for year, tr in sched[f].items():
            if not spec.allows(tr):
                raise ValueError(f"treatment {tr.name} (field {f + 1}, {year}) invalid for {spec.site.name}")
    other_site = {"P"} if spec.site == Site.BRIGALOW else {"GS", "S"}
    clash = data.kinds() & other_site
    if clash:
        raise ValueError(f"observation kinds {sorted(clash)} do not exist at {spec.site.name}")
    values, present = data.arrays()
    used = np.zeros(present.shape[-1], dtype=bool)
    for k in spec.obs_kinds:
        used[OBS_INDEX[k]] = True
    present = present & used
    treat = sched.codes(list(data.years))
    carbon_present = present.copy()
    for k in CROP_KINDS:
        carbon_present[..., OBS_INDEX[k]] = False
    return PreparedData(values, present, carbon_present, treat)


def bank_shape(spec: ModelSpec, horizon: int, n_particles: int):
    """``(U shape, V shape)`` of the random bank for one RBPF evaluation."""
    d = CARBON_NOISE_DIM[spec.pools] + len(spec.crop_states)
    return (spec.fields, horizon, n_particles, d), (spec.fields, horizon + 1)


def rbpf_evaluate(spec: ModelSpec, prepared: PreparedData, theta_full: np.ndarray,
                  bank: RandomBank, coupling: int = FILTERED, want_path: bool = False) -> RbpfResult:
    F, T = prepared.values.shape[:2]
    xc0 = initial_carbon(spec, theta_full)
    paths = np.empty((F, T, len(spec.state_names)))
    incr_kf = np.zeros((F, T))
    incr_pf = np.zeros((F, T))
    pf_field = _pf_kernel(spec.pools, spec.site)
    site = int(spec.site)
    ng = len(spec.crop_states)
    means = np.empty((T, ng))
    chols = np.empty((T, ng, ng))
    total = 0.0
    for f in range(F):
        total += _crop_kf(site, theta_full, prepared.values[f], prepared.present[f],
                          means, chols, incr_kf[f])
        ll = pf_field(theta_full, xc0[f], prepared.treat[f], prepared.values[f],
                      prepared.carbon_present[f], means, chols, coupling, bank.U[f], bank.V[f],
                      want_path, paths[f], incr_pf[f])
        if ll == -np.inf:
            total = -np.inf
            break
        total += ll
    return RbpfResult(float(total), incr_kf, incr_pf, paths if want_path else None)


def rbpf_loglik(spec: ModelSpec, data: Dataset, theta, bank: RandomBank,
                coupling: str = "filtered") -> float:
    """Rao-Blackwellised log-likelihood estimate summed over the fields.

    Crop observations are scored exactly by the Kalman filter; carbon
    observations by the fixed-random-number particle filter, whose particles
    take their crop values from the Kalman filtering distribution
    (``coupling="filtered"``) or from the crop prior dynamics
    (``coupling="prior"``).  Returns ``-inf`` when every particle of some
    field is rejected.
    """
    theta = theta if isinstance(theta, ParameterVector) else ParameterVector(theta)
    theta.validate(spec)
    prepared = prepare_data(spec, data)
    u_shape, v_shape = bank_shape(spec, data.horizon, bank.U.shape[2])
    if bank.U.shape != u_shape or bank.V.shape != v_shape:
        raise ValueError(f"bank shapes {bank.U.shape}/{bank.V.shape} do not match {u_shape}/{v_shape}")
    return rbpf_evaluate(spec, prepared, theta.as_array(), bank, COUPLINGS[coupling]).loglik
