"""Domain types shared across the package.

Everything here is an immutable value object.  Numerical kernels elsewhere
work on plain arrays; these types carry names, years and validation.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np


class Pools(enum.IntEnum):
    ONE = 1
    TWO = 2
    THREE = 3
    FIVE = 5


class Site(enum.IntEnum):
    TARLEE = 0
    BRIGALOW = 1


class Treatment(enum.IntEnum):
    WheatForGrain = 0
    WheatForHay = 1
    Pasture = 2
    PastureForHay = 3
    SorghumForGrain = 4
    SorghumForHay = 5
    Fallow = 6
    Cleared = 7

    @classmethod
    def parse(cls, text: str) -> "Treatment":
        key = text.strip().replace("_", "").replace(" ", "").lower()
        for member in cls:
            if member.name.lower() == key:
                return member
        raise ValueError(f"unknown treatment {text!r}")


PASTURE_TREATMENTS = frozenset({Treatment.Pasture, Treatment.PastureForHay})
SORGHUM_TREATMENTS = frozenset({Treatment.SorghumForGrain, Treatment.SorghumForHay})

START_YEAR = {Site.TARLEE: 1978, Site.BRIGALOW: 1981}

# Observation kinds, in the column order used by every internal array.
OBS_KINDS = ("TOC", "GW", "W", "P", "GS", "S", "IOM", "H", "POC")
OBS_INDEX = {k: i for i, k in enumerate(OBS_KINDS)}
CROP_KINDS = ("GW", "W", "P", "GS", "S")

CROP_STATES = {Site.TARLEE: ("GW", "W", "P"), Site.BRIGALOW: ("GW", "W", "GS", "S")}
CARBON_STATES = {
    Pools.ONE: ("C",),
    Pools.TWO: ("C", "IOM"),
    Pools.THREE: ("C", "IOM", "B"),
    Pools.FIVE: ("D", "R", "H", "B", "IOM"),
}
# Number of Gaussian process-noise terms driving the carbon pools.
CARBON_NOISE_DIM = {Pools.ONE: 1, Pools.TWO: 1, Pools.THREE: 2, Pools.FIVE: 4}

# Maximum BIO share of total SOC in the three-pool model.
BIO_FRACTION_CAP = 0.05


@dataclass(frozen=True)
class ModelSpec:
    """Pool structure plus site variant."""

    pools: Pools
    site: Site
    fields: int = 3
    dt: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pools", Pools(self.pools))
        object.__setattr__(self, "site", Site(self.site))
        if self.fields != 3:
            raise ValueError("both sites have exactly 3 fields")
        if self.dt != 1.0:
            raise ValueError("only annual steps (dt=1) are supported")

    @property
    def t0(self) -> int:
        return START_YEAR[self.site]

    @property
    def crop_states(self) -> tuple[str, ...]:
        return CROP_STATES[self.site]

    @property
    def carbon_states(self) -> tuple[str, ...]:
        return CARBON_STATES[self.pools]

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.crop_states + self.carbon_states

    @property
    def crop_obs_kinds(self) -> tuple[str, ...]:
        return self.crop_states

    @property
    def carbon_obs_kinds(self) -> tuple[str, ...]:
        if self.pools == Pools.ONE:
            return ("TOC",)
        if self.pools == Pools.FIVE:
            return ("TOC", "IOM", "H", "POC")
        return ("TOC", "IOM")

    @property
    def obs_kinds(self) -> tuple[str, ...]:
        return tuple(k for k in OBS_KINDS if k in self.crop_obs_kinds + self.carbon_obs_kinds)

    def allows(self, treatment: Treatment) -> bool:
        if treatment in PASTURE_TREATMENTS:
            return self.site == Site.TARLEE
        if treatment in SORGHUM_TREATMENTS:
            return self.site == Site.BRIGALOW
        return True

    @classmethod
    def parse(cls, pools, site) -> "ModelSpec":
        """Build from loose user input such as ``("three", "tarlee")``."""
        names = {"one": 1, "two": 2, "three": 3, "five": 5}
        if isinstance(pools, str):
            pools = names.get(pools.lower(), None) or int(pools)
        if isinstance(site, str):
            site = Site[site.upper()]
        return cls(Pools(pools), Site(site))


class ManagementSchedule:
    """Per-field mapping ``year -> Treatment``."""

    def __init__(self, per_field):
        self._fields = tuple(MappingProxyType(dict(m)) for m in per_field)

    def __len__(self):
        return len(self._fields)

    def __getitem__(self, i) -> Mapping:
        return self._fields[i]

    def __eq__(self, other):
        return isinstance(other, ManagementSchedule) and all(
            dict(a) == dict(b) for a, b in zip(self._fields, other._fields)
        ) and len(self) == len(other)

    def treatment(self, field: int, year: int) -> Treatment:
        try:
            return self._fields[field][year]
        except KeyError:
            raise KeyError(f"no treatment for field {field + 1} in {year}") from None

    def check_coverage(self, first_year: int, last_year: int) -> None:
        for i, m in enumerate(self._fields):
            for y in range(first_year, last_year + 1):
                if y not in m:
                    raise ValueError(f"schedule gap: field {i + 1} has no treatment in {y}")

    def codes(self, years) -> np.ndarray:
        """Integer treatment codes, shape ``(fields, len(years))``.

        Years missing from the schedule (only allowed for the initial year)
        are coded as Fallow.
        """
        out = np.full((len(self._fields), len(years)), int(Treatment.Fallow), dtype=np.int64)
        for i, m in enumerate(self._fields):
            for j, y in enumerate(years):
                if y in m:
                    out[i, j] = int(m[y])
        return out

    def restricted(self, first_year: int, last_year: int) -> "ManagementSchedule":
        return ManagementSchedule(
            {y: t for y, t in m.items() if first_year <= y <= last_year} for m in self._fields
        )


def _alternating_wheat_fallow(year: int) -> Treatment:
    return Treatment.WheatForGrain if year % 2 == 1 else Treatment.Fallow


def tarlee_schedule(last_year: int = 1997) -> ManagementSchedule:
    """Tarlee management history (three fields), 1979 onward.

    Mixed descriptions are mapped to single treatments: wheat/fallow rotations
    alternate wheat-for-grain (odd years) with fallow (even years), and
    wheat/pasture rotations use the pasture formulas.  Years after 1997 repeat
    the main rotation of each field.
    """
    f1, f2, f3 = {}, {}, {}
    for y in range(1979, last_year + 1):
        if y <= 1997:
            f1[y] = Treatment.WheatForHay if y in (1988, 1989) else Treatment.WheatForGrain
            f2[y] = Treatment.WheatForHay if y == 1989 else _alternating_wheat_fallow(y)
            f3[y] = Treatment.PastureForHay if y in (1988, 1989) else Treatment.Pasture
            if y == 1997:
                f1[y] = f2[y] = f3[y] = Treatment.Fallow
        else:
            f1[y] = Treatment.WheatForGrain
            f2[y] = _alternating_wheat_fallow(y)
            f3[y] = Treatment.Pasture
    return ManagementSchedule([f1, f2, f3])


def brigalow_schedule(last_year: int = 2000) -> ManagementSchedule:
    """Brigalow management history (identical for the three soil types).

    Years not covered by the published history (2000 onward) are fallow.
    """
    sorghum = {1984, 1995, 1997, 1999}
    wheat = set(range(1985, 1993)) | {1994, 1996, 1998}
    m = {}
    for y in range(1982, last_year + 1):
        if y == 1982:
            m[y] = Treatment.Cleared
        elif y in sorghum:
            m[y] = Treatment.SorghumForGrain
        elif y in wheat:
            m[y] = Treatment.WheatForGrain
        else:
            m[y] = Treatment.Fallow
    return ManagementSchedule([m, dict(m), dict(m)])


def default_schedule(site: Site, last_year: int) -> ManagementSchedule:
    return tarlee_schedule(last_year) if Site(site) == Site.TARLEE else brigalow_schedule(last_year)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

PARAM_NAMES = (
    "K_C", "K_D", "K_R", "K_H", "K_B",
    "pi_CB", "pi_BC", "pi_BB", "pi_DH", "pi_RH", "pi_HH", "pi_BH", "pi_DB", "pi_RB", "pi_HB",
    "P_D",
    "c", "r_W", "r_S", "r_P", "p", "h_W", "h_S",
    "mu_GW", "mu_GS", "mu_P", "rho_GW", "rho_GS", "rho_P",
    "s2_eta", "s2_etaC", "s2_etaB", "s2_etaD", "s2_etaR", "s2_etaH",
    "s2_GW", "s2_GS", "s2_W", "s2_S", "s2_P",
    "s2_eps_TOC", "s2_eps_POC", "s2_eps_GW", "s2_eps_GS", "s2_eps_W", "s2_eps_S",
    "s2_eps_P", "s2_eps_IOM", "s2_eps_H",
    "X_C0_1", "X_C0_2", "X_C0_3", "X_IOM",
)
PARAM_INDEX = {n: i for i, n in enumerate(PARAM_NAMES)}

OBS_VARIANCES = {
    "s2_eps_TOC": 0.025,
    "s2_eps_POC": 0.9,
    "s2_eps_GW": 0.023,
    "s2_eps_GS": 0.023,
    "s2_eps_W": 0.133,
    "s2_eps_S": 0.133,
    "s2_eps_P": 0.067,
    "s2_eps_IOM": 0.01,
    "s2_eps_H": 0.1,
}

_PROPORTIONS = {n for n in PARAM_NAMES if n.startswith("pi_")} | {"P_D", "c", "p"}
_CORRELATIONS = {"rho_GW", "rho_GS", "rho_P"}
_UNBOUNDED = {"mu_GW", "mu_GS", "mu_P"}

# Outgoing transfer proportions of each decaying pool; the remainder of the
# decayed mass is emitted as CO2.
OUTGOING = {
    Pools.ONE: {"C": ()},
    Pools.TWO: {"C": ()},
    Pools.THREE: {"C": ("pi_CB",), "B": ("pi_BC", "pi_BB")},
    Pools.FIVE: {
        "D": ("pi_DH", "pi_DB"),
        "R": ("pi_RH", "pi_RB"),
        "H": ("pi_HH", "pi_HB"),
        "B": ("pi_BH", "pi_BB"),
    },
}
DECAY_RATE = {"C": "K_C", "D": "K_D", "R": "K_R", "H": "K_H", "B": "K_B"}

_CROP_PARAMS = {
    Site.TARLEE: ("c", "r_W", "r_P", "p", "h_W", "mu_GW", "mu_P", "rho_GW", "rho_P",
                  "s2_GW", "s2_W", "s2_P"),
    Site.BRIGALOW: ("c", "r_W", "r_S", "p", "h_W", "h_S", "mu_GW", "mu_GS", "rho_GW", "rho_GS",
                    "s2_GW", "s2_W", "s2_GS", "s2_S"),
}
_CARBON_PARAMS = {
    Pools.ONE: ("K_C", "s2_eta", "X_C0_1", "X_C0_2", "X_C0_3"),
    Pools.TWO: ("K_C", "s2_eta", "X_C0_1", "X_C0_2", "X_C0_3", "X_IOM"),
    Pools.THREE: ("K_C", "K_B", "pi_CB", "pi_BC", "pi_BB", "s2_etaC", "s2_etaB",
                  "X_C0_1", "X_C0_2", "X_C0_3", "X_IOM"),
    Pools.FIVE: ("K_D", "K_R", "K_H", "K_B", "P_D", "pi_DH", "pi_RH", "pi_HH", "pi_BH",
                 "pi_DB", "pi_RB", "pi_HB", "pi_BB", "s2_etaD", "s2_etaR", "s2_etaH", "s2_etaB",
                 "X_C0_1", "X_C0_2", "X_C0_3", "X_IOM"),
}


def sampled_parameters(spec: ModelSpec) -> tuple[str, ...]:
    """Names of the free (sampled) parameters of a model, in canonical order."""
    return _CARBON_PARAMS[spec.pools] + _CROP_PARAMS[spec.site]


class ParameterError(ValueError):
    pass


class ParameterVector(Mapping):
    """Immutable name -> value mapping of static parameters.

    Fixed observation variances are always present; unspecified free
    parameters default to NaN and are rejected by :meth:`validate` when the
    model needs them.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, float] | None = None, **kwargs):
        vals = dict(OBS_VARIANCES)
        vals.update(values or {})
        vals.update(kwargs)
        unknown = set(vals) - set(PARAM_INDEX)
        if unknown:
            raise ParameterError(f"unknown parameters: {sorted(unknown)}")
        arr = np.full(len(PARAM_NAMES), np.nan)
        for k, v in vals.items():
            arr[PARAM_INDEX[k]] = float(v)
        arr.flags.writeable = False
        self._values = arr

    def __getitem__(self, name):
        v = self._values[PARAM_INDEX[name]]
        if np.isnan(v):
            raise KeyError(name)
        return float(v)

    def __iter__(self):
        return (n for n, v in zip(PARAM_NAMES, self._values) if not np.isnan(v))

    def __len__(self):
        return int(np.count_nonzero(~np.isnan(self._values)))

    def __repr__(self):
        return f"ParameterVector({dict(self)})"

    def as_array(self) -> np.ndarray:
        """Full-layout float array (NaN where unset), indexed by PARAM_INDEX."""
        return self._values

    def replace(self, **kwargs) -> "ParameterVector":
        d = dict(self)
        d.update(kwargs)
        return ParameterVector(d)

    @classmethod
    def from_array(cls, names, values) -> "ParameterVector":
        return cls(dict(zip(names, map(float, values))))

    def violations(self, spec: ModelSpec) -> list[str]:
        """Human-readable range violations for the parameters ``spec`` uses."""
        out = []
        for name in sampled_parameters(spec) + tuple(OBS_VARIANCES):
            v = self._values[PARAM_INDEX[name]]
            if not math.isfinite(v):
                out.append(f"{name} is missing or not finite")
            elif name in _CORRELATIONS:
                if not -1.0 < v < 1.0:
                    out.append(f"{name}={v} outside (-1, 1)")
            elif name in _PROPORTIONS:
                if not 0.0 <= v <= 1.0:
                    out.append(f"{name}={v} outside [0, 1]")
            elif name not in _UNBOUNDED and v < 0.0:
                out.append(f"{name}={v} is negative")
        for pool, outs in OUTGOING[spec.pools].items():
            total = sum(self._values[PARAM_INDEX[n]] for n in outs)
            if total > 1.0 + 1e-12:
                out.append(f"outgoing proportions of pool {pool} sum to {total} > 1")
        return out

    def validate(self, spec: ModelSpec) -> "ParameterVector":
        bad = self.violations(spec)
        if bad:
            raise ParameterError("; ".join(bad))
        return self


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSeries:
    """Sparse observations of one field plus its treatment history.

    ``observations`` maps year -> {kind: value}; absent entries are missing.
    """

    observations: Mapping[int, Mapping[str, float]]
    schedule: Mapping[int, Treatment]

    def __post_init__(self):
        obs = {}
        for year, row in self.observations.items():
            clean = {}
            for kind, value in row.items():
                if kind not in OBS_INDEX:
                    raise ValueError(f"unknown observation kind {kind!r}")
                value = float(value)
                if not value > 0.0:
                    raise ValueError(f"non-positive {kind} observation {value} in {year}")
                clean[kind] = value
            if clean:
                obs[int(year)] = MappingProxyType(clean)
        object.__setattr__(self, "observations", MappingProxyType(dict(sorted(obs.items()))))
        object.__setattr__(self, "schedule", MappingProxyType(dict(self.schedule)))

    def __eq__(self, other):
        return (isinstance(other, FieldSeries)
                and {y: dict(r) for y, r in self.observations.items()}
                == {y: dict(r) for y, r in other.observations.items()}
                and dict(self.schedule) == dict(other.schedule))

    def kinds(self) -> set[str]:
        return {k for row in self.observations.values() for k in row}

    def count(self) -> int:
        return sum(len(r) for r in self.observations.values())


@dataclass(frozen=True)
class Dataset:
    """Three field series on a common yearly grid ``t0 .. last_year``."""

    site: Site
    fields: tuple[FieldSeries, ...]
    t0: int
    last_year: int

    def __post_init__(self):
        object.__setattr__(self, "site", Site(self.site))
        object.__setattr__(self, "fields", tuple(self.fields))
        if self.last_year <= self.t0:
            raise ValueError("horizon must cover at least two years")
        for i, f in enumerate(self.fields):
            for y in f.observations:
                if not self.t0 <= y <= self.last_year:
                    raise ValueError(f"field {i + 1}: observation year {y} outside "
                                     f"{self.t0}..{self.last_year}")
        ManagementSchedule([f.schedule for f in self.fields]).check_coverage(self.t0 + 1, self.last_year)

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.t0, self.last_year + 1)

    @property
    def horizon(self) -> int:
        return self.last_year - self.t0 + 1

    @property
    def schedule(self) -> ManagementSchedule:
        return ManagementSchedule([f.schedule for f in self.fields])

    def kinds(self) -> set[str]:
        return set().union(*(f.kinds() for f in self.fields))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense ``(values, present)`` arrays of shape ``(fields, T, len(OBS_KINDS))``.

        Missing cells hold 1.0 in ``values``; ``present`` is the authority.
        """
        F, T = len(self.fields), self.horizon
        values = np.ones((F, T, len(OBS_KINDS)))
        present = np.zeros((F, T, len(OBS_KINDS)), dtype=np.bool_)
        for i, f in enumerate(self.fields):
            for y, row in f.observations.items():
                for kind, v in row.items():
                    values[i, y - self.t0, OBS_INDEX[kind]] = v
                    present[i, y - self.t0, OBS_INDEX[kind]] = True
        return values, present

    def truncated(self, n_times: int) -> "Dataset":
        """The first ``n_times`` years (observations and schedule)."""
        last = self.t0 + n_times - 1
        fields = tuple(
            FieldSeries({y: r for y, r in f.observations.items() if y <= last},
                        {y: t for y, t in f.schedule.items() if y <= last})
            for f in self.fields
        )
        return Dataset(self.site, fields, self.t0, last)

    def has_observations(self, year: int) -> bool:
        return any(year in f.observations for f in self.fields)


@dataclass(frozen=True)
class LatentTrajectory:
    """Latent states ``values[field, year - t0, state]``."""

    spec: ModelSpec
    t0: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.spec.fields or v.shape[2] != len(self.spec.state_names):
            raise ValueError(f"trajectory shape {v.shape} does not match {self.spec}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.values.shape[1])

    def state(self, name: str) -> np.ndarray:
        """``(fields, T)`` array of one named state."""
        return self.values[:, :, self.spec.state_names.index(name)]

    def check(self) -> list[str]:
        """Invariant violations (empty when the trajectory is valid)."""
        out = []
        if not np.all(self.values > 0):
            out.append("non-positive state")
        if "IOM" in self.spec.carbon_states:
            iom = self.state("IOM")
            if not np.all(iom == iom[:, :1]):
                out.append("IOM varies over time")
        if self.spec.pools == Pools.THREE:
            toc = total_soc_array(self.values, self.spec)
            if np.any(self.state("B") > BIO_FRACTION_CAP * toc):
                out.append("BIO exceeds 5% of TOC")
        return out


def total_soc_array(values: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Sum of carbon pools over the last axis of a state array."""
    nc = len(spec.crop_states)
    return values[..., nc:].sum(axis=-1)


def total_soc(traj: LatentTrajectory, spec: ModelSpec, field: int, year: int) -> float:
    """Total soil organic carbon of ``field`` (0-based) in calendar ``year``."""
    t = year - traj.t0
    if not 0 <= field < traj.values.shape[0] or not 0 <= t < traj.values.shape[1]:
        raise IndexError(f"field {field} / year {year} outside trajectory")
    row = traj.values[field, t]
    total = 0.0
    for name in spec.carbon_states:
        total += row[spec.state_names.index(name)]
    return float(total)


@dataclass(frozen=True)
class ChainOutput:
    """Thinned output of one CPM chain."""

    seed: int
    param_names: tuple[str, ...]
    theta: np.ndarray            # (S, P)
    trajectories: np.ndarray     # (S, fields, T, D)
    loglik: np.ndarray           # (S,)
    acceptance_rate: float
    iterations: int
    burn_in: int
    stride: int
    spec: ModelSpec | None = None
    t0: int | None = None
    extra: Mapping = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.theta.shape[0]

    def trajectory(self, s: int) -> LatentTrajectory:
        return LatentTrajectory(self.spec, self.t0, self.trajectories[s])

    def parameters(self, s: int) -> ParameterVector:
        return ParameterVector.from_array(self.param_names, self.theta[s])
