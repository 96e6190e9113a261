"""Command-line front end: ``soilcarbon simulate|fit|lfo|diagnose|summarize``.

Settings come from a flat ``key = value`` file (``--config``), then from
per-key flags (``--burn-in 8000``), then from ``--set key=value`` (needed
for dotted keys such as ``theta.K_C`` or ``prior.c``).  Every output
carries the master seed and a hash of the resolved settings, and reruns
with the same settings write byte-identical files.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .core import PARAM_NAMES, ChainOutput, ModelSpec, ParameterError
from .diagnostics import DEFAULT_QUANTILES, gelman_rubin, percentile_bands
from .filters import COUPLINGS, ParticleDegeneracyError
from .io import DataError, ingest, read_json, write_csv, write_dataset, write_json, write_trajectory
from .mcmc import ChainConfig, InitializationError, SoilCarbonContext, run_chains
from .priors import KINDS, Prior, PriorSet, Proposal, ProposalSet
from .selection import LfoError, elpd_lfo
from .simulator import ConstraintError, SimConfig, example_theta, simulate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    """Bad command line or configuration."""


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


# documented configuration keys; ``None`` defaults are filled from the preset
KEYS: dict[str, Key] = {
    "site": Key(str, "tarlee", "tarlee or brigalow"),
    "pools": Key(str, "one", "one, two, three or five"),
    "preset": Key(str, "full", "chain preset: full (200k/80k/30, N=500) or desk (20k/8k/30, N=200)"),
    "chains": Key(int, 4, "number of chains"),
    "iterations": Key(int, None, "MCMC iterations per chain"),
    "burn_in": Key(int, None, "burn-in iterations"),
    "stride": Key(int, None, "thinning stride"),
    "tau": Key(float, 0.99, "random-bank correlation"),
    "particles": Key(int, None, "particles per field"),
    "seed": Key(int, 0, "master seed"),
    "coupling": Key(str, "filtered", "crop values inside the particle filter: filtered or prior"),
    "proposal_scale": Key(float, 1.0, "factor applied to every proposal step"),
    "record_paths": Key(_bool, True, "store a state trajectory per kept sample"),
    "horizon": Key(int, 20, "simulate: years including the initial year"),
    "dense": Key(_bool, False, "simulate: observe every kind every year"),
    "L": Key(int, None, "lfo: first fit length (default 12 Tarlee, 13 Brigalow)"),
    "baseline": Key(int, None, "summarize: baseline year for SOC change (default first year)"),
    "t0": Key(int, None, "first year of the record (default per site)"),
    "last_year": Key(int, None, "last year of the record (default: last schedule year)"),
    "data": Key(str, None, "observation CSV (year,field,variable,value)"),
    "schedule": Key(str, None, "schedule CSV (year,field,treatment)"),
    "fit": Key(str, None, "directory written by fit (diagnose, summarize)"),
    "out": Key(str, None, "output directory"),
}
DOTTED = ("theta.", "prior.", "proposal.")
# keys that never change results and are left out of the settings hash
_UNHASHED = {"out"}


def _check_key(key: str, where: str) -> None:
    if key in KEYS:
        return
    if key.startswith(DOTTED) and key.split(".", 1)[1] in PARAM_NAMES:
        return
    raise UsageError(f"{where}: unknown key {key!r}")


def read_config(path) -> dict[str, str]:
    """Raw ``key = value`` pairs; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        _check_key(key, f"{path}:{n}")
        out[key] = value
    return out


def resolve(raw: dict[str, str]) -> dict[str, Any]:
    """Typed settings with defaults and preset values filled in."""
    cfg: dict[str, Any] = {}
    for key, spec in KEYS.items():
        if key in raw:
            try:
                cfg[key] = spec.parse(raw[key])
            except ValueError:
                raise UsageError(f"bad value for {key}: {raw[key]!r}") from None
        else:
            cfg[key] = spec.default
    if cfg["preset"] not in ("full", "desk"):
        raise UsageError(f"unknown preset {cfg['preset']!r}")
    base = ChainConfig.desk() if cfg["preset"] == "desk" else ChainConfig.full()
    for key, attr in (("iterations", "iterations"), ("burn_in", "burn_in"),
                      ("stride", "stride"), ("particles", "n_particles")):
        if cfg[key] is None:
            cfg[key] = getattr(base, attr)
    if cfg["coupling"] not in COUPLINGS:
        raise UsageError(f"coupling must be one of {sorted(COUPLINGS)}")
    if cfg["chains"] < 1:
        raise UsageError("chains must be at least 1")
    for key in sorted(raw):
        if key.startswith(DOTTED):
            cfg[key] = raw[key]
    try:
        cfg["_spec"] = ModelSpec.parse(cfg["pools"], cfg["site"])
    except (KeyError, ValueError):
        raise UsageError(f"unknown model {cfg['pools']!r} / site {cfg['site']!r}") from None
    return cfg


def settings_hash(cfg: dict[str, Any]) -> str:
    text = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg) if not k.startswith("_") and k not in _UNHASHED)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def chain_config(cfg) -> ChainConfig:
    try:
        return ChainConfig(iterations=cfg["iterations"], burn_in=cfg["burn_in"], stride=cfg["stride"],
                           tau=cfg["tau"], n_particles=cfg["particles"], seed=cfg["seed"],
                           record_paths=cfg["record_paths"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _floats(text: str, key: str) -> list[float | None]:
    out = []
    for tok in text.split():
        if tok.lower() == "none":
            out.append(None)
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise UsageError(f"{key}: {tok!r} is not a number") from None
    return out


def _prior_override(key: str, text: str) -> Prior:
    """``kind a b [lower [upper]]``, e.g. ``truncnormal 0.5 0.1 0 1``."""
    parts = text.split(None, 1)
    if not parts or parts[0] not in KINDS:
        raise UsageError(f"{key}: prior family must be one of {', '.join(KINDS)}")
    nums = _floats(parts[1] if len(parts) > 1 else "", key)
    if not 2 <= len(nums) <= 4 or None in nums[:2]:
        raise UsageError(f"{key}: expected 'kind a b [lower [upper]]'")
    try:
        return Prior(parts[0], *nums)
    except ValueError as exc:
        raise UsageError(f"{key}: {exc}") from None


def _proposal_override(key: str, text: str) -> Proposal:
    """``scale [lower [upper]]`` or ``rel:k [lower [upper]]`` (step ``|x|/k``)."""
    parts = text.split()
    if not parts:
        raise UsageError(f"{key}: empty proposal")
    bounds = _floats(" ".join(parts[1:]), key)
    if len(bounds) > 2:
        raise UsageError(f"{key}: expected 'scale [lower [upper]]'")
    head = parts[0]
    try:
        if head.startswith("rel:"):
            return Proposal(0.0, *bounds, relative=float(head[4:]))
        return Proposal(float(head), *bounds)
    except ValueError:
        raise UsageError(f"{key}: bad step {head!r}") from None


def build_context(cfg, data) -> SoilCarbonContext:
    spec = cfg["_spec"]
    priors = {k.split(".", 1)[1]: _prior_override(k, v) for k, v in cfg.items() if k.startswith("prior.")}
    props = {k.split(".", 1)[1]: _proposal_override(k, v) for k, v in cfg.items() if k.startswith("proposal.")}
    ps = PriorSet.for_spec(spec, priors)
    qs = ProposalSet.for_spec(spec, props)
    if cfg["proposal_scale"] != 1.0:
        qs = qs.scaled(cfg["proposal_scale"])
    return SoilCarbonContext(spec, data, n_particles=cfg["particles"], coupling=cfg["coupling"],
                             priors=ps, proposals=qs)


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"missing setting {k!r} (use --{k.replace('_', '-')} or the config file)")


def _outdir(cfg) -> Path:
    _need(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg) -> str:
    return f"soilcarbon {__version__} seed={cfg['seed']} config={settings_hash(cfg)}"


def _manifest(cfg, command: str, **extra) -> dict:
    public = {k: v for k, v in cfg.items() if not k.startswith("_") and k not in _UNHASHED}
    return {"command": command, "version": __version__, "seed": cfg["seed"],
            "config_hash": settings_hash(cfg), "config": public, **extra}


def _load_data(cfg):
    _need(cfg, "data", "schedule")
    data = ingest(cfg["data"], cfg["schedule"], cfg["_spec"].site, cfg["t0"], cfg["last_year"])
    inputs = {"data": _file_digest(cfg["data"]), "schedule": _file_digest(cfg["schedule"])}
    return data, inputs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg) -> None:
    spec = cfg["_spec"]
    out = _outdir(cfg)
    values = dict(example_theta(spec))
    for k, v in cfg.items():
        if k.startswith("theta."):
            try:
                values[k.split(".", 1)[1]] = float(v)
            except ValueError:
                raise UsageError(f"{k}: {v!r} is not a number") from None
    try:
        sim = SimConfig(spec, values, horizon=cfg["horizon"], seed=cfg["seed"], dense=cfg["dense"])
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    data, truth = simulate(sim)
    stamp = _stamp(cfg)
    write_dataset(data, out / "data.csv", out / "schedule.csv", stamp)
    write_trajectory(truth, out / "truth.csv", stamp)
    theta = sim.theta
    write_csv(out / "theta.csv", ("parameter", "value"), [(n, theta[n]) for n in PARAM_NAMES], stamp)
    write_json(out / "manifest.json", _manifest(cfg, "simulate", t0=data.t0, last_year=data.last_year))


def cmd_fit(cfg) -> None:
    data, inputs = _load_data(cfg)
    out = _outdir(cfg)
    ctx = build_context(cfg, data)
    chains = run_chains(ctx, chain_config(cfg), n_chains=cfg["chains"])
    stamp = _stamp(cfg)
    header = ("sample",) + tuple(ctx.names) + ("loglik",)
    meta = []
    for i, c in enumerate(chains, 1):
        write_csv(out / f"chain_{i}.csv", header,
                  ((s, *c.theta[s], c.loglik[s]) for s in range(c.n_samples)), stamp)
        if cfg["record_paths"]:
            np.save(out / f"trajectories_{i}.npy", c.trajectories)
        meta.append({"chain": i, "seed": c.seed, "acceptance_rate": c.acceptance_rate,
                     "accepted": c.extra.get("accepted"), "samples": c.n_samples})
    write_json(out / "manifest.json", _manifest(
        cfg, "fit", inputs=inputs, t0=data.t0, last_year=data.last_year,
        param_names=list(ctx.names), state_names=list(cfg["_spec"].state_names), chains=meta))


def cmd_lfo(cfg) -> None:
    data, inputs = _load_data(cfg)
    out = _outdir(cfg)
    ctx = build_context(cfg, data)
    try:
        res = elpd_lfo(ctx, chain_config(cfg), L=cfg["L"], n_chains=cfg["chains"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    k = res.lpd_chains.shape[1]
    header = ("t", "fit_years", "mean", "sd", "pooled") + tuple(f"chain_{c + 1}" for c in range(k))
    rows = [(t, n, m, s, p, *row) for t, n, m, s, p, row in
            zip(res.times, res.fit_lengths, res.lpd_mean, res.lpd_sd, res.lpd, res.lpd_chains)]
    rows.append(("ELPD", "", res.elpd_mean, res.elpd_sd, res.elpd, *res.elpd_chains))
    write_csv(out / "lfo.csv", header, rows, _stamp(cfg))
    write_json(out / "manifest.json", _manifest(
        cfg, "lfo", inputs=inputs, model=res.model, L=res.L, times=list(res.times),
        fit_years=list(res.fit_lengths), kinds=[list(k) for k in res.kinds], elpd=res.elpd, acceptance=res.acceptance.tolist()))


def load_fit(path) -> list[ChainOutput]:
    """Chains written by ``fit`` (trajectories included when present)."""
    d = Path(path)
    if not (d / "manifest.json").is_file():
        raise DataError(f"{d}: no fit manifest")
    man = read_json(d / "manifest.json")
    if man.get("command") != "fit":
        raise DataError(f"{d}: manifest was not written by fit")
    c = man["config"]
    spec = ModelSpec.parse(c["pools"], c["site"])
    names = tuple(man["param_names"])
    out = []
    for ch in man["chains"]:
        i = ch["chain"]
        rows = np.loadtxt(d / f"chain_{i}.csv", delimiter=",", skiprows=2, ndmin=2)
        if rows.shape[1] != len(names) + 2:
            raise DataError(f"{d / f'chain_{i}.csv'}: expected {len(names) + 2} columns")
        traj_path = d / f"trajectories_{i}.npy"
        traj = np.load(traj_path) if traj_path.is_file() else np.empty((rows.shape[0], 0, 0, 0))
        out.append(ChainOutput(
            seed=ch["seed"], param_names=names, theta=rows[:, 1:-1], trajectories=traj,
            loglik=rows[:, -1], acceptance_rate=ch["acceptance_rate"], iterations=c["iterations"],
            burn_in=c["burn_in"], stride=c["stride"], spec=spec, t0=man["t0"]))
    return out


def _fit_stamp(path) -> str:
    """Provenance of a fit directory: its master seed and settings hash."""
    man = read_json(Path(path) / "manifest.json")
    return f"soilcarbon {__version__} seed={man['seed']} config={man['config_hash']}"


def cmd_diagnose(cfg) -> None:
    _need(cfg, "fit")
    chains = load_fit(cfg["fit"])
    cfg = dict(cfg, out=cfg["out"] or cfg["fit"])
    out = _outdir(cfg)
    try:
        rep = gelman_rubin(chains)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_csv(out / "rhat.csv", ("parameter", "point_estimate", "upper_ci"),
              zip(rep.names, rep.rhat, rep.upper), _fit_stamp(cfg["fit"]))


def _qlabel(q: float) -> str:
    return "q" + format(100 * q, "g")


def cmd_summarize(cfg) -> None:
    _need(cfg, "fit")
    chains = load_fit(cfg["fit"])
    if chains[0].trajectories.size == 0:
        raise DataError(f"{cfg['fit']}: fit has no stored trajectories (record_paths was off)")
    cfg = dict(cfg, out=cfg["out"] or cfg["fit"])
    out = _outdir(cfg)
    t0 = chains[0].t0
    stamp = _fit_stamp(cfg["fit"])
    header = ("year", "field") + tuple(_qlabel(q) for q in DEFAULT_QUANTILES)
    for stat in ("total_soc", "soc_change", "emitted_co2"):
        try:
            bands = percentile_bands(chains, stat, baseline=cfg["baseline"])
        except IndexError as exc:
            raise UsageError(str(exc)) from None
        F, T, _ = bands.shape
        rows = ((t0 + t, f + 1, *bands[f, t]) for f in range(F) for t in range(T))
        write_csv(out / f"bands_{stat}.csv", header, rows, stamp)


COMMANDS = {
    "simulate": (cmd_simulate, "simulate a synthetic dataset with ground truth"),
    "fit": (cmd_fit, "run CPM chains on a dataset"),
    "lfo": (cmd_lfo, "leave-future-out LPD and ELPD tables"),
    "diagnose": (cmd_diagnose, "Gelman-Rubin table of a fit"),
    "summarize": (cmd_summarize, "percentile bands of total SOC, SOC change and CO2"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soilcarbon", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any key, including theta.NAME, prior.NAME, proposal.NAME")
        for key, spec in KEYS.items():
            sp.add_argument("--" + key.replace("_", "-"), dest="k_" + key, metavar="VALUE", help=spec.help)
    return p


def parse_settings(args) -> dict[str, Any]:
    raw = read_config(args.config) if args.config else {}
    for key in KEYS:
        v = getattr(args, "k_" + key)
        if v is not None:
            raw[key] = v
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        _check_key(key, "--set")
        raw[key] = value
    return resolve(raw)


def _fail(kind: str, message: str, code: int) -> int:
    line = json.dumps({"error": kind, "exit": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = parse_settings(args)
        with np.errstate(all="ignore"):
            COMMANDS[args.command][0](cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail("UsageError", exc, EXIT_USAGE)
    except DataError as exc:
        return _fail("DataError", exc, EXIT_DATA)
    except (InitializationError, ConstraintError, ParticleDegeneracyError, LfoError,
            FloatingPointError, ArithmeticError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_NUMERIC)
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
