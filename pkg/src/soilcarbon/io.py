"""Long-format CSV ingestion and deterministic writers.

Observations: header ``year,field,variable,value``, one row per observed
value, ``field`` 1-based.  Schedules: header ``year,field,treatment`` with
:class:`~soilcarbon.core.Treatment` names.  Floats are written with
``repr`` so files round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import OBS_INDEX, START_YEAR, Dataset, FieldSeries, LatentTrajectory, Site, Treatment

DATA_HEADER = ("year", "field", "variable", "value")
SCHEDULE_HEADER = ("year", "field", "treatment")


class DataError(ValueError):
    """Malformed or invalid input data."""


def _rows(path, header: Sequence[str]):
    """Yield ``(line_number, row)`` after checking the header.

    Lines starting with ``#`` before the header are provenance comments.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        while first is not None and first and first[0].startswith("#"):
            first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != tuple(header):
            raise DataError(f"{path}:{reader.line_num}: expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} columns, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _int(text, path, line, what):
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}:{line}: {what} {text!r} is not an integer") from None


def read_observations(path, n_fields: int = 3) -> list[dict[int, dict[str, float]]]:
    """Per-field ``{year: {kind: value}}`` from an observation CSV."""
    out: list[dict[int, dict[str, float]]] = [{} for _ in range(n_fields)]
    for line, (y, f, kind, v) in _rows(path, DATA_HEADER):
        year = _int(y, path, line, "year")
        fld = _int(f, path, line, "field")
        if not 1 <= fld <= n_fields:
            raise DataError(f"{path}:{line}: field {fld} outside 1..{n_fields}")
        if kind not in OBS_INDEX:
            raise DataError(f"{path}:{line}: unknown variable {kind!r}")
        try:
            value = float(v)
        except ValueError:
            raise DataError(f"{path}:{line}: value {v!r} is not a number") from None
        if not (value > 0.0 and math.isfinite(value)):
            raise DataError(f"{path}:{line}: {kind} value {v} must be positive and finite")
        row = out[fld - 1].setdefault(year, {})
        if kind in row:
            raise DataError(f"{path}:{line}: duplicate {kind} for field {fld} in {year}")
        row[kind] = value
    return out


def read_schedule(path, n_fields: int = 3) -> list[dict[int, Treatment]]:
    """Per-field ``{year: Treatment}`` from a schedule CSV."""
    out: list[dict[int, Treatment]] = [{} for _ in range(n_fields)]
    for line, (y, f, name) in _rows(path, SCHEDULE_HEADER):
        year = _int(y, path, line, "year")
        fld = _int(f, path, line, "field")
        if not 1 <= fld <= n_fields:
            raise DataError(f"{path}:{line}: field {fld} outside 1..{n_fields}")
        try:
            tr = Treatment.parse(name)
        except ValueError:
            raise DataError(f"{path}:{line}: unknown treatment {name!r}") from None
        if year in out[fld - 1]:
            raise DataError(f"{path}:{line}: duplicate treatment for field {fld} in {year}")
        out[fld - 1][year] = tr
    return out


def ingest(data_path, schedule_path, site: Site, t0: int | None = None,
           last_year: int | None = None) -> Dataset:
    """Dataset from an observation CSV and a schedule CSV.

    ``t0`` defaults to the site's first year and ``last_year`` to the last
    year of the schedule.  The schedule must cover every year after ``t0``.
    """
    site = Site(site)
    obs = read_observations(data_path)
    sched = read_schedule(schedule_path)
    t0 = START_YEAR[site] if t0 is None else int(t0)
    if last_year is None:
        years = [y for m in sched for y in m]
        if not years:
            raise DataError(f"{schedule_path}: schedule is empty")
        last_year = max(years)
    try:
        fields = tuple(
            FieldSeries({y: r for y, r in o.items()},
                        {y: tr for y, tr in s.items() if t0 <= y <= last_year})
            for o, s in zip(obs, sched)
        )
        return Dataset(site, fields, t0, int(last_year))
    except ValueError as exc:
        raise DataError(str(exc)) from None


def fmt(x) -> str:
    """Round-trip decimal text for a number (``repr`` of the float)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> None:
    """CSV with ``repr`` floats; ``comment`` becomes a leading ``# ...`` line."""
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def write_dataset(data: Dataset, data_path, schedule_path, comment: str | None = None) -> None:
    """Observation and schedule CSVs (rows ordered by field, year, kind)."""
    obs_rows = []
    sched_rows = []
    order = {k: i for i, k in enumerate(OBS_INDEX)}
    for i, f in enumerate(data.fields):
        for y, row in f.observations.items():
            for kind in sorted(row, key=order.__getitem__):
                obs_rows.append((y, i + 1, kind, row[kind]))
        for y in sorted(f.schedule):
            sched_rows.append((y, i + 1, f.schedule[y].name))
    write_csv(data_path, DATA_HEADER, obs_rows, comment)
    write_csv(schedule_path, SCHEDULE_HEADER, sched_rows, comment)


def write_trajectory(traj: LatentTrajectory, path, comment: str | None = None) -> None:
    """Long-format ``year,field,state,value`` CSV of a latent trajectory."""
    names = traj.spec.state_names
    rows = []
    for f in range(traj.values.shape[0]):
        for t, year in enumerate(traj.years):
            for j, name in enumerate(names):
                rows.append((int(year), f + 1, name, traj.values[f, t, j]))
    write_csv(path, ("year", "field", "state", "value"), rows, comment)


def write_json(path, payload) -> None:
    """Stable JSON: sorted keys, floats via ``repr``, trailing newline."""
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
