"""N-of-1 series container, DAG lag configuration and design-row extraction.

Time is an integer index ``1..T``. Index 0 holds the baseline record
(``C_0``, and optionally ``A_0``/``Y_0``) which seeds lagged parents at
``t = 1`` but is never itself a modelling row.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

EXPOSURE = "exposure"
OUTCOME = "outcome"
COVARIATE = "covariate"
ROLES = (EXPOSURE, OUTCOME, COVARIATE)

# position of each role inside one time step: A_t -> Y_t -> C_t
_ORDER = {EXPOSURE: 0, OUTCOME: 1, COVARIATE: 2}

MISSING_TOKENS = ("", "NA", "na", "NaN", "nan")


class SeriesError(ValueError):
    """Raised for malformed series input or invalid history requests."""


@dataclass(frozen=True)
class Schema:
    exposures: tuple[str, ...]
    outcome: str
    covariates: tuple[str, ...] = ()
    binary: tuple[str, ...] | None = None  # None -> every exposure is binary

    def __post_init__(self):
        object.__setattr__(self, "exposures", tuple(self.exposures))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.binary is not None:
            object.__setattr__(self, "binary", tuple(self.binary))
        names = [*self.exposures, self.outcome, *self.covariates]
        if len(set(names)) != len(names):
            raise SeriesError(f"duplicate column names in schema: {names}")
        if "t" in names:
            raise SeriesError("'t' is reserved for the time column")

    @property
    def binary_columns(self) -> tuple[str, ...]:
        return self.exposures if self.binary is None else self.binary

    def columns(self, role: str) -> tuple[str, ...]:
        if role == EXPOSURE:
            return self.exposures
        if role == OUTCOME:
            return (self.outcome,)
        if role == COVARIATE:
            return self.covariates
        raise SeriesError(f"unknown role {role!r}")

    def role_of(self, column: str) -> str:
        for role in ROLES:
            if column in self.columns(role):
                return role
        raise SeriesError(f"unknown column {column!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        return cls(
            exposures=tuple(d["exposures"]),
            outcome=d["outcome"],
            covariates=tuple(d.get("covariates", ())),
            binary=None if d.get("binary") is None else tuple(d["binary"]),
        )

    def to_dict(self) -> dict:
        return {
            "exposures": list(self.exposures),
            "outcome": self.outcome,
            "covariates": list(self.covariates),
            "binary": None if self.binary is None else list(self.binary),
        }

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DagConfig:
    """Parents of each variable as ``(role, lag)`` pairs.

    A role expands to every column of that role, in schema order. Column order
    of a design row is the intercept followed by the parents in declaration
    order.
    """

    outcome_parents: tuple[tuple[str, int], ...] = (
        (OUTCOME, 1),
        (EXPOSURE, 0),
        (EXPOSURE, 1),
        (COVARIATE, 1),
    )
    covariate_parents: tuple[tuple[str, int], ...] = (
        (COVARIATE, 1),
        (EXPOSURE, 0),
        (OUTCOME, 0),
    )
    exposure_parents: tuple[tuple[str, int], ...] = (
        (EXPOSURE, 1),
        (COVARIATE, 1),
        (OUTCOME, 1),
    )

    def __post_init__(self):
        for name in ("outcome_parents", "covariate_parents", "exposure_parents"):
            object.__setattr__(
                self, name, tuple((str(r), int(l)) for r, l in getattr(self, name))
            )
        for child in ROLES:
            for role, lag in self.parents(child):
                if role not in ROLES:
                    raise SeriesError(f"unknown parent role {role!r}")
                if lag < 0:
                    raise SeriesError(f"negative lag for parent {role} of {child}")
                if lag == 0 and _ORDER[role] >= _ORDER[child]:
                    raise SeriesError(
                        f"{role} at lag 0 cannot parent {child}: violates A->Y->C ordering"
                    )
            keys = self.parents(child)
            if len(set(keys)) != len(keys):
                raise SeriesError(f"duplicate parents for {child}")

    def parents(self, role: str) -> tuple[tuple[str, int], ...]:
        if role == OUTCOME:
            return self.outcome_parents
        if role == COVARIATE:
            return self.covariate_parents
        if role == EXPOSURE:
            return self.exposure_parents
        raise SeriesError(f"unknown role {role!r}")

    @property
    def max_lag(self) -> int:
        lags = [lag for r in ROLES for _, lag in self.parents(r)]
        return max(1, max(lags, default=1))

    def is_default(self) -> bool:
        return self == DagConfig()

    def to_dict(self) -> dict:
        return {
            "outcome_parents": [list(p) for p in self.outcome_parents],
            "covariate_parents": [list(p) for p in self.covariate_parents],
            "exposure_parents": [list(p) for p in self.exposure_parents],
        }

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "DagConfig":
        if not d:
            return cls()
        kwargs = {}
        for name in ("outcome_parents", "covariate_parents", "exposure_parents"):
            if name in d:
                kwargs[name] = tuple((r, int(l)) for r, l in d[name])
        return cls(**kwargs)

    def parent_columns(self, schema: Schema, role: str) -> list[tuple[str, int]]:
        """Expand role-level parents into ``(column, lag)`` keys."""
        out = []
        for prole, lag in self.parents(role):
            for col in schema.columns(prole):
                out.append((col, lag))
        return out


@dataclass(frozen=True)
class HistorySlice:
    target: str
    t: int
    values: dict  # (column, lag) -> float

    def __getitem__(self, key):
        return self.values[key]

    def keys(self):
        return self.values.keys()


@dataclass(frozen=True, eq=False)
class Series:
    """Validated single-subject record.

    ``data[col]`` is a float array of length ``T + 1`` indexed directly by
    time; entry 0 is the baseline and may be NaN. Missing cells are NaN and
    flagged in ``mask``.
    """

    schema: Schema
    data: dict
    T: int
    has_baseline: bool = False
    mask: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    def column(self, name: str) -> np.ndarray:
        """Values at t = 1..T."""
        return self.data[name][1:]

    def value(self, name: str, t: int) -> float:
        if t < 0 or t > self.T:
            raise SeriesError(f"time {t} outside 0..{self.T}")
        return float(self.data[name][t])

    @property
    def exposures(self) -> np.ndarray:
        return np.column_stack([self.column(c) for c in self.schema.exposures])

    @property
    def outcome(self) -> np.ndarray:
        return self.column(self.schema.outcome)

    @property
    def covariates(self) -> np.ndarray:
        cols = [self.column(c) for c in self.schema.covariates]
        return np.column_stack(cols) if cols else np.empty((self.T, 0))

    def to_rows(self) -> list[dict]:
        names = self._names()
        start = 0 if self.has_baseline else 1
        rows = []
        for t in range(start, self.T + 1):
            row = {"t": t}
            for c in names:
                row[c] = self.data[c][t]
            rows.append(row)
        return rows

    def to_csv(self, path=None) -> str:
        names = self._names()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *names])
        for row in self.to_rows():
            w.writerow([row["t"], *(_fmt(row[c]) for c in names)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def _names(self) -> list[str]:
        s = self.schema
        return [*s.exposures, s.outcome, *s.covariates]


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return repr(float(x))


def _parse(cell) -> float:
    if cell is None:
        return math.nan
    if isinstance(cell, str):
        cell = cell.strip()
        if cell in MISSING_TOKENS:
            return math.nan
        return float(cell)
    return float(cell)


def from_arrays(
    schema: Schema,
    exposures: np.ndarray,
    outcome: np.ndarray,
    covariates: np.ndarray | None = None,
    baseline: Mapping[str, float] | None = None,
) -> Series:
    """Build a series from arrays over t = 1..T (rows = time)."""
    exposures = np.asarray(exposures, dtype=float)
    if exposures.ndim == 1:
        exposures = exposures[:, None]
    outcome = np.asarray(outcome, dtype=float)
    T = outcome.shape[0]
    if covariates is None:
        covariates = np.empty((T, 0))
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    if exposures.shape != (T, len(schema.exposures)):
        raise SeriesError("exposure array width/length mismatch")
    if covariates.shape != (T, len(schema.covariates)):
        raise SeriesError("covariate array width/length mismatch")
    rows = []
    if baseline:
        rows.append({"t": 0, **baseline})
    for i in range(T):
        row = {"t": i + 1, schema.outcome: outcome[i]}
        row.update(zip(schema.exposures, exposures[i]))
        row.update(zip(schema.covariates, covariates[i]))
        rows.append(row)
    return load_series(rows, schema)


def load_series(rows: Iterable[Mapping], schema: Schema) -> Series:
    """Validate tabular records into a :class:`Series`.

    A row with ``t == 0`` is taken as the baseline record.
    """
    rows = list(rows)
    names = [*schema.exposures, schema.outcome, *schema.covariates]
    if not rows:
        raise SeriesError("empty series")
    parsed = []
    for i, row in enumerate(rows):
        if "t" not in row:
            raise SeriesError(f"row {i} has no time column 't'")
        missing_cols = [c for c in names if c not in row]
        if missing_cols:
            raise SeriesError(f"width mismatch: row {i} lacks columns {missing_cols}")
        t_raw = _parse(row["t"])
        if math.isnan(t_raw) or t_raw != int(t_raw):
            raise SeriesError(f"row {i}: time index must be an integer")
        parsed.append((int(t_raw), [_parse(row[c]) for c in names]))

    has_baseline = parsed[0][0] == 0
    body = parsed[1:] if has_baseline else parsed
    times = [t for t, _ in body]
    if not times:
        raise SeriesError("series has no rows after baseline")
    if times != list(range(1, len(times) + 1)):
        raise SeriesError("non-consecutive time index (expected 1..T with no gaps or duplicates)")
    T = len(times)

    data = {c: np.full(T + 1, np.nan) for c in names}
    for t, vals in parsed:
        for c, v in zip(names, vals):
            data[c][t] = v
    for c in schema.binary_columns:
        v = data[c][1:]
        ok = np.isnan(v) | (v == 0) | (v == 1)
        if not ok.all():
            bad = int(np.argmin(ok)) + 1
            raise SeriesError(f"non-binary value {v[bad - 1]!r} in binary exposure column {c!r} at t={bad}")
    for arr in data.values():
        arr.setflags(write=False)
    mask = {c: np.isnan(data[c]) for c in names}
    return Series(schema=schema, data=data, T=T, has_baseline=has_baseline, mask=mask)


def read_csv(path, schema: Schema) -> Series:
    """Load a CSV file; lines starting with ``#`` are ignored."""
    with open(path, newline="") as fh:
        return load_series(csv.DictReader(line for line in fh if not line.startswith("#")), schema)


def relevant_history(series: Series, cfg: DagConfig, role: str, t: int, column: str | None = None) -> HistorySlice:
    """Realized parents of the variable with ``role`` at time ``t``.

    ``column`` names the child when the role has several columns; it only
    labels the slice since all columns of a role share the parent set.
    """
    if t <= cfg.max_lag:
        raise SeriesError(f"t={t} lies in the burn-in window (t <= max lag {cfg.max_lag})")
    if t > series.T:
        raise SeriesError(f"t={t} beyond series end {series.T}")
    target = column or series.schema.columns(role)[0]
    values = {}
    for col, lag in cfg.parent_columns(series.schema, role):
        v = series.data[col][t - lag]
        if math.isnan(v):
            raise SeriesError(f"parent {col} at t={t - lag} is missing")
        values[(col, lag)] = float(v)
    return HistorySlice(target=target, t=t, values=values)


def design_columns(schema: Schema, cfg: DagConfig, role: str) -> list[tuple[str, int]]:
    """Column keys of the design row: ``("1", 0)`` for the intercept, then parents."""
    return [("1", 0), *cfg.parent_columns(schema, role)]


def design_row(series: Series, cfg: DagConfig, role: str, t: int) -> np.ndarray:
    h = relevant_history(series, cfg, role, t)
    return np.array([1.0, *h.values.values()])


def design_matrix(series: Series, cfg: DagConfig, role: str, response: str | None = None):
    """Stacked design rows and responses over every modelling time.

    Returns ``(times, y, F)``. Rows whose parents are missing get NaN response
    (the filter treats them as prediction-only steps) and a zero design row.
    """
    response = response or series.schema.columns(role)[0]
    cols = design_columns(series.schema, cfg, role)
    times = np.arange(cfg.max_lag + 1, series.T + 1)
    F = np.ones((len(times), len(cols)))
    for j, (col, lag) in enumerate(cols[1:], start=1):
        F[:, j] = series.data[col][times - lag]
    y = np.array(series.data[response][times], dtype=float)
    bad = np.isnan(F).any(axis=1)
    y[bad] = np.nan
    F[bad] = 0.0
    return times, y, F
