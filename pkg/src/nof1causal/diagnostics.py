"""Positivity scan and effect-trajectory series for plotting."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimands import EstimandError, Request, estimate, rows_to_csv
from .frame import CoefficientFrame
from .series import Series, SeriesError

LIST_LIMIT = 12  # unobserved patterns are listed only up to this duration
MAX_DURATION = 20


@dataclass
class DurationCount:
    p: int
    observed: int
    possible: int
    patterns: frozenset | None = None  # observed patterns, kept when p <= LIST_LIMIT

    @property
    def percentage(self) -> float:
        return 100.0 * self.observed / self.possible

    def unobserved(self) -> list[tuple] | None:
        if self.patterns is None:
            return None
        return [s for s in itertools.product((0, 1), repeat=self.p) if s not in self.patterns]


@dataclass
class PositivityReport:
    column: str
    max_duration: int
    counts: list = field(default_factory=list)

    def row(self, p: int) -> DurationCount:
        if not 1 <= p <= self.max_duration:
            raise ValueError(f"duration {p} not covered (1..{self.max_duration})")
        return self.counts[p - 1]

    def observed_patterns(self, p: int) -> frozenset:
        r = self.row(p)
        if r.patterns is None:
            raise ValueError(f"patterns are only kept for durations up to {LIST_LIMIT}")
        return r.patterns

    def rows(self) -> list[dict]:
        out = []
        for r in self.counts:
            un = r.unobserved()
            out.append({"p": r.p, "observed": r.observed, "possible": r.possible, "percentage": r.percentage,
                        "unobserved": "" if un is None else ";".join("".join(map(str, s)) for s in un)})
        return out

    def to_csv(self) -> str:
        return rows_to_csv(self.rows(), ["p", "observed", "possible", "percentage", "unobserved"])

    def to_dict(self) -> dict:
        durations = []
        for r in self.counts:
            un = r.unobserved()
            durations.append({"p": r.p, "observed": r.observed, "possible": r.possible,
                              "percentage": r.percentage,
                              "unobserved": None if un is None else ["".join(map(str, s)) for s in un]})
        return {"column": self.column, "max_duration": self.max_duration, "durations": durations}


def _stretches(x: np.ndarray) -> list[np.ndarray]:
    """Maximal runs of non-missing values."""
    ok = ~np.isnan(x)
    out, i, n = [], 0, len(x)
    while i < n:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j < n and ok[j]:
            j += 1
        out.append(x[i:j].astype(np.int64))
        i = j
    return out


def positivity_report(series: Series, column: str | None = None, max_duration: int = 10) -> PositivityReport:
    """Distinct exposure patterns seen in every length-p window, p = 1..max_duration.

    Windows are overlapping; any window touching a missing value is skipped.
    """
    column = column or series.schema.exposures[0]
    if column not in series.data:
        raise SeriesError(f"unknown column {column!r}")
    if not 1 <= max_duration <= MAX_DURATION:
        raise ValueError(f"max_duration must lie in 1..{MAX_DURATION}")
    x = series.column(column)
    v = x[~np.isnan(x)]
    if not np.all((v == 0) | (v == 1)):
        raise SeriesError(f"column {column!r} is not binary")
    runs = _stretches(x)
    counts = []
    for p in range(1, max_duration + 1):
        seen = set()
        weights = 1 << np.arange(p - 1, -1, -1, dtype=np.int64)
        for r in runs:
            if len(r) >= p:
                codes = np.lib.stride_tricks.sliding_window_view(r, p) @ weights
                seen.update(np.unique(codes).tolist())
        pats = None
        if p <= LIST_LIMIT:
            pats = frozenset(tuple((c >> (p - 1 - i)) & 1 for i in range(p)) for c in seen)
        counts.append(DurationCount(p, len(seen), 2 ** p, pats))
    return PositivityReport(column, max_duration, counts)


@dataclass
class ResponseSeries:
    kind: str
    t: int
    label: str
    q: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    summary: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"kind": self.kind, "label": self.label, "t": self.t, "q": int(q), "estimate": float(e),
                 "lower": float(a), "upper": float(b)}
                for q, e, a, b in zip(self.q, self.estimate, self.lower, self.upper)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "t": self.t, "q": self.q.tolist(),
                "estimate": self.estimate.tolist(), "lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "summary": self.summary}


RESPONSE_FIELDS = ["kind", "label", "t", "q", "estimate", "lower", "upper"]


def _series(kind, label, t, reqs, frame, level, K, seed):
    vals = [estimate(frame, r, tt, level, K, seed) for r, tt in reqs]
    est, lo, hi = (np.array(v) for v in zip(*vals))
    return ResponseSeries(kind, t, label, np.arange(len(reqs)), est, lo, hi)


def _range_check(frame, t, max_q):
    if max_q < 0:
        raise EstimandError("max_q must be >= 0")
    if t < frame.start or t + max_q > frame.end:
        raise EstimandError(f"t={t} with max_q={max_q} exceeds frame range {frame.start}..{frame.end}")


def impulse_impact(frame: CoefficientFrame, t: int, max_q: int, level: float = 0.90, K: int = 2000,
                   seed: int = 0, exposure: str | None = None) -> ResponseSeries:
    """Effect of a single exposure at ``t`` on ``Y_{t+q}``: ``CE_t`` then ``LE^(q)_{t+q}``."""
    _range_check(frame, t, max_q)
    reqs = [(Request("CE", exposure=exposure), t)]
    reqs += [(Request("LE", q=q, exposure=exposure), t + q) for q in range(1, max_q + 1)]
    return _series("impulse", "impulse", t, reqs, frame, level, K, seed)


def fraction_lags(values: np.ndarray, fractions=(0.8, 0.95)) -> dict:
    """First index where ``|values|`` reaches each fraction of its maximum."""
    a = np.abs(np.asarray(values, dtype=float))
    m = a.max() if a.size else 0.0
    out = {}
    for f in fractions:
        key = f"lag_{int(round(f * 100))}pct"
        out[key] = None if m == 0 else int(np.argmax(a >= f * m))
    return out


def step_response(frame: CoefficientFrame, t: int, max_q: int, level: float = 0.90, K: int = 2000,
                  seed: int = 0, exposure: str | None = None) -> ResponseSeries:
    """Effect of exposure held at 1 from ``t`` on ``Y_{t+q}``: ``TE^(q)_{t+q}``."""
    _range_check(frame, t, max_q)
    reqs = [(Request("TE", q=q, exposure=exposure), t + q) for q in range(max_q + 1)]
    out = _series("step", "step", t, reqs, frame, level, K, seed)
    out.summary = fraction_lags(out.estimate)
    return out


def general_response(frame: CoefficientFrame, t: int, strategies: Sequence[Sequence[int]], tail: int = 7,
                     level: float = 0.90, K: int = 2000, seed: int = 0,
                     exposure: str | None = None) -> list[ResponseSeries]:
    """Per strategy starting at ``t``: ``GE`` on ``Y_{t+j}`` over the window and ``tail`` steps after.

    At ``t+j`` the contrast covers exposures ``t..t+j``; after the window the
    exposure returns to 0.
    """
    strategies = [tuple(int(a) for a in s) for s in strategies]
    if not strategies:
        raise EstimandError("no strategies given")
    if len({len(s) for s in strategies}) != 1:
        raise EstimandError("strategies must all have the same length")
    if tail < 0:
        raise EstimandError("tail must be >= 0")
    L = len(strategies[0])
    _range_check(frame, t, L - 1 + tail)
    out = []
    for s in strategies:
        reqs = []
        for j in range(L + tail):
            pat = s[: j + 1] if j < L else s + (0,) * (j - L + 1)
            reqs.append((Request("GE", strategy=pat, exposure=exposure), t + j))
        out.append(_series("general", "".join(map(str, s)), t, reqs, frame, level, K, seed))
    return out


def responses_to_csv(items: Sequence[ResponseSeries]) -> str:
    return rows_to_csv([r for it in items for r in it.rows()], RESPONSE_FIELDS)
