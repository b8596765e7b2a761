"""Parametric causal estimands from a coefficient frame.

Everything is built on :func:`response_path`, which pushes an exposure
perturbation through the linear outcome/covariate recursion defined by the
frame's DAG. Because the models are linear, effects do not depend on the
values at which later exposures or other exposure columns are held, nor on
the observed history. The closed forms for one- and two-lag effects under
the default DAG are kept separately (:mod:`nof1causal.closedform`) and used
for ``q <= 2``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import closedform
from .frame import CoefficientFrame, FrameError
from .series import COVARIATE, EXPOSURE, OUTCOME

NAMES = ("CE", "LDE", "LE", "TE", "GE", "cumDE", "cumOE")


class EstimandError(ValueError):
    pass


def _exposure(frame: CoefficientFrame, exposure: str | None) -> str:
    if exposure is None:
        return frame.schema.exposures[0]
    if exposure not in frame.schema.exposures:
        raise EstimandError(f"unknown exposure column {exposure!r}")
    return exposure


def response_path(frame: CoefficientFrame, start: int, pulse: Sequence[float], end: int, exposure: str | None = None):
    """Outcome perturbations ``dY_s`` for ``s = start..end``.

    ``pulse[j]`` is the change applied to the exposure at ``start + j``; the
    exposure is unchanged at every other time. Returns an array with the
    frame's batch shape plus a trailing time axis.
    """
    exposure = _exposure(frame, exposure)
    frame.check(start, end)
    schema, dag = frame.schema, frame.dag
    pulse = list(pulse)
    if len(pulse) > end - start + 1:
        raise EstimandError("pulse extends beyond the requested path end")
    y, covs = schema.outcome, schema.covariates
    # coefficients per response: [(column, lag, j)] without the intercept
    parents = {
        r: [(c, l, m.col((c, l))) for c, l in m.columns if c != "1"]
        for r, m in frame.models.items()
    }
    # perturbation history; anything before `start` is unperturbed
    delta = {c: {} for c in (*schema.exposures, y, *covs)}

    def get(col, s):
        return delta[col].get(s, 0.0)

    out = []
    for s in range(start, end + 1):
        i = s - start
        delta[exposure][s] = pulse[i] if i < len(pulse) else 0.0
        for resp in (y, *covs):
            m = frame.models[resp].mean
            acc = 0.0
            for c, l, j in parents[resp]:
                d = get(c, s - l)
                if isinstance(d, float) and d == 0.0:
                    continue
                acc = acc + m[..., s - frame.start, j] * d
            delta[resp][s] = acc
        out.append(np.broadcast_to(delta[y][s], frame.batch_shape))
    return np.stack(out, axis=-1)


def propagate_linear_system(frame: CoefficientFrame, t: int, q: int, pulse: Sequence[float] | None = None,
                            exposure: str | None = None):
    """Change in ``Y_t`` from perturbing the exposure over ``t-q..t``.

    The default pulse is a unit change at ``t-q`` only (the q-lag effect).
    """
    if q < 0:
        raise EstimandError("q must be >= 0")
    if pulse is None:
        pulse = [1.0] + [0.0] * q
    if len(pulse) != q + 1:
        raise EstimandError(f"pulse must have length q+1 = {q + 1}")
    return response_path(frame, t - q, pulse, t, exposure)[..., -1]


def _default_shape(frame: CoefficientFrame) -> bool:
    return frame.dag.is_default()


def contemporaneous_effect(frame, t, exposure=None):
    frame.check(t, t)
    return frame.coef(frame.schema.outcome, (_exposure(frame, exposure), 0), t)


def lag_structural_direct_effect(frame, t, q, exposure=None):
    """Coefficient on the exposure at lag ``q`` in the outcome model (0 if no such arrow)."""
    if q < 1:
        raise EstimandError("q must be >= 1")
    frame.check(t, t)
    val = frame.coef(frame.schema.outcome, (_exposure(frame, exposure), q), t)
    return np.broadcast_to(val, frame.batch_shape) if np.ndim(val) == 0 and frame.batch_shape else val


def lag_effect(frame, t, q, exposure=None):
    """Total effect of the exposure at ``t-q`` on ``Y_t``, later exposures held fixed."""
    if q < 1:
        raise EstimandError("q must be >= 1")
    frame.check(t - q, t)
    exposure = _exposure(frame, exposure)
    if q <= 2 and _default_shape(frame):
        return (closedform.le1 if q == 1 else closedform.le2)(frame, t, exposure)
    return propagate_linear_system(frame, t, q, exposure=exposure)


def total_effect(frame, t, q, exposure=None):
    """Effect on ``Y_t`` of exposure 1 vs 0 over all of ``t-q..t``."""
    if q < 0:
        raise EstimandError("q must be >= 0")
    frame.check(t - q, t)
    exposure = _exposure(frame, exposure)
    if q == 0:
        return contemporaneous_effect(frame, t, exposure)
    if q <= 2 and _default_shape(frame):
        return (closedform.te1 if q == 1 else closedform.te2)(frame, t, exposure)
    return propagate_linear_system(frame, t, q, [1.0] * (q + 1), exposure)


def general_effect(frame, t, strategy, exposure=None):
    """Effect on ``Y_t`` of ``strategy`` over ``t-q..t`` versus all zeros."""
    strategy = _check_strategy(strategy)
    q = len(strategy) - 1
    frame.check(t - q, t)
    return propagate_linear_system(frame, t, q, [float(a) for a in strategy], exposure)


def cumulative_direct_effect(frame, t, exposure=None):
    """Sum of direct-arrow effects of the exposure at ``t`` on every later outcome."""
    exposure = _exposure(frame, exposure)
    lags = sorted({l for c, l in frame.models[frame.schema.outcome].columns if c == exposure})
    hi = t + max(lags, default=0)
    frame.check(t, max(hi, t + 1))
    total = 0.0
    for l in lags:
        total = total + frame.coef(frame.schema.outcome, (exposure, l), t + l)
    return np.broadcast_to(total, frame.batch_shape) if np.ndim(total) == 0 and frame.batch_shape else total


@dataclass
class CumulativeResult:
    value: object
    truncation_lag: int
    terms: np.ndarray


def cumulative_overall_effect(frame, t, horizon, exposure=None, tol=1e-8) -> CumulativeResult:
    """``CE_t`` plus the q-lag effects of the exposure at ``t`` on ``Y_{t+q}``, zero-fill path.

    Summation stops at the first lag whose term is below ``tol`` in absolute
    value (for every draw of a batched frame), or at ``horizon``.
    """
    if horizon < 1:
        raise EstimandError("horizon must be >= 1")
    if t + horizon > frame.end:
        raise EstimandError(f"horizon {horizon} from t={t} exceeds frame end {frame.end}")
    path = response_path(frame, t, [1.0], t + horizon, exposure)
    small = np.all(np.abs(path) < tol, axis=tuple(range(path.ndim - 1)))
    small[0] = False
    cut = int(np.argmax(small)) if small.any() else horizon
    return CumulativeResult(path[..., : cut + 1].sum(axis=-1), cut, path)


def _check_strategy(strategy):
    s = [int(a) if a in (0, 1) else a for a in strategy]
    if not s:
        raise EstimandError("empty strategy")
    if any(a not in (0, 1) for a in s):
        raise EstimandError(f"strategy entries must be 0/1: {list(strategy)}")
    return s


# --- requests, intervals and serialisation ---------------------------------------

@dataclass(frozen=True)
class Request:
    name: str
    q: int | None = None
    strategy: tuple | None = None
    horizon: int | None = None
    exposure: str | None = None

    def __post_init__(self):
        if self.name not in NAMES:
            raise EstimandError(f"unknown estimand {self.name!r}; expected one of {NAMES}")
        if self.name in ("LDE", "LE") and (self.q is None or self.q < 1):
            raise EstimandError(f"{self.name} needs q >= 1")
        if self.name == "TE" and (self.q is None or self.q < 0):
            raise EstimandError("TE needs q >= 0")
        if self.name == "GE":
            if not self.strategy:
                raise EstimandError("GE needs a strategy")
            object.__setattr__(self, "strategy", tuple(_check_strategy(self.strategy)))
            object.__setattr__(self, "q", len(self.strategy) - 1)
        if self.name == "cumOE" and self.horizon is None:
            object.__setattr__(self, "horizon", 30)

    def window(self, t: int) -> tuple[int, int]:
        if self.name in ("CE", "LDE"):
            return t, t
        if self.name in ("LE", "TE", "GE"):
            return t - self.q, t
        if self.name == "cumDE":
            return t, t + 1
        return t, t + self.horizon

    def evaluate(self, frame: CoefficientFrame, t: int):
        n = self.name
        if n == "CE":
            return contemporaneous_effect(frame, t, self.exposure)
        if n == "LDE":
            return lag_structural_direct_effect(frame, t, self.q, self.exposure)
        if n == "LE":
            return lag_effect(frame, t, self.q, self.exposure)
        if n == "TE":
            return total_effect(frame, t, self.q, self.exposure)
        if n == "GE":
            return general_effect(frame, t, self.strategy, self.exposure)
        if n == "cumDE":
            return cumulative_direct_effect(frame, t, self.exposure)
        return cumulative_overall_effect(frame, t, self.horizon, self.exposure).value

    def admissible(self, frame: CoefficientFrame) -> range:
        lo, hi = self.window(0)
        return range(frame.start - lo, frame.end - hi + 1)

    def label(self) -> str:
        if self.name == "GE":
            return "GE(" + "".join(map(str, self.strategy)) + ")"
        if self.name in ("LDE", "LE", "TE"):
            return f"{self.name}{self.q}"
        if self.name == "cumOE":
            return f"cumOE(h={self.horizon})"
        return self.name

    @classmethod
    def from_dict(cls, d) -> "Request":
        return cls(name=d["name"], q=d.get("q"), strategy=None if d.get("strategy") is None else tuple(d["strategy"]),
                   horizon=d.get("horizon"), exposure=d.get("exposure"))


def interval(fn: Callable, frame: CoefficientFrame, lo: int, hi: int, level: float = 0.90,
             K: int = 2000, seed: int = 0, point=None) -> tuple[float, float]:
    """Percentile interval of ``fn`` over K coefficient draws on ``[lo, hi]``.

    With no sampling covariance the interval collapses to the point value.
    The interval is widened to contain ``point`` when given.
    """
    if not 0 < level < 1:
        raise EstimandError("level must lie in (0, 1)")
    draws = frame.draw(np.random.default_rng(seed), K, lo, hi)
    vals = np.asarray(fn(draws), dtype=float)
    a, b = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2], axis=0)
    a, b = float(a), float(b)
    if point is not None:
        a, b = min(a, point), max(b, point)
    return a, b


@dataclass
class EstimandSeries:
    name: str
    label: str
    q: int | None
    strategy: tuple | None
    exposure: str
    level: float
    t: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {"t": int(t), "name": self.label, "q": "" if self.q is None else int(self.q),
             "estimate": float(e), "lower": float(lo), "upper": float(hi)}
            for t, e, lo, hi in zip(self.t, self.estimate, self.lower, self.upper)
        ]

    def to_dict(self) -> dict:
        return {
            "name": self.name, "label": self.label, "q": self.q,
            "strategy": None if self.strategy is None else list(self.strategy),
            "exposure": self.exposure, "level": self.level, "meta": self.meta,
            "t": [int(t) for t in self.t], "estimate": self.estimate.tolist(),
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
        }

    def to_csv(self) -> str:
        return rows_to_csv(self.rows(), ["t", "name", "q", "estimate", "lower", "upper"])


def rows_to_csv(rows, fieldnames) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def estimate(frame: CoefficientFrame, request: Request, t: int, level: float = 0.90, K: int = 2000,
             seed: int = 0) -> tuple[float, float, float]:
    """Point estimate at the coefficient means plus percentile interval."""
    lo, hi = request.window(t)
    try:
        frame.check(lo, hi)
    except FrameError as e:
        raise EstimandError(str(e)) from None
    point = float(request.evaluate(frame.point(), t))
    if all(m.cov is None for m in frame.models.values()):
        return point, point, point
    a, b = interval(lambda f: request.evaluate(f, t), frame, lo, hi, level, K, seed=_seed(seed, t), point=point)
    return point, a, b


def _seed(seed: int, t: int):
    return [int(seed) & 0xFFFFFFFF, int(t)]


def estimand_series(frame: CoefficientFrame, request: Request, times: Sequence[int] | None = None,
                    level: float = 0.90, K: int = 2000, seed: int = 0) -> EstimandSeries:
    adm = request.admissible(frame)
    if times is None:
        times = list(adm)
    times = [int(t) for t in times]
    bad = [t for t in times if t not in adm]
    if bad:
        raise EstimandError(f"times {bad[:5]} outside admissible range {adm.start}..{adm.stop - 1} for {request.label()}")
    est, lo, hi = (np.empty(len(times)) for _ in range(3))
    for i, t in enumerate(times):
        est[i], lo[i], hi[i] = estimate(frame, request, t, level, K, seed)
    return EstimandSeries(request.name, request.label(), request.q, request.strategy,
                          _exposure(frame, request.exposure), level, np.array(times), est, lo, hi)
