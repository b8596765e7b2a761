"""Monte Carlo g-formula: counterfactual outcomes simulated from fitted models.

For each of K coefficient draws, B trajectory copies are simulated forward
from the observed history, alternating outcome and covariate models with the
exposure set by the strategy. Per-draw means over the copies are then pooled.

Random numbers are keyed by ``(seed, k)``, so results do not depend on how
draws are split across workers, and contrasts between two strategies reuse
the same numbers for both (common random numbers).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .estimands import EstimandError, Request
from .frame import CoefficientFrame
from .series import Series

STOCHASTIC = "stochastic"
MEAN_PATH = "mean-path"


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class McConfig:
    K: int = 1000
    B: int = 200
    seed: int = 0
    noise: str = STOCHASTIC
    draw_params: bool = True
    level: float = 0.90
    other_exposures: str = "reference"  # or "observed"

    def __post_init__(self):
        if self.K < 1 or self.B < 1:
            raise ValueError("K and B must be >= 1")
        if self.noise not in (STOCHASTIC, MEAN_PATH):
            raise ValueError(f"noise must be {STOCHASTIC!r} or {MEAN_PATH!r}")
        if self.other_exposures not in ("reference", "observed"):
            raise ValueError("other_exposures must be 'reference' or 'observed'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class CounterfactualResult:
    t: int
    strategy: tuple
    per_draw: np.ndarray  # (K,)
    mean: float
    lower: float
    upper: float
    history: str
    config: dict

    def to_dict(self):
        return {"t": self.t, "strategy": list(self.strategy), "mean": self.mean, "lower": self.lower,
                "upper": self.upper, "history": self.history, "config": self.config}


@dataclass
class McEstimate:
    label: str
    t: int
    estimate: float
    lower: float
    upper: float
    se: float  # Monte Carlo standard error of the pooled estimate
    per_draw: np.ndarray
    config: dict

    def to_dict(self):
        return {"label": self.label, "t": self.t, "estimate": self.estimate, "lower": self.lower,
                "upper": self.upper, "mc_se": self.se, "config": self.config}


def _check_strategy(strategy):
    s = tuple(strategy)
    if not s or any(a not in (0, 1) for a in s):
        raise SimulationError(f"strategy must be a non-empty 0/1 sequence, got {list(strategy)}")
    return tuple(int(a) for a in s)


def _percentile(x, level):
    a, b = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    return float(a), float(b)


def history_records(series: Series, frame: CoefficientFrame, depth: int) -> list[int]:
    """Start times whose preceding ``depth`` time points are fully observed."""
    names = [*series.schema.exposures, series.schema.outcome, *series.schema.covariates]
    lo = 0 if series.has_baseline else 1
    starts = []
    for s in range(lo + depth, series.T + 1):
        if all(not np.isnan(series.data[c][s - b]) for c in names for b in range(1, depth + 1)):
            starts.append(s)
    return starts


def simulate_path(
    frame: CoefficientFrame,
    series: Series,
    start: int,
    end: int,
    strategy: Sequence[int],
    cfg: McConfig,
    exposure: str | None = None,
    mediators: str = "simulated",
    history: Sequence[dict] | None = None,
) -> np.ndarray:
    """Per-draw mean outcome over ``start..end``, shape ``(K, end - start + 1)``.

    ``strategy[j]`` fixes the exposure at ``start + j``; later times in the
    window get exposure 0. With ``mediators="fixed"`` the outcome and
    covariates feeding later steps keep their observed values (controlled
    direct effects). ``history`` replaces the observed seed values: each
    record maps ``(column, b)`` to the value ``b`` steps before ``start``, and
    each copy draws one record uniformly.
    """
    sch = series.schema
    exposure = exposure or sch.exposures[0]
    if exposure not in sch.exposures:
        raise SimulationError(f"unknown exposure {exposure!r}")
    strategy = _check_strategy(strategy)
    n = end - start + 1
    if len(strategy) > n:
        raise SimulationError("strategy longer than the simulated window")
    frame.check(start, end)
    if end > series.T and (mediators == "fixed" or cfg.other_exposures == "observed"):
        raise SimulationError("window extends beyond the observed series")
    K, B = cfg.K, cfg.B
    y, covs = sch.outcome, sch.covariates
    responses = (y, *covs)
    parents = {r: [(c, l, m.col((c, l))) for c, l in m.columns if c != "1"] for r, m in frame.models.items()}
    icpt = {r: (m.col(("1", 0)) if m.has(("1", 0)) else None) for r, m in frame.models.items()}
    sd = {r: math.sqrt(frame.models[r].noise_var) if cfg.noise == STOCHASTIC else 0.0 for r in responses}
    dims = {r: frame.models[r].mean.shape[-1] for r in sorted(frame.models)}

    # seed history
    depth = max([l for r in responses for _, l, _ in parents[r]] + [1])
    hist_idx = None
    if history is not None:
        history = list(history)
        if not history:
            raise SimulationError("no admissible history windows")
    else:
        for r in responses:
            for c, l, _ in parents[r]:
                for s in range(start, end + 1):
                    if s - l < start:
                        if s - l < 0 or np.isnan(series.data[c][s - l]):
                            raise SimulationError(f"missing seed history: {c} at t={s - l}")
        if mediators == "fixed":
            for r in responses:
                for s in range(start, end):
                    if np.isnan(series.data[r][s]):
                        raise SimulationError(f"missing observed mediator {r} at t={s}")

    # per-k random numbers: params then noise then history picks
    zs = {r: np.empty((K, n, d)) for r, d in dims.items()}
    eps = np.empty((K, n, len(responses), B))
    if history is not None:
        hist_idx = np.empty((K, B), dtype=np.int64)
    for k in range(K):
        rk = np.random.default_rng([cfg.seed, k])
        for r, d in dims.items():
            zs[r][k] = rk.standard_normal((n, d))
        eps[k] = rk.standard_normal((n, len(responses), B))
        if history is not None:
            hist_idx[k] = np.random.default_rng([cfg.seed, k, 2]).integers(len(history), size=B)
    if cfg.draw_params:
        draws = frame.draw_from_normals(zs, start, end)
    else:
        draws = frame.window(start, end).point()
        draws = draws.draw_from_normals({r: np.zeros((K, n, d)) for r, d in dims.items()}, start, end)

    if history is not None:
        seed_vals = {}
        cols = [*sch.exposures, y, *covs]
        for c in cols:
            for b in range(1, depth + 1):
                arr = np.array([rec.get((c, b), np.nan) for rec in history], dtype=float)
                seed_vals[(c, b)] = arr[hist_idx]

    values: dict = {c: {} for c in (*sch.exposures, *responses)}

    def get(c, s, for_sim=True):
        if s >= start:
            if mediators == "fixed" and c in responses and for_sim:
                return series.data[c][s]
            return values[c][s]
        if history is not None:
            v = seed_vals[(c, start - s)]
            if np.isnan(v).any():
                raise SimulationError(f"supplied history lacks {c} at lag {start - s}")
            return v
        return series.data[c][s]

    out = np.empty((K, n))
    for i, s in enumerate(range(start, end + 1)):
        for a in sch.exposures:
            if a == exposure:
                values[a][s] = float(strategy[i]) if i < len(strategy) else 0.0
            elif cfg.other_exposures == "observed":
                values[a][s] = series.data[a][s]
            else:
                values[a][s] = 0.0
        for ri, r in enumerate(responses):
            m = draws.models[r].mean  # (K, n, d)
            acc = m[:, i, icpt[r], None] if icpt[r] is not None else np.zeros((K, 1))
            for c, l, j in parents[r]:
                src = s - l
                v = get(c, src, for_sim=src != s)
                acc = acc + m[:, i, j, None] * v
            if sd[r] > 0:
                acc = acc + sd[r] * eps[:, i, ri, :]
            values[r][s] = np.broadcast_to(acc, (K, B))
        out[:, i] = values[y][s].mean(axis=1)
    return out


def simulate_counterfactual(frame, series, t, strategy, cfg: McConfig = McConfig(), exposure=None,
                            history=None) -> CounterfactualResult:
    """Counterfactual mean of ``Y_t`` under ``strategy`` over ``t-q..t``."""
    strategy = _check_strategy(strategy)
    q = len(strategy) - 1
    path = simulate_path(frame, series, t - q, t, strategy, cfg, exposure, history=history)
    per = path[:, -1]
    lo, hi = _percentile(per, cfg.level)
    return CounterfactualResult(t, strategy, per, float(per.mean()), lo, hi,
                                "supplied" if history is not None else "observed", cfg.to_dict())


def _contrast(frame, series, start, end, a, a_ref, cfg, exposure, mediators="simulated", reduce="last",
              history=None):
    pa = simulate_path(frame, series, start, end, a, cfg, exposure, mediators, history)
    pb = simulate_path(frame, series, start, end, a_ref, cfg, exposure, mediators, history)
    d = pa - pb
    return d[:, -1] if reduce == "last" else d.sum(axis=1)


def _summarise(label, t, per, cfg):
    lo, hi = _percentile(per, cfg.level)
    se = float(per.std(ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0
    return McEstimate(label, t, float(per.mean()), lo, hi, se, per, cfg.to_dict())


def mc_estimand(frame, series, t, a, a_ref, cfg: McConfig = McConfig(), exposure=None, history=None) -> McEstimate:
    """Contrast of counterfactual means of ``Y_t`` under two equal-length strategies."""
    a, a_ref = _check_strategy(a), _check_strategy(a_ref)
    if len(a) != len(a_ref):
        raise SimulationError("strategies must have the same length")
    q = len(a) - 1
    per = _contrast(frame, series, t - q, t, a, a_ref, cfg, exposure, history=history)
    return _summarise(f"{''.join(map(str, a))} vs {''.join(map(str, a_ref))}", t, per, cfg)


def mc_request(frame, series, request: Request, t, cfg: McConfig = McConfig()) -> McEstimate:
    """Any named estimand by simulation."""
    n, ex = request.name, request.exposure
    if n == "CE":
        per = _contrast(frame, series, t, t, (1,), (0,), cfg, ex)
    elif n == "LDE":
        q = request.q
        per = _contrast(frame, series, t - q, t, (1,) + (0,) * q, (0,) * (q + 1), cfg, ex, mediators="fixed")
    elif n == "LE":
        q = request.q
        per = _contrast(frame, series, t - q, t, (1,) + (0,) * q, (0,) * (q + 1), cfg, ex)
    elif n == "TE":
        q = request.q
        per = _contrast(frame, series, t - q, t, (1,) * (q + 1), (0,) * (q + 1), cfg, ex)
    elif n == "GE":
        s = request.strategy
        per = _contrast(frame, series, t - len(s) + 1, t, s, (0,) * len(s), cfg, ex)
    elif n == "cumDE":
        lags = [l for c, l in frame.models[frame.schema.outcome].columns if c == (ex or frame.schema.exposures[0])]
        end = t + max([1, *lags])
        per = _contrast(frame, series, t, end, (1,), (0,), cfg, ex, mediators="fixed", reduce="sum")
    elif n == "cumOE":
        per = _contrast(frame, series, t, t + request.horizon, (1,), (0,), cfg, ex, reduce="sum")
    else:
        raise EstimandError(f"unknown estimand {n!r}")
    return _summarise(request.label(), t, per, cfg)


@dataclass
class MarginalResult:
    strategy: tuple
    mean: float
    lower: float
    upper: float
    n_histories: int
    per_draw: np.ndarray

    def to_dict(self):
        return {"strategy": list(self.strategy), "mean": self.mean, "lower": self.lower,
                "upper": self.upper, "n_histories": self.n_histories}


def marginalized_outcome(frame, series, t, strategy, cfg: McConfig = McConfig(), exposure=None,
                         history="empirical") -> MarginalResult:
    """Counterfactual mean of ``Y_t`` averaged over a distribution of histories.

    ``history="empirical"`` uses every fully observed history window of the
    series; otherwise pass a list of records mapping ``(column, b)`` to the
    value ``b`` steps before the strategy window.
    """
    strategy = _check_strategy(strategy)
    q = len(strategy) - 1
    sch = series.schema
    depth = max([l for m in frame.models.values() for c, l in m.columns if c != "1"] + [1])
    if isinstance(history, str):
        if history != "empirical":
            raise SimulationError("history must be 'empirical' or a list of records")
        cols = [*sch.exposures, sch.outcome, *sch.covariates]
        records = [{(c, b): float(series.data[c][s - b]) for c in cols for b in range(1, depth + 1)}
                   for s in history_records(series, frame, depth)]
    else:
        records = list(history)
    if not records:
        raise SimulationError("no admissible history windows")
    res = simulate_counterfactual(frame, series, t, strategy, cfg, exposure, history=records)
    return MarginalResult(strategy, res.mean, res.lower, res.upper, len(records), res.per_draw)


@dataclass
class RankedStrategy:
    rank: int
    strategy: tuple
    n_active: int
    estimate: float
    lower: float
    upper: float
    observed: bool = True

    def to_dict(self):
        return {"rank": self.rank, "strategy": "".join(map(str, self.strategy)), "n_active": self.n_active,
                "estimate": self.estimate, "lower": self.lower, "upper": self.upper, "observed": self.observed}


def candidate_strategies(q: int, k: int) -> list[tuple]:
    """Binary strategies of length ``q+1`` with at most ``k`` ones."""
    if q > 12:
        raise SimulationError("enumeration bound: q must be <= 12")
    return [s for s in itertools.product((0, 1), repeat=q + 1) if sum(s) <= k]


def recommend_strategy(frame, series, t, q, k, positivity, cfg: McConfig = McConfig(), exposure=None,
                       direction: str = "lower", method: str = "mc") -> list[RankedStrategy]:
    """Rank feasible strategies by their effect on ``Y_t`` against all zeros.

    Strategies whose pattern was never observed in the data are dropped.
    ``direction="lower"`` ranks the most negative effect first. Ties go to
    fewer active entries, then lexicographic order.
    """
    from .estimands import general_effect, estimate as cf_estimate

    if direction not in ("lower", "higher"):
        raise ValueError("direction must be 'lower' or 'higher'")
    if q + 1 > positivity.max_duration:
        raise SimulationError(f"positivity report covers durations up to {positivity.max_duration}, need {q + 1}")
    observed = positivity.observed_patterns(q + 1)
    cands = [s for s in candidate_strategies(q, k) if s in observed]
    if not cands:
        raise SimulationError("all candidate strategies were filtered out by positivity")
    zeros = (0,) * (q + 1)
    rows = []
    if method == "mc":
        base = simulate_path(frame, series, t - q, t, zeros, cfg, exposure)[:, -1]
        for s in cands:
            per = simulate_path(frame, series, t - q, t, s, cfg, exposure)[:, -1] - base
            lo, hi = _percentile(per, cfg.level)
            rows.append((float(per.mean()), lo, hi, s))
    elif method == "closed":
        for s in cands:
            req = Request("GE", strategy=s, exposure=exposure)
            est, lo, hi = cf_estimate(frame, req, t, cfg.level, K=cfg.K, seed=cfg.seed)
            rows.append((est, lo, hi, s))
    else:
        raise ValueError("method must be 'mc' or 'closed'")
    sign = 1.0 if direction == "lower" else -1.0
    rows.sort(key=lambda r: (sign * r[0], sum(r[3]), r[3]))
    return [RankedStrategy(i + 1, s, sum(s), est, lo, hi, True) for i, (est, lo, hi, s) in enumerate(rows)]
