"""Time-varying-coefficient regression models fitted by the Kalman filter.

Each response (the outcome, or one covariate) gets its own scalar-response
model whose state is the coefficient vector of its design row. Coefficients
follow one of three regimes:

* ``static``: constant over the whole series (state noise 0);
* ``random_walk``: state noise variance estimated by maximum likelihood;
* ``periodic``: constant within segments separated by change points. At each
  change point the coefficient's variance is inflated by the diffuse scale so
  the next segment starts afresh.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from . import kalman
from .series import (
    COVARIATE,
    EXPOSURE,
    OUTCOME,
    DagConfig,
    Schema,
    Series,
    design_columns,
)

log = logging.getLogger(__name__)

STATIC = "static"
RANDOM_WALK = "random_walk"
PERIODIC = "periodic"

DEFAULT_KAPPA = 1e7


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Regime:
    kind: str = STATIC
    # None on a periodic regime means "to be inferred"
    change_points: tuple[int, ...] | None = ()

    def __post_init__(self):
        if self.kind not in (STATIC, RANDOM_WALK, PERIODIC):
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.change_points is not None:
            cps = tuple(int(c) for c in self.change_points)
            if list(cps) != sorted(set(cps)):
                raise ValueError("change points must be strictly increasing")
            if cps and self.kind != PERIODIC:
                raise ValueError("only periodic regimes carry change points")
            object.__setattr__(self, "change_points", cps)

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, Regime):
            return value
        if isinstance(value, str):
            return cls(value, None if value == PERIODIC else ())
        d = dict(value)
        cps = d.get("change_points", None if d["kind"] == PERIODIC else ())
        return cls(d["kind"], None if cps is None else tuple(cps))

    def to_dict(self):
        return {"kind": self.kind, "change_points": None if self.change_points is None else list(self.change_points)}


def coefficient_name(schema: Schema, role: str, response: str, key: tuple[str, int]) -> str:
    """Conventional symbol for a design column, e.g. ``beta1``, ``rho``, ``mu2``."""
    col, lag = key
    if col == "1":
        return "beta0" if role == OUTCOME else "mu0"
    prole = schema.role_of(col)
    n_exp = len(schema.exposures)
    if role == OUTCOME:
        if prole == OUTCOME:
            return "rho" if lag == 1 else f"rho_lag{lag}"
        if prole == EXPOSURE:
            if n_exp == 1:
                return f"beta{lag + 1}"
            return f"beta{schema.exposures.index(col) + 1}{lag + 1}"
        return f"beta_{col}" if lag == 1 else f"beta_{col}_lag{lag}"
    if role == COVARIATE:
        if prole == COVARIATE:
            base = f"rho_{response}" if col == response else f"rho_{response}_{col}"
            return base if lag == 1 else f"{base}_lag{lag}"
        if prole == EXPOSURE:
            i = schema.exposures.index(col) + 1
            return f"mu{i}" if lag == 0 else f"mu{i}_lag{lag}"
        return f"mu{n_exp + 1}" if lag == 0 else f"mu_{col}_lag{lag}"
    return f"gamma_{col}_lag{lag}"


@dataclass(frozen=True)
class SsmSpec:
    role: str
    response: str
    columns: tuple[tuple[str, int], ...]
    names: tuple[str, ...]
    regimes: tuple[Regime, ...]
    m0: tuple[float, ...] | None = None
    C0: tuple[tuple[float, ...], ...] | None = None
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        d = len(self.columns)
        if len(self.names) != d or len(self.regimes) != d:
            raise ValueError("need exactly one name and one regime per design column")
        if len(set(self.names)) != d:
            raise ValueError(f"duplicate coefficient names {self.names}")
        if self.C0 is not None:
            C0 = np.asarray(self.C0, dtype=float)
            if C0.shape != (d, d):
                raise ValueError("C0 has wrong shape")
            kalman._check_psd(C0)

    @property
    def dim(self) -> int:
        return len(self.columns)

    @classmethod
    def build(
        cls,
        schema: Schema,
        dag: DagConfig,
        role: str,
        response: str | None = None,
        regimes: Mapping[str, Regime | str | dict] | None = None,
        default: str = STATIC,
        **kw,
    ) -> "SsmSpec":
        response = response or schema.columns(role)[0]
        cols = tuple(design_columns(schema, dag, role))
        names = tuple(coefficient_name(schema, role, response, k) for k in cols)
        regimes = dict(regimes or {})
        unknown = set(regimes) - set(names)
        if unknown:
            raise ValueError(f"regimes given for unknown coefficients {sorted(unknown)}; have {names}")
        regs = tuple(Regime.parse(regimes.get(n, default)) for n in names)
        return cls(role=role, response=response, columns=cols, names=names, regimes=regs, **kw)

    def with_regime(self, name: str, regime: Regime) -> "SsmSpec":
        regs = list(self.regimes)
        regs[self.names.index(name)] = regime
        return replace(self, regimes=tuple(regs))

    def init(self):
        d = self.dim
        m0 = np.zeros(d) if self.m0 is None else np.asarray(self.m0, dtype=float)
        C0 = self.kappa * np.eye(d) if self.C0 is None else np.asarray(self.C0, dtype=float)
        return m0, C0

    @property
    def random_walk_index(self) -> list[int]:
        return [j for j, r in enumerate(self.regimes) if r.kind == RANDOM_WALK]

    def state_noise(self, times: np.ndarray, w_rw: Sequence[float]) -> np.ndarray:
        """Per-step diagonal state noise for the given random-walk variances."""
        n, d = len(times), self.dim
        W = np.zeros((n, d))
        for j, w in zip(self.random_walk_index, w_rw):
            W[:, j] = w
        for j, r in enumerate(self.regimes):
            if r.kind == PERIODIC and r.change_points:
                idx = np.searchsorted(times, r.change_points)
                for i, c in zip(idx, r.change_points):
                    if i >= n or times[i] != c or i == 0:
                        raise ValueError(f"change point {c} must lie strictly inside the modelling range")
                    W[i, j] += self.kappa
        return W

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "response": self.response,
            "columns": [list(c) for c in self.columns],
            "names": list(self.names),
            "regimes": [r.to_dict() for r in self.regimes],
            "kappa": self.kappa,
        }

    @classmethod
    def from_dict(cls, d) -> "SsmSpec":
        return cls(
            role=d["role"],
            response=d["response"],
            columns=tuple((c, int(l)) for c, l in d["columns"]),
            names=tuple(d["names"]),
            regimes=tuple(Regime.parse(r) for r in d["regimes"]),
            kappa=float(d.get("kappa", DEFAULT_KAPPA)),
        )


@dataclass
class FittedSsm:
    spec: SsmSpec
    times: np.ndarray
    V: float
    W: dict  # name -> random-walk variance (0 for static/periodic)
    mean: np.ndarray  # (n, d) smoothed coefficient means
    cov: np.ndarray  # (n, d, d) smoothed coefficient covariances
    loglik: float  # diffuse-corrected
    loglik_raw: float
    n_used: int
    converged: bool = True
    nfev: int = 0
    n_hyper: int = 1
    notes: list = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diagonal(self.cov, axis1=1, axis2=2), 0.0, None))

    @property
    def change_points(self) -> dict:
        return {n: list(r.change_points) for n, r in zip(self.spec.names, self.spec.regimes) if r.kind == PERIODIC}

    def index(self, t: int) -> int:
        i = int(t - self.times[0])
        if i < 0 or i >= len(self.times):
            raise IndexError(f"time {t} outside fitted range {self.times[0]}..{self.times[-1]}")
        return i

    def coefficient(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        j = self.spec.names.index(name)
        return self.mean[:, j], self.se[:, j]

    @property
    def n_params(self) -> int:
        """Free parameters counted by BIC: hyperparameters plus coefficient values."""
        k = self.n_hyper
        for r in self.spec.regimes:
            k += 1 + (len(r.change_points) if r.kind == PERIODIC and r.change_points else 0)
        return k

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * math.log(self.n_used)

    def segments(self, name: str) -> list[tuple[int, int]]:
        j = self.spec.names.index(name)
        r = self.spec.regimes[j]
        cps = list(r.change_points or ()) if r.kind == PERIODIC else []
        bounds = [int(self.times[0]), *cps, int(self.times[-1]) + 1]
        return [(bounds[i], bounds[i + 1] - 1) for i in range(len(bounds) - 1)]

    def table(self, level: float = 0.90) -> list[dict]:
        """Coefficient summary, one row per coefficient (per segment if periodic).

        Random-walk coefficients are reported by regime only.
        """
        z = stats.norm.ppf(0.5 + level / 2)
        se = self.se
        rows = []
        for j, (name, r) in enumerate(zip(self.spec.names, self.spec.regimes)):
            if r.kind == RANDOM_WALK:
                rows.append({"variable": name, "regime": RANDOM_WALK, "segment": None,
                             "start": int(self.times[0]), "end": int(self.times[-1]),
                             "estimate": None, "se": None, "lower": None, "upper": None,
                             "significant": None, "state_variance": self.W[name]})
                continue
            segs = self.segments(name)
            for k, (a, b) in enumerate(segs, start=1):
                i = self.index(b)
                est, s = float(self.mean[i, j]), float(se[i, j])
                lo, hi = est - z * s, est + z * s
                rows.append({"variable": name, "regime": r.kind,
                             "segment": k if len(segs) > 1 else None,
                             "start": a, "end": b, "estimate": est, "se": s,
                             "lower": lo, "upper": hi,
                             "significant": bool(lo > 0 or hi < 0), "state_variance": 0.0})
        return rows

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "times": [int(t) for t in self.times],
            "V": self.V,
            "W": self.W,
            "change_points": self.change_points,
            "loglik": self.loglik,
            "loglik_raw": self.loglik_raw,
            "bic": self.bic,
            "n_used": self.n_used,
            "n_hyper": self.n_hyper,
            "converged": self.converged,
            "nfev": self.nfev,
            "notes": list(self.notes),
            "mean": self.mean.tolist(),
            "se": self.se.tolist(),
            "cov": self.cov.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FittedSsm":
        return cls(
            spec=SsmSpec.from_dict(d["spec"]),
            times=np.asarray(d["times"], dtype=int),
            V=float(d["V"]),
            W={k: float(v) for k, v in d["W"].items()},
            mean=np.asarray(d["mean"], dtype=float),
            cov=np.asarray(d["cov"], dtype=float),
            loglik=float(d["loglik"]),
            loglik_raw=float(d["loglik_raw"]),
            n_used=int(d["n_used"]),
            converged=bool(d["converged"]),
            nfev=int(d["nfev"]),
            n_hyper=int(d.get("n_hyper", 1)),
            notes=list(d.get("notes", [])),
        )


def model_data(spec: SsmSpec, series: Series, dag: DagConfig | None = None):
    """``(times, y, F)`` for the spec's response, built from its design columns."""
    dag = dag or DagConfig()
    start = max(dag.max_lag, *(lag for _, lag in spec.columns)) + 1
    times = np.arange(start, series.T + 1)
    F = np.ones((len(times), spec.dim))
    for j, (col, lag) in enumerate(spec.columns):
        if col != "1":
            F[:, j] = series.data[col][times - lag]
    y = np.array(series.data[spec.response][times], dtype=float)
    bad = np.isnan(F).any(axis=1)
    y[bad] = np.nan
    F[bad] = 0.0
    return times, y, F


def _filter(spec, times, y, F, V, w_rw):
    m0, C0 = spec.init()
    return kalman.kalman_filter(y, F, V, spec.state_noise(times, w_rw), m0, C0, kappa=spec.kappa)


def smooth_fixed(spec: SsmSpec, series: Series, V: float, W: Mapping[str, float] | None = None,
                 dag: DagConfig | None = None) -> FittedSsm:
    """Filter and smooth with given variances (no optimisation)."""
    times, y, F = model_data(spec, series, dag)
    W = dict(W or {})
    w_rw = [W.get(spec.names[j], 0.0) for j in spec.random_walk_index]
    return _assemble(spec, times, y, F, V, w_rw, converged=True, nfev=0)


def _assemble(spec, times, y, F, V, w_rw, converged, nfev, notes=()):
    fr = _filter(spec, times, y, F, V, w_rw)
    sm = kalman.kalman_smooth(fr)
    W = {n: 0.0 for n in spec.names}
    for j, w in zip(spec.random_walk_index, w_rw):
        W[spec.names[j]] = float(w)
    n_used = int(np.sum(~np.isnan(y)))
    n_missing = len(y) - n_used
    notes = list(notes)
    if n_missing:
        msg = f"{n_missing} prediction-only steps (missing response or parents)"
        log.info("%s: %s", spec.response, msg)
        notes.append(msg)
    return FittedSsm(
        spec=spec, times=times, V=float(V), W=W, mean=sm.s, cov=sm.S,
        loglik=fr.loglik_diffuse, loglik_raw=fr.loglik, n_used=n_used,
        converged=converged, nfev=nfev, n_hyper=1 + len(spec.random_walk_index), notes=notes,
    )


def fit_mle(
    spec: SsmSpec,
    series: Series,
    dag: DagConfig | None = None,
    n_starts: int = 3,
    maxfev: int = 500,
    min_rows_per_param: int = 10,
) -> FittedSsm:
    """Maximum-likelihood variances, then smoothed coefficients.

    Optimises ``log V`` and ``log W_j`` for random-walk coefficients with
    Nelder-Mead from ``n_starts`` deterministic starting points. Standard
    errors come from the smoothed covariance and ignore uncertainty in the
    variances.
    """
    if any(r.kind == PERIODIC and r.change_points is None for r in spec.regimes):
        raise FitError("periodic coefficients with unknown change points: use infer_change_points first")
    times, y, F = model_data(spec, series, dag)
    ok = ~np.isnan(y)
    n_used = int(ok.sum())
    rw = spec.random_walk_index
    n_free = 1 + len(rw)
    if n_used < min_rows_per_param * n_free:
        raise FitError(f"{n_used} usable rows for {n_free} free variances; need >= {min_rows_per_param} per parameter")
    if np.ptp(y[ok]) == 0:
        raise FitError(f"degenerate data: response {spec.response!r} is constant")

    beta, *_ = np.linalg.lstsq(F[ok], y[ok], rcond=None)
    v0 = max(float(np.var(y[ok] - F[ok] @ beta)), 1e-8 * float(np.var(y[ok])) + 1e-12)
    m0, C0 = spec.init()

    def nll(x):
        V = math.exp(x[0])
        W = spec.state_noise(times, np.exp(x[1:]))
        val = kalman.loglik(y, F, V, W, m0, C0, spec.kappa)
        return -val if np.isfinite(val) else 1e300

    scales = [(1.0, 1e-2), (0.5, 1e-4), (2.0, 1e-1), (1.0, 1e-3), (1.5, 1e-5)]
    starts = []
    for i in range(n_starts):
        vs, ws = scales[i % len(scales)]
        starts.append(np.array([math.log(v0 * vs), *([math.log(v0 * ws)] * len(rw))]))

    best, nfev, converged = None, 0, False
    for x0 in starts:
        res = optimize.minimize(nll, x0, method="Nelder-Mead",
                                options={"maxfev": maxfev, "xatol": 1e-5, "fatol": 1e-7})
        nfev += res.nfev
        if best is None or res.fun < best.fun:
            best, converged = res, bool(res.success)
    notes = [] if converged else [f"optimizer did not converge: {best.message}"]
    if not converged:
        log.warning("%s: optimizer did not converge within budget; returning best point", spec.response)
    V = math.exp(best.x[0])
    w_rw = np.exp(best.x[1:])
    return _assemble(spec, times, y, F, V, w_rw, converged=converged, nfev=nfev, notes=notes)


@dataclass
class ChangePointResult:
    coefficient: str
    change_points: tuple[int, ...]
    bic: float
    fitted: FittedSsm
    segments: list  # (start, end, estimate, se)
    candidates_evaluated: int


def candidate_grid(times: np.ndarray, stride: int = 7, min_segment: int = 30) -> list[int]:
    first, last = int(times[0]), int(times[-1])
    return list(range(first + min_segment, last - min_segment + 2, stride))


def _valid(cps, first, last, min_segment):
    bounds = [first, *cps, last + 1]
    return all(b - a >= min_segment for a, b in zip(bounds, bounds[1:]))


def infer_change_points(
    spec: SsmSpec,
    series: Series,
    coefficient: str,
    max_points: int = 2,
    stride: int = 7,
    min_segment: int = 30,
    dag: DagConfig | None = None,
    base: FittedSsm | None = None,
    **fit_kw,
) -> ChangePointResult:
    """Grid search for the change points of one periodic coefficient by BIC.

    Variances are held at the no-change-point fit during the search (or at
    ``base`` if given) and re-estimated for the selected configuration. Ties
    go to fewer change points, then earlier positions.
    """
    if max_points not in (0, 1, 2, 3):
        raise ValueError("max_points must be 0, 1, 2 or 3")
    j = spec.names.index(coefficient)
    if spec.regimes[j].kind != PERIODIC:
        raise ValueError(f"coefficient {coefficient!r} is not declared periodic")
    times, y, F = model_data(spec, series, dag)
    first, last = int(times[0]), int(times[-1])
    if last - first + 1 < min_segment * (1 + min(max_points, 1)):
        raise FitError(f"series too short ({last - first + 1} rows) for minimum segment length {min_segment}")

    spec0 = spec.with_regime(coefficient, Regime(PERIODIC, ()))
    if base is None:
        base = fit_mle(spec0, series, dag, **fit_kw)
    V = base.V
    w_rw = [base.W[spec.names[i]] for i in spec.random_walk_index]
    m0, C0 = spec.init()
    logn = math.log(base.n_used)
    k0 = base.n_params

    grid = candidate_grid(times, stride, min_segment)
    best_cps, best_bic, n_eval = (), None, 0
    for npts in range(max_points + 1):
        for cps in itertools.combinations(grid, npts):
            if not _valid(cps, first, last, min_segment):
                continue
            s = spec.with_regime(coefficient, Regime(PERIODIC, cps))
            ll = kalman.loglik(y, F, V, s.state_noise(times, w_rw), m0, C0, spec.kappa)
            n_eval += 1
            bic = -2.0 * ll + (k0 + npts) * logn
            if best_bic is None or bic < best_bic - 1e-9:
                best_cps, best_bic = cps, bic

    final_spec = spec.with_regime(coefficient, Regime(PERIODIC, best_cps))
    fitted = fit_mle(final_spec, series, dag, **fit_kw) if best_cps else replace(base, spec=final_spec)
    segs = []
    mean, se = fitted.coefficient(coefficient)
    for a, b in fitted.segments(coefficient):
        i = fitted.index(b)
        segs.append((a, b, float(mean[i]), float(se[i])))
    return ChangePointResult(coefficient, tuple(best_cps), fitted.bic, fitted, segs, n_eval)


def fit_model(
    spec: SsmSpec,
    series: Series,
    dag: DagConfig | None = None,
    max_points: int = 2,
    stride: int = 7,
    min_segment: int = 30,
    **fit_kw,
) -> FittedSsm:
    """Fit a spec, inferring change points for periodic coefficients that lack them.

    Unknown change-point sets are searched one coefficient at a time, in
    design order, each with the previously resolved ones held fixed.
    """
    pending = [n for n, r in zip(spec.names, spec.regimes) if r.kind == PERIODIC and r.change_points is None]
    if not pending:
        return fit_mle(spec, series, dag, **fit_kw)
    current = spec
    for name in pending:
        current = current.with_regime(name, Regime(PERIODIC, ()))
    result = None
    for name in pending:
        result = infer_change_points(current, series, name, max_points, stride, min_segment, dag, **fit_kw)
        current = result.fitted.spec
    return result.fitted
