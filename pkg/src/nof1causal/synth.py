"""Synthetic N-of-1 series with known, possibly time-varying, coefficients.

Generation follows the default DAG within each time step: the exposure is
drawn from a logistic model in the lagged history (confounded assignment),
then the outcome, then each covariate. The exact coefficient trajectories are
returned as a :class:`~nof1causal.frame.CoefficientFrame` with no sampling
uncertainty, which serves as ground truth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from . import estimands
from .frame import CoefficientFrame, from_values
from .series import COVARIATE, OUTCOME, DagConfig, Schema, Series, from_arrays
from .ssm import coefficient_name
from .series import design_columns


class TruthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """A coefficient path over t = 1..T.

    ``constant``: ``value``; ``piecewise``: ``values[i]`` from
    ``change_points[i-1]`` (inclusive) onwards; ``random_walk``: starts at
    ``value`` with increments of variance ``variance``.
    """

    kind: str = "constant"
    value: float = 0.0
    values: tuple = ()
    change_points: tuple = ()
    variance: float = 0.0

    @classmethod
    def parse(cls, v) -> "Trajectory":
        if isinstance(v, Trajectory):
            return v
        if isinstance(v, (int, float)):
            return cls("constant", float(v))
        d = dict(v)
        if "piecewise" in d:
            p = d["piecewise"]
            return cls("piecewise", values=tuple(float(x) for x in p["values"]),
                       change_points=tuple(int(c) for c in p["change_points"]))
        if "random_walk" in d:
            r = d["random_walk"]
            return cls("random_walk", value=float(r.get("start", 0.0)), variance=float(r["variance"]))
        if "constant" in d:
            return cls("constant", float(d["constant"]))
        raise TruthSpecError(f"cannot parse trajectory {v!r}")

    def to_json(self):
        if self.kind == "constant":
            return self.value
        if self.kind == "piecewise":
            return {"piecewise": {"values": list(self.values), "change_points": list(self.change_points)}}
        return {"random_walk": {"start": self.value, "variance": self.variance}}

    def validate(self, T: int):
        if self.kind == "piecewise":
            if len(self.values) != len(self.change_points) + 1:
                raise TruthSpecError("piecewise trajectory needs one more value than change points")
            cps = list(self.change_points)
            if cps != sorted(set(cps)) or any(c <= 1 or c >= T for c in cps):
                raise TruthSpecError(f"change points {cps} must be increasing and inside (1, {T})")
        if self.kind == "random_walk" and self.variance < 0:
            raise TruthSpecError("random-walk variance must be non-negative")
        if not np.all(np.isfinite([self.value, *self.values])):
            raise TruthSpecError("non-finite coefficient value")

    def realize(self, T: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(T, self.value)
        if self.kind == "piecewise":
            out = np.empty(T)
            bounds = [1, *self.change_points, T + 1]
            for v, a, b in zip(self.values, bounds, bounds[1:]):
                out[a - 1 : b - 1] = v
            return out
        steps = rng.normal(0.0, np.sqrt(self.variance), T)
        steps[0] = 0.0
        return self.value + np.cumsum(steps)


def _default_outcome():
    return {"beta0": 0.5, "rho": 0.5, "beta1": -1.0, "beta2": -0.3, "beta_C": 0.2}


def _default_covariates():
    return {"C": {"mu0": 0.0, "rho_C": 0.4, "mu1": 0.5, "mu2": -0.2}}


def _default_exposure():
    return {"A": {"intercept": 0.0, "A": 0.5, "Y": 0.4, "C": 0.3}}


@dataclass(frozen=True)
class TruthSpec:
    """Ground-truth data-generating process.

    Coefficient dictionaries are keyed by the conventional coefficient names
    of the fitted models (``beta0``, ``rho``, ``beta1``, ...); absent
    coefficients are zero. ``exposure_model[a]`` holds logistic coefficients
    keyed by ``intercept`` and by lag-1 parent column names.
    """

    T: int = 600
    seed: int = 0
    exposures: tuple = ("A",)
    outcome: str = "Y"
    covariates: tuple = ("C",)
    outcome_coefficients: Mapping = field(default_factory=_default_outcome)
    covariate_coefficients: Mapping = field(default_factory=_default_covariates)
    exposure_model: Mapping = field(default_factory=_default_exposure)
    V: float = 1.0
    U: Mapping | float = 1.0
    epsilon: float = 0.05
    missing_rate: float = 0.0
    baseline: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "exposures", tuple(self.exposures))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.T < 3:
            raise TruthSpecError("T must be at least 3")
        if not 0 < self.epsilon < 0.5:
            raise TruthSpecError("epsilon must lie in (0, 0.5)")
        if self.V <= 0:
            raise TruthSpecError("V must be positive")
        if not 0 <= self.missing_rate < 1:
            raise TruthSpecError("missing_rate must lie in [0, 1)")
        sch = self.schema
        out_names = self._names(OUTCOME, self.outcome)
        self._check_keys(self.outcome_coefficients, out_names, "outcome")
        for c in self.covariates:
            self._check_keys(self.covariate_coefficients.get(c, {}), self._names(COVARIATE, c), f"covariate {c}")
        extra = set(self.covariate_coefficients) - set(self.covariates)
        if extra:
            raise TruthSpecError(f"coefficients for undeclared covariates {sorted(extra)}")
        for a, coefs in self.exposure_model.items():
            if a not in sch.exposures:
                raise TruthSpecError(f"exposure model for undeclared exposure {a!r}")
            allowed = {"intercept", *sch.exposures, sch.outcome, *sch.covariates}
            bad = set(coefs) - allowed
            if bad:
                raise TruthSpecError(f"unknown exposure-model terms {sorted(bad)}")
            if not np.all(np.isfinite(list(coefs.values()))):
                raise TruthSpecError("logistic coefficients must be finite")
        for traj in self._trajectories().values():
            traj.validate(self.T)

    @property
    def schema(self) -> Schema:
        return Schema(self.exposures, self.outcome, self.covariates)

    def _names(self, role, response):
        cols = design_columns(self.schema, DagConfig(), role)
        return [coefficient_name(self.schema, role, response, k) for k in cols]

    @staticmethod
    def _check_keys(d, names, what):
        bad = set(d) - set(names)
        if bad:
            raise TruthSpecError(f"unknown {what} coefficients {sorted(bad)}; expected a subset of {names}")

    def _trajectories(self) -> dict:
        out = {(self.outcome, k): Trajectory.parse(v) for k, v in self.outcome_coefficients.items()}
        for c in self.covariates:
            for k, v in self.covariate_coefficients.get(c, {}).items():
                out[(c, k)] = Trajectory.parse(v)
        return out

    def noise_var(self, covariate: str) -> float:
        return float(self.U[covariate]) if isinstance(self.U, Mapping) else float(self.U)

    def to_dict(self) -> dict:
        return {
            "T": self.T, "seed": self.seed,
            "exposures": list(self.exposures), "outcome": self.outcome, "covariates": list(self.covariates),
            "outcome_coefficients": {k: Trajectory.parse(v).to_json() for k, v in self.outcome_coefficients.items()},
            "covariate_coefficients": {
                c: {k: Trajectory.parse(v).to_json() for k, v in d.items()}
                for c, d in self.covariate_coefficients.items()
            },
            "exposure_model": {a: dict(d) for a, d in self.exposure_model.items()},
            "V": self.V, "U": dict(self.U) if isinstance(self.U, Mapping) else self.U,
            "epsilon": self.epsilon, "missing_rate": self.missing_rate, "baseline": dict(self.baseline),
        }

    @classmethod
    def from_dict(cls, d) -> "TruthSpec":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise TruthSpecError(f"unknown truth-spec fields {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TruthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Synthetic:
    series: Series
    truth: CoefficientFrame
    propensity: np.ndarray  # (T, n_exposures) assignment probabilities


def generate(spec: TruthSpec) -> Synthetic:
    rng = np.random.default_rng(spec.seed)
    T, sch = spec.T, spec.schema
    # coefficient paths first so random-walk truths do not depend on the data draws
    values = {spec.outcome: {}}
    for (resp, name), traj in sorted(spec._trajectories().items()):
        values.setdefault(resp, {})[name] = traj.realize(T, rng)
    noise = {spec.outcome: spec.V, **{c: spec.noise_var(c) for c in spec.covariates}}
    truth = from_values(sch, values, T, start=1, noise=noise)

    nA, nC = len(sch.exposures), len(sch.covariates)
    A = np.zeros((T + 1, nA))
    Y = np.zeros(T + 1)
    C = np.zeros((T + 1, nC))
    base = dict(spec.baseline)
    Y[0] = base.get(spec.outcome, 0.0)
    for i, a in enumerate(sch.exposures):
        A[0, i] = base.get(a, 0.0)
    for i, c in enumerate(sch.covariates):
        C[0, i] = base.get(c, 0.0)
    prop = np.zeros((T, nA))
    col = {a: ("A", i) for i, a in enumerate(sch.exposures)}
    col[sch.outcome] = ("Y", 0)
    col.update({c: ("C", i) for i, c in enumerate(sch.covariates)})

    def lagged(name, s):
        kind, i = col[name]
        return A[s, i] if kind == "A" else (Y[s] if kind == "Y" else C[s, i])

    om = truth.models[sch.outcome]
    cms = [truth.models[c] for c in sch.covariates]
    sdV = np.sqrt(spec.V)
    sdU = [np.sqrt(spec.noise_var(c)) for c in sch.covariates]
    for t in range(1, T + 1):
        for i, a in enumerate(sch.exposures):
            coefs = spec.exposure_model.get(a, {})
            eta = coefs.get("intercept", 0.0) + sum(v * lagged(k, t - 1) for k, v in coefs.items() if k != "intercept")
            p = float(np.clip(expit(eta), spec.epsilon, 1 - spec.epsilon))
            prop[t - 1, i] = p
            A[t, i] = float(rng.random() < p)
        Y[t] = _linear(om, t, lagged) + sdV * rng.standard_normal()
        for i, m in enumerate(cms):
            C[t, i] = _linear(m, t, lagged) + sdU[i] * rng.standard_normal()

    Yobs = Y[1:].copy()
    if spec.missing_rate > 0:
        Yobs[rng.random(T) < spec.missing_rate] = np.nan
    baseline = {a: A[0, i] for i, a in enumerate(sch.exposures)}
    baseline[sch.outcome] = Y[0]
    baseline.update({c: C[0, i] for i, c in enumerate(sch.covariates)})
    series = from_arrays(sch, A[1:], Yobs, C[1:], baseline=baseline if spec.baseline else None)
    return Synthetic(series, truth, prop)


def _linear(model, t, lagged):
    mean = model.mean[t - 1]
    total = 0.0
    for j, (c, lag) in enumerate(model.columns):
        total += mean[j] * (1.0 if c == "1" else lagged(c, t - lag))
    return total


def ground_truth_estimand(truth: CoefficientFrame, name: str, t: int, q: int | None = None, strategy=None,
                          exposure: str | None = None, horizon: int | None = None) -> float:
    """An estimand evaluated on the exact truth frame."""
    req = estimands.Request(name, q=q, strategy=None if strategy is None else tuple(strategy),
                            horizon=horizon, exposure=exposure)
    return float(req.evaluate(truth.point(), t))
