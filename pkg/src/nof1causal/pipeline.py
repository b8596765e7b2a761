"""Fit every model of a series and assemble the coefficient frame."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .frame import CoefficientFrame, from_fits
from .series import COVARIATE, OUTCOME, DagConfig, Series
from .ssm import FittedSsm, SsmSpec, STATIC, fit_model


@dataclass(frozen=True)
class FitConfig:
    """Regimes per coefficient name, keyed by response column; change-point search settings."""

    regimes: Mapping[str, Mapping[str, object]] = field(default_factory=dict)
    default: str = STATIC
    max_points: int = 2
    stride: int = 7
    min_segment: int = 30
    n_starts: int = 3
    maxfev: int = 500

    @classmethod
    def from_dict(cls, d) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown model-spec fields {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {"regimes": {k: dict(v) for k, v in self.regimes.items()}, "default": self.default,
                "max_points": self.max_points, "stride": self.stride, "min_segment": self.min_segment,
                "n_starts": self.n_starts, "maxfev": self.maxfev}


@dataclass
class FittedSet:
    outcome: FittedSsm
    covariates: dict
    frame: CoefficientFrame

    @property
    def fits(self) -> dict:
        return {self.outcome.spec.response: self.outcome, **self.covariates}


def fit_all(series: Series, dag: DagConfig | None = None, cfg: FitConfig | None = None) -> FittedSet:
    dag = dag or DagConfig()
    cfg = cfg or FitConfig()
    sch = series.schema
    unknown = set(cfg.regimes) - {sch.outcome, *sch.covariates}
    if unknown:
        raise ValueError(f"regimes given for unknown responses {sorted(unknown)}")
    kw = dict(max_points=cfg.max_points, stride=cfg.stride, min_segment=cfg.min_segment,
              n_starts=cfg.n_starts, maxfev=cfg.maxfev)

    def one(role, resp):
        spec = SsmSpec.build(sch, dag, role, resp, cfg.regimes.get(resp), cfg.default)
        return fit_model(spec, series, dag, **kw)

    out = one(OUTCOME, sch.outcome)
    covs = {c: one(COVARIATE, c) for c in sch.covariates}
    return FittedSet(out, covs, from_fits(sch, dag, out, covs))
