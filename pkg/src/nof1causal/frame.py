"""Per-time coefficients of the outcome and covariate models.

A :class:`CoefficientFrame` is what every estimand reads. Coefficient means
may carry leading batch axes (``(K, n, d)``), in which case every estimand
evaluates elementwise over the batch; :meth:`CoefficientFrame.draw` produces
such batches from the per-time sampling covariances.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .series import COVARIATE, OUTCOME, DagConfig, Schema, design_columns
from .ssm import FittedSsm, coefficient_name


class FrameError(ValueError):
    pass


@dataclass
class ModelCoefs:
    response: str
    role: str
    columns: tuple  # ((column, lag), ...) with ("1", 0) the intercept
    names: tuple
    mean: np.ndarray  # (..., n, d)
    cov: np.ndarray | None  # (n, d, d) sampling covariance, None = exact
    noise_var: float = 0.0

    def __post_init__(self):
        self.columns = tuple((c, int(l)) for c, l in self.columns)
        self.names = tuple(self.names)
        self._index = {k: j for j, k in enumerate(self.columns)}

    def col(self, key) -> int:
        return self._index[key]

    def has(self, key) -> bool:
        return key in self._index


@dataclass
class CoefficientFrame:
    schema: Schema
    dag: DagConfig
    start: int
    models: dict  # response column -> ModelCoefs
    n: int = field(init=False)

    def __post_init__(self):
        ns = {m.mean.shape[-2] for m in self.models.values()}
        if len(ns) != 1:
            raise FrameError("models cover different numbers of time points")
        self.n = ns.pop()
        if self.schema.outcome not in self.models:
            raise FrameError("frame needs an outcome model")
        for c in self.schema.covariates:
            if c not in self.models:
                raise FrameError(f"frame lacks a model for covariate {c!r}")

    @property
    def end(self) -> int:
        return self.start + self.n - 1

    @property
    def batch_shape(self) -> tuple:
        return self.models[self.schema.outcome].mean.shape[:-2]

    def check(self, lo: int, hi: int):
        if lo < self.start or hi > self.end:
            raise FrameError(f"times {lo}..{hi} outside frame range {self.start}..{self.end}")

    def coef(self, response: str, key, t: int):
        """Coefficient of design column ``key`` in ``response``'s model at ``t`` (0 if absent)."""
        m = self.models[response]
        if not m.has(key):
            return 0.0
        i = t - self.start
        if i < 0 or i >= self.n:
            raise FrameError(f"time {t} outside frame range {self.start}..{self.end}")
        return m.mean[..., i, m.col(key)]

    def named(self, response: str, name: str, t: int):
        m = self.models[response]
        return self.coef(response, m.columns[m.names.index(name)], t)

    def window(self, lo: int, hi: int) -> "CoefficientFrame":
        self.check(lo, hi)
        a, b = lo - self.start, hi - self.start + 1
        models = {
            r: replace(m, mean=m.mean[..., a:b, :], cov=None if m.cov is None else m.cov[a:b])
            for r, m in self.models.items()
        }
        return CoefficientFrame(self.schema, self.dag, lo, models)

    def point(self) -> "CoefficientFrame":
        """Drop sampling covariances (coefficients treated as exact)."""
        return CoefficientFrame(self.schema, self.dag, self.start,
                                {r: replace(m, cov=None) for r, m in self.models.items()})

    def draw(self, rng: np.random.Generator, K: int, lo: int | None = None, hi: int | None = None) -> "CoefficientFrame":
        """K independent coefficient draws over ``[lo, hi]``.

        Each model and time is drawn from its own Gaussian; draws are
        independent across times and models.
        """
        if self.batch_shape:
            raise FrameError("cannot draw from an already batched frame")
        lo = self.start if lo is None else lo
        hi = self.end if hi is None else hi
        d = {r: self.models[r].mean.shape[-1] for r in sorted(self.models)}
        z = {r: rng.standard_normal((K, hi - lo + 1, dr)) for r, dr in d.items()}
        return self.draw_from_normals(z, lo, hi)

    def draw_from_normals(self, z: Mapping[str, np.ndarray], lo: int, hi: int) -> "CoefficientFrame":
        """Coefficients from supplied standard normals ``z[response]`` of shape ``(K, n, d)``."""
        w = self.window(lo, hi)
        models = {}
        for r, m in w.models.items():
            if m.cov is None:
                mean = np.broadcast_to(m.mean, z[r].shape).copy()
            else:
                mean = m.mean + np.einsum("nij,knj->kni", cov_sqrt(m.cov), z[r])
            models[r] = replace(m, mean=mean, cov=None)
        return CoefficientFrame(self.schema, self.dag, lo, models)

    def is_time_constant(self) -> bool:
        return all(np.all(m.mean == m.mean[..., :1, :]) for m in self.models.values())

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "dag": self.dag.to_dict(),
            "start": self.start,
            "models": {
                r: {"role": m.role, "columns": [list(c) for c in m.columns], "names": list(m.names),
                    "mean": m.mean.tolist(), "cov": None if m.cov is None else m.cov.tolist(),
                    "noise_var": m.noise_var}
                for r, m in self.models.items()
            },
        }

    @classmethod
    def from_dict(cls, d) -> "CoefficientFrame":
        schema = Schema.from_dict(d["schema"])
        models = {
            r: ModelCoefs(r, m["role"], tuple(tuple(c) for c in m["columns"]), tuple(m["names"]),
                          np.asarray(m["mean"], dtype=float),
                          None if m["cov"] is None else np.asarray(m["cov"], dtype=float),
                          float(m["noise_var"]))
            for r, m in d["models"].items()
        }
        return cls(schema, DagConfig.from_dict(d["dag"]), int(d["start"]), models)


def cov_sqrt(cov: np.ndarray) -> np.ndarray:
    """Square roots ``L`` with ``L L' = cov``, tolerant of PSD input."""
    S = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    w, U = np.linalg.eigh(S)
    return U * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


def from_fits(schema: Schema, dag: DagConfig, outcome: FittedSsm, covariates: Mapping[str, FittedSsm]) -> CoefficientFrame:
    """Assemble a frame from fitted outcome and covariate models on their common range."""
    fits = {schema.outcome: outcome, **covariates}
    lo = max(int(f.times[0]) for f in fits.values())
    hi = min(int(f.times[-1]) for f in fits.values())
    if lo > hi:
        raise FrameError("fitted models have no common time range")
    models = {}
    for r, f in fits.items():
        a, b = lo - int(f.times[0]), hi - int(f.times[0]) + 1
        models[r] = ModelCoefs(r, f.spec.role, f.spec.columns, f.spec.names,
                               np.array(f.mean[a:b]), np.array(f.cov[a:b]), f.V)
    return CoefficientFrame(schema, dag, lo, models)


def from_values(
    schema: Schema,
    values: Mapping[str, Mapping[str, object]],
    n: int,
    start: int = 1,
    dag: DagConfig | None = None,
    noise: Mapping[str, float] | None = None,
    se: Mapping[str, Mapping[str, object]] | None = None,
) -> CoefficientFrame:
    """Frame from named coefficient values.

    ``values[response][name]`` is a scalar (time-constant) or a length-``n``
    array. Unnamed coefficients are 0. ``se`` optionally gives per-coefficient
    standard errors (independent, diagonal covariance).
    """
    dag = dag or DagConfig()
    noise = dict(noise or {})
    models = {}
    roles = [(schema.outcome, OUTCOME)] + [(c, COVARIATE) for c in schema.covariates]
    for resp, role in roles:
        cols = tuple(design_columns(schema, dag, role))
        names = tuple(coefficient_name(schema, role, resp, k) for k in cols)
        given = dict(values.get(resp, {}))
        unknown = set(given) - set(names)
        if unknown:
            raise FrameError(f"unknown coefficients for {resp}: {sorted(unknown)}; have {names}")
        mean = np.zeros((n, len(cols)))
        for j, nm in enumerate(names):
            if nm in given:
                mean[:, j] = np.broadcast_to(np.asarray(given[nm], dtype=float), (n,))
        cov = None
        if se is not None and resp in se:
            sd = np.zeros((n, len(cols)))
            for j, nm in enumerate(names):
                if nm in se[resp]:
                    sd[:, j] = np.broadcast_to(np.asarray(se[resp][nm], dtype=float), (n,))
            cov = np.einsum("ni,ij->nij", sd ** 2, np.eye(len(cols)))
        models[resp] = ModelCoefs(resp, role, cols, names, mean, cov, float(noise.get(resp, 0.0)))
    return CoefficientFrame(schema, dag, start, models)
