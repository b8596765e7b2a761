"""Closed-form lag and total effects for the default DAG.

Outcome model ``Y_t = b0 + rho Y_{t-1} + b1 A_t + b2 A_{t-1} + bc . C_{t-1}``
and covariate models ``C_t = mu0 + rc C_{t-1} + mu1 A_t + mu2 Y_t`` (``rc``
is the matrix of lagged-covariate coefficients across covariate models).
All functions accept batched frames.

The ``*_literal`` variants transcribe the commonly quoted scalar-covariate
formulas symbol for symbol. Some of their covariate-model time subscripts
are off by one, so they agree with the recursion only when coefficients are
constant over the window; they are kept for that comparison.
"""
from __future__ import annotations

import numpy as np


def _terms(frame, exposure, s):
    sch = frame.schema
    y, covs = sch.outcome, sch.covariates
    bshape = frame.batch_shape
    b1 = frame.coef(y, (exposure, 0), s)
    b2 = frame.coef(y, (exposure, 1), s)
    rho = frame.coef(y, (y, 1), s)
    if covs:
        bc = np.stack([np.broadcast_to(frame.coef(y, (c, 1), s), bshape) for c in covs], axis=-1)
        mu1 = np.stack([np.broadcast_to(frame.coef(c, (exposure, 0), s), bshape) for c in covs], axis=-1)
        mu2 = np.stack([np.broadcast_to(frame.coef(c, (y, 0), s), bshape) for c in covs], axis=-1)
        rc = np.stack([
            np.stack([np.broadcast_to(frame.coef(ci, (cj, 1), s), bshape) for cj in covs], axis=-1)
            for ci in covs
        ], axis=-2)
    else:
        bc = mu1 = mu2 = np.zeros(bshape + (0,))
        rc = np.zeros(bshape + (0, 0))
    return b1, b2, rho, bc, mu1, mu2, rc


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def le1(frame, t, exposure):
    b1_t, b2_t, rho_t, bc_t, _, _, _ = _terms(frame, exposure, t)
    b1_p, _, _, _, mu1_p, mu2_p, _ = _terms(frame, exposure, t - 1)
    return b2_t + _dot(bc_t, mu1_p) + rho_t * b1_p + _dot(bc_t, mu2_p) * b1_p


def le2(frame, t, exposure):
    _, _, rho_t, bc_t, _, _, _ = _terms(frame, exposure, t)
    _, b2_1, rho_1, bc_1, _, mu2_1, rc_1 = _terms(frame, exposure, t - 1)
    b1_2, _, _, _, mu1_2, mu2_2, _ = _terms(frame, exposure, t - 2)
    a = rho_t + _dot(bc_t, mu2_1)
    b = np.einsum("...i,...ij->...j", bc_t, rc_1) + np.asarray(a)[..., None] * bc_1
    return a * b2_1 + _dot(b, mu1_2) + a * rho_1 * b1_2 + _dot(b, mu2_2) * b1_2


def te1(frame, t, exposure):
    return frame.coef(frame.schema.outcome, (exposure, 0), t) + le1(frame, t, exposure)


def te2(frame, t, exposure):
    return te1(frame, t, exposure) + le2(frame, t, exposure)


def _scalar_terms(frame, exposure, s):
    if len(frame.schema.covariates) != 1:
        raise ValueError("literal closed forms need exactly one covariate")
    b1, b2, rho, bc, mu1, mu2, rc = _terms(frame, exposure, s)
    return b1, b2, rho, bc[..., 0], mu1[..., 0], mu2[..., 0], rc[..., 0, 0]


def ce_literal(frame, t, exposure):
    return _scalar_terms(frame, exposure, t)[0]


def lde1_literal(frame, t, exposure):
    return _scalar_terms(frame, exposure, t)[1]


def le1_literal(frame, t, exposure):
    b1, b2, rho, bc, mu1, mu2, rc = {}, {}, {}, {}, {}, {}, {}
    for s in (t, t - 1):
        b1[s], b2[s], rho[s], bc[s], mu1[s], mu2[s], rc[s] = _scalar_terms(frame, exposure, s)
    return b2[t] + bc[t] * mu1[t - 1] + rho[t] * b1[t - 1] + bc[t] * mu2[t - 1] * b1[t - 1]


def le2_literal(frame, t, exposure):
    b1, b2, rho, bc, mu1, mu2, rc = {}, {}, {}, {}, {}, {}, {}
    for s in (t, t - 1, t - 2):
        b1[s], b2[s], rho[s], bc[s], mu1[s], mu2[s], rc[s] = _scalar_terms(frame, exposure, s)
    u = t - 1
    v = t - 2
    return ((rho[t] + bc[t] * mu2[u]) * b2[u]
            + (bc[t] * rc[t] + rho[t] * bc[u] + bc[t] * mu2[u] * bc[u]) * mu1[v]
            + (rho[t] + bc[t] * mu2[u]) * rho[u] * b1[v]
            + (bc[t] * rc[u] + rho[t] * bc[u] + bc[t] * mu2[u] * bc[u]) * mu2[v] * b1[v])


def te1_literal(frame, t, exposure):
    b1, b2, rho, bc, mu1, mu2, rc = {}, {}, {}, {}, {}, {}, {}
    for s in (t, t - 1):
        b1[s], b2[s], rho[s], bc[s], mu1[s], mu2[s], rc[s] = _scalar_terms(frame, exposure, s)
    u = t - 1
    return b1[t] + (b2[t] + bc[t] * mu1[u] + rho[t] * b1[u] + bc[t] * mu2[u] * b1[u])


def te2_literal(frame, t, exposure):
    b1, b2, rho, bc, mu1, mu2, rc = {}, {}, {}, {}, {}, {}, {}
    for s in (t, t - 1, t - 2):
        b1[s], b2[s], rho[s], bc[s], mu1[s], mu2[s], rc[s] = _scalar_terms(frame, exposure, s)
    u = t - 1
    v = t - 2
    g = rho[t] + bc[t] * mu2[t]
    h = bc[t] * rc[t] + rho[t] * bc[u] + bc[t] * mu2[t] * bc[u]
    return (b1[t] + (b2[t] + bc[t] * mu1[t] + g * b1[u]) + g * b2[u]
            + h * mu1[u] + g * rho[u] * b1[v] + h * mu2[u] * b1[v])


def cumde_literal(frame, t, exposure):
    b1, b2, *_ = _scalar_terms(frame, exposure, t)
    return b1 + b2
