"""Scalar-response Kalman filter and RTS smoother with identity transition.

The state is a vector of regression coefficients, ``G_t = I``, and the state
noise is diagonal, possibly time-varying (``wdiag[t]``). A large diagonal
entry at a single step acts as a reinitialisation of that coefficient.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class FilterError(ArithmeticError):
    pass


@numba.njit(cache=True)
def _filter_kernel(y, F, m0, C0, wdiag, V, store):
    n, d = F.shape
    m = m0.copy()
    C = C0.copy()
    ms = np.empty((n, d)) if store else np.empty((0, d))
    Cs = np.empty((n, d, d)) if store else np.empty((0, d, d))
    Rs = np.empty((n, d, d)) if store else np.empty((0, d, d))
    Q = np.zeros(n)
    e = np.full(n, np.nan)
    ll = np.zeros(n)
    RF = np.empty(d)
    for t in range(n):
        R = C.copy()
        for j in range(d):
            R[j, j] += wdiag[t, j]
        if store:
            Rs[t] = R
        yt = y[t]
        if np.isnan(yt):
            Q[t] = np.nan
            C = R
        else:
            f = 0.0
            for i in range(d):
                f += F[t, i] * m[i]
                acc = 0.0
                for j in range(d):
                    acc += R[i, j] * F[t, j]
                RF[i] = acc
            q = V
            for i in range(d):
                q += F[t, i] * RF[i]
            if not q > 0.0:
                Q[t] = q
                return ms, Cs, Rs, Q, e, ll, t
            err = yt - f
            Q[t] = q
            e[t] = err
            ll[t] = -0.5 * (1.8378770664093453 + math.log(q) + err * err / q)
            Cn = np.empty((d, d))
            for i in range(d):
                m[i] += RF[i] * err / q
                for j in range(i + 1):
                    v = R[i, j] - RF[i] * RF[j] / q
                    Cn[i, j] = v
                    Cn[j, i] = v
            C = Cn
        if store:
            ms[t] = m
            Cs[t] = C
    return ms, Cs, Rs, Q, e, ll, -1


@dataclass
class FilterResult:
    m: np.ndarray  # (n, d) filtered means
    C: np.ndarray  # (n, d, d) filtered covariances
    R: np.ndarray  # (n, d, d) one-step predicted covariances
    Q: np.ndarray  # (n,) innovation variances, NaN on prediction-only steps
    e: np.ndarray  # (n,) innovations
    ll: np.ndarray  # (n,) per-step log-likelihood contributions
    m0: np.ndarray
    C0: np.ndarray
    n_diffuse: int = 0
    kappa: float = 0.0

    @property
    def loglik(self) -> float:
        return float(self.ll.sum())

    @property
    def loglik_diffuse(self) -> float:
        """Log-likelihood with the diffuse-prior scale removed.

        Each step whose innovation variance is dominated by the diffuse prior
        contributes ``-log(kappa)/2`` that does not depend on the data; adding
        it back makes the value comparable across models with different
        numbers of diffuse components.
        """
        return self.loglik + 0.5 * self.n_diffuse * math.log(self.kappa) if self.kappa > 1 else self.loglik


def _as_wdiag(W, n, d):
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        W = np.full(d, float(W))
    if W.ndim == 1:
        W = np.broadcast_to(W, (n, d))
    if W.shape != (n, d):
        raise ValueError(f"state noise must have shape ({d},) or ({n}, {d}); got {W.shape}")
    return np.ascontiguousarray(W)


def _check_psd(C0):
    if not np.allclose(C0, C0.T, atol=1e-10 * max(1.0, np.abs(C0).max())):
        raise FilterError("initial covariance is not symmetric")
    if np.linalg.eigvalsh(C0).min() < -1e-8 * max(1.0, np.abs(C0).max()):
        raise FilterError("initial covariance is not positive semidefinite")


def _n_diffuse(Q, V, kappa):
    if kappa <= 1:
        return 0
    return int(np.sum(Q > math.sqrt(kappa) * V))


def kalman_filter(y, F, V, W, m0=None, C0=None, kappa=None) -> FilterResult:
    """Run the filter over responses ``y`` with design rows ``F``.

    ``W`` is a diagonal state-noise vector (static) or an ``(n, d)`` array of
    per-step diagonals. NaN responses produce prediction-only steps.
    ``kappa`` is the diffuse prior scale used to identify diffuse steps; it
    defaults to the largest diagonal of ``C0``.
    """
    y = np.ascontiguousarray(y, dtype=float)
    F = np.ascontiguousarray(F, dtype=float)
    n, d = F.shape
    if y.shape != (n,):
        raise ValueError("response length does not match design rows")
    m0 = np.zeros(d) if m0 is None else np.asarray(m0, dtype=float)
    C0 = 1e7 * np.eye(d) if C0 is None else np.asarray(C0, dtype=float)
    if m0.shape != (d,) or C0.shape != (d, d):
        raise ValueError("initial state dimension does not match design rows")
    if not V > 0:
        raise FilterError("observation variance must be positive")
    _check_psd(C0)
    wdiag = _as_wdiag(W, n, d)
    if (wdiag < 0).any():
        raise FilterError("state noise variances must be non-negative")
    ms, Cs, Rs, Q, e, ll, bad = _filter_kernel(y, F, m0, C0, wdiag, float(V), True)
    if bad >= 0:
        raise FilterError(f"non-positive innovation variance at step {bad}")
    if kappa is None:
        kappa = float(np.max(np.diag(C0)))
    return FilterResult(ms, Cs, Rs, Q, e, ll, m0, C0, _n_diffuse(Q, V, kappa), kappa)


def loglik(y, F, V, W, m0, C0, kappa, diffuse=True) -> float:
    """Log-likelihood only; the fast path used inside optimisers."""
    n, d = F.shape
    wdiag = _as_wdiag(W, n, d)
    _, _, _, Q, _, ll, bad = _filter_kernel(y, F, m0, C0, wdiag, float(V), False)
    if bad >= 0:
        return -np.inf
    total = float(ll.sum())
    if diffuse and kappa > 1:
        total += 0.5 * _n_diffuse(Q, V, kappa) * math.log(kappa)
    return total


def _sym_solve(A, B):
    """Solve ``A X = B`` for symmetric ``A``, falling back to a pseudo-inverse."""
    try:
        X = np.linalg.solve(A, B)
        if np.all(np.isfinite(X)):
            return X
    except np.linalg.LinAlgError:
        pass
    warnings.warn("singular predicted covariance in smoother; using pseudo-inverse", RuntimeWarning)
    tol = 1e-12 * np.trace(A)
    return np.linalg.pinv(A, rcond=tol / max(np.abs(A).max(), 1e-300), hermitian=True) @ B


@dataclass
class SmoothResult:
    s: np.ndarray  # (n, d)
    S: np.ndarray  # (n, d, d)


def clamp_psd(S):
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    w, U = np.linalg.eigh(S)
    neg = (w < 0).any(axis=-1)
    if not neg.any():
        return S
    out = S.copy()
    wc = np.clip(w[neg], 0.0, None)
    out[neg] = (U[neg] * wc[..., None, :]) @ np.swapaxes(U[neg], -1, -2)
    return out


def kalman_smooth(fr: FilterResult) -> SmoothResult:
    n, d = fr.m.shape
    s = np.empty_like(fr.m)
    S = np.empty_like(fr.C)
    s[-1] = fr.m[-1]
    S[-1] = fr.C[-1]
    for t in range(n - 2, -1, -1):
        Rn = fr.R[t + 1]
        # J' = R^{-1} C_t (R and C symmetric)
        Jt = _sym_solve(Rn, fr.C[t])
        J = Jt.T
        s[t] = fr.m[t] + J @ (s[t + 1] - fr.m[t])
        St = fr.C[t] - J @ (Rn - S[t + 1]) @ Jt
        S[t] = 0.5 * (St + St.T)
    S = clamp_psd(S)
    return SmoothResult(s, S)
