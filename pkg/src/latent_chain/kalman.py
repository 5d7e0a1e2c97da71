"""Kalman filtering, RTS smoothing and E-step moments for linear Gaussian SSMs.

Input alignment: the transition into ``h[k]`` (0-based) is driven by
``inputs[k - 1]``, so ``h[0]`` never depends on an input and a length-T
sequence consumes ``inputs[0:T-1]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from ._gauss import LOG_2PI, mvn_logpdf, rcond_spd
from .models import LgssmParams, as_inputs, as_obs_matrix

log = logging.getLogger(__name__)

RCOND_MIN = 1e-13
PSD_ABORT = 1e-6
STEADY_RTOL = 4 * np.finfo(float).eps


class KalmanNumericalError(ArithmeticError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} at step {step}")


@dataclass(frozen=True)
class GaussianBelief:
    """Per-step Gaussian beliefs: ``mean`` is ``(T, s)``, ``cov`` is ``(T, s, s)``."""

    mean: np.ndarray
    cov: np.ndarray
    kind: str = "filtered"

    def __len__(self):
        return len(self.mean)


@dataclass(frozen=True)
class FilterResult:
    filtered: GaussianBelief
    predicted: GaussianBelief
    log_likelihood: float


@dataclass(frozen=True)
class SmoothedMoments:
    m1: np.ndarray  # (T, s)       E[h_k | y]
    m2: np.ndarray  # (T, s, s)    E[h_k h_k^T | y]
    cross: np.ndarray  # (T-1, s, s)  cross[k-1] = E[h_k h_{k-1}^T | y]
    log_likelihood: float = float("nan")


def _sym(m):
    return 0.5 * (m + m.T)


def _input_drive(params: LgssmParams, inputs, T: int) -> np.ndarray:
    x = as_inputs(inputs, T, params.input_dim)
    if params.input_dim == 0:
        return np.zeros((max(T - 1, 0), params.state_dim))
    return x[: T - 1] @ params.B.T


def _settled(P: np.ndarray, P_prev: np.ndarray) -> bool:
    return float(np.max(np.abs(P - P_prev))) <= STEADY_RTOL * max(1.0, float(np.max(np.abs(P))))


def _covariance_pass(params: LgssmParams, T: int):
    """Data-independent half of the filter.

    Returns predicted and filtered covariances, gains, inverse Cholesky
    factors of the innovation covariances, their log-determinants, and the
    first index from which every quantity has reached its steady state
    (``T`` if it never does).  Once the Riccati recursion stops moving at
    roundoff level the remaining steps are copies.
    """
    s, p = params.state_dim, params.obs_dim
    A, C, Q, R = params.A, params.C, params.Q, params.R
    eye_s, eye_p = np.eye(s), np.eye(p)
    Pp = np.empty((T, s, s))
    Pf = np.empty((T, s, s))
    gains = np.empty((T, s, p))
    Linv = np.empty((T, p, p))
    logdet = np.empty(T)
    steady_from = T
    P = params.init_cov.copy()
    for k in range(T):
        if k > 0:
            P = _sym(A @ Pf[k - 1] @ A.T + Q)
            if _settled(P, Pp[k - 1]):
                steady_from = k - 1
                for arr in (Pp, Pf, gains, Linv, logdet):
                    arr[k:] = arr[k - 1]
                break
        Pp[k] = P
        PCt = P @ C.T
        S = _sym(C @ PCt + R)
        if (S[0, 0] <= 0.0) if p == 1 else (rcond_spd(S) < RCOND_MIN):
            raise KalmanNumericalError("innovation covariance numerically singular", k)
        try:
            cf = cho_factor(S, lower=True, check_finite=False)
        except LinAlgError:
            raise KalmanNumericalError("innovation covariance not positive definite", k) from None
        L = np.tril(cf[0])
        gain = cho_solve(cf, PCt.T, check_finite=False).T
        IKC = eye_s - gain @ C
        Pk = _sym(IKC @ P @ IKC.T + gain @ R @ gain.T)
        low = Pk[0, 0] if s == 1 else np.linalg.eigvalsh(Pk)[0]
        if low < -PSD_ABORT * max(1.0, abs(Pk).max()):
            raise KalmanNumericalError(
                f"filtered covariance lost positive semidefiniteness (min eigenvalue {low:.3g});"
                " the model is badly conditioned", k)
        Pf[k] = Pk
        gains[k] = gain
        Linv[k] = solve_triangular(L, eye_p, lower=True, check_finite=False)
        logdet[k] = 2.0 * np.sum(np.log(np.diag(L)))
    return Pp, Pf, gains, Linv, logdet, steady_from


def kalman_filter(params: LgssmParams, obs, inputs=None) -> FilterResult:
    """Predict/update recursion with Joseph-form covariance update.

    The log-likelihood is the sum of the innovation densities
    log N(y_k; C m_k|k-1, C P_k|k-1 C^T + R).
    """
    return _filter(params, obs, inputs)[0]


def _filter(params, obs, inputs):
    y = as_obs_matrix(obs, params.obs_dim)
    T = len(y)
    s, p = params.state_dim, params.obs_dim
    A, C = params.A, params.C
    drive = _input_drive(params, inputs, T)
    Pp, Pf, gains, Linv, logdet, steady_from = _covariance_pass(params, T)

    mp = np.empty((T, s))
    mf = np.empty((T, s))
    innov = np.empty((T, p))
    m = params.init_mean.copy()
    for k in range(T):
        if k > 0:
            m = A @ mf[k - 1] + drive[k - 1]
        mp[k] = m
        e = y[k] - C @ m
        innov[k] = e
        mf[k] = m + gains[k] @ e
    z = np.einsum("kij,kj->ki", Linv, innov)
    loglik = -0.5 * (np.sum(z * z) + np.sum(logdet) + T * p * LOG_2PI)
    result = FilterResult(GaussianBelief(mf, Pf, "filtered"), GaussianBelief(mp, Pp, "predicted"),
                          float(loglik))
    return result, steady_from


def _smoother_gain(Pf_k, A, Pp_next, step):
    num = Pf_k @ A.T
    try:
        cf = cho_factor(Pp_next, lower=True, check_finite=False)
        if not np.all(np.isfinite(cf[0])):
            raise LinAlgError
        return cho_solve(cf, num.T, check_finite=False).T
    except (LinAlgError, ValueError):
        # Rank-deficient prediction (e.g. Q = 0 with a degenerate prior): the
        # pseudo-inverse gives the correct conditional regression.
        log.debug("predicted covariance singular at step %d; using pseudo-inverse gain", step)
        G = num @ np.linalg.pinv(Pp_next, hermitian=True)
        if not np.all(np.isfinite(G)):
            raise KalmanNumericalError("smoother gain undefined (singular predicted covariance)", step)
        return G


def rts_smoother(params: LgssmParams, filtered: GaussianBelief, predicted: GaussianBelief,
                 steady_from: Optional[int] = None):
    """Rauch-Tung-Striebel backward pass.

    Returns ``(smoothed, gains)`` where ``gains[k]`` maps step ``k+1`` back to
    ``k``.  ``steady_from`` is the filter's steady-state index; when given,
    the backward covariance recursion is also short-circuited once it settles.
    """
    mf, Pf = filtered.mean, filtered.cov
    mp, Pp = predicted.mean, predicted.cov
    T, s = mf.shape
    steady_from = T if steady_from is None else steady_from
    A = params.A
    Ps = np.empty_like(Pf)
    Ps[-1] = Pf[-1]
    gains = np.zeros((max(T - 1, 0), s, s))
    steady_gain = None
    k = T - 2
    while k >= 0:
        in_steady = k >= steady_from
        if in_steady and steady_gain is not None:
            G = steady_gain
        else:
            G = _smoother_gain(Pf[k], A, Pp[k + 1], k + 1)
            if in_steady:
                steady_gain = G
        gains[k] = G
        Ps[k] = _sym(Pf[k] + G @ (Ps[k + 1] - Pp[k + 1]) @ G.T)
        if in_steady and k + 1 < T - 1 and k > steady_from and _settled(Ps[k], Ps[k + 1]):
            Ps[steady_from:k] = Ps[k]
            gains[steady_from:k] = G
            k = steady_from - 1
            continue
        k -= 1

    ms = mf.copy()
    for k in range(T - 2, -1, -1):
        ms[k] = mf[k] + gains[k] @ (ms[k + 1] - mp[k + 1])
    return GaussianBelief(ms, Ps, "smoothed"), gains


def kalman_smoother(params: LgssmParams, obs, inputs=None):
    """Filter then smooth; returns ``(FilterResult, smoothed, gains)``."""
    fr, steady_from = _filter(params, obs, inputs)
    smoothed, gains = rts_smoother(params, fr.filtered, fr.predicted, steady_from)
    return fr, smoothed, gains


def moments_from_smoother(smoothed: GaussianBelief, gains: np.ndarray,
                          log_likelihood: float = float("nan")) -> SmoothedMoments:
    ms, Ps = smoothed.mean, smoothed.cov
    m2 = Ps + ms[:, :, None] * ms[:, None, :]
    # Cov(h_{k+1}, h_k | y) = P^s_{k+1} G_k^T
    cross = (np.einsum("kij,klj->kil", Ps[1:], gains)
             + ms[1:, :, None] * ms[:-1, None, :])
    return SmoothedMoments(ms, m2, cross, log_likelihood)


def smoothed_moments(params: LgssmParams, obs, inputs=None) -> SmoothedMoments:
    fr, smoothed, gains = kalman_smoother(params, obs, inputs)
    return moments_from_smoother(smoothed, gains, fr.log_likelihood)


def lgssm_joint_log_likelihood(params: LgssmParams, states, obs, inputs=None) -> float:
    """log p(h_{1:T}, y_{1:T}) for a fixed state trajectory."""
    h = as_obs_matrix(states, params.state_dim)
    y = as_obs_matrix(obs, params.obs_dim)
    if len(h) != len(y):
        raise ValueError(f"state path length {len(h)} != observation length {len(y)}")
    T = len(h)
    drive = _input_drive(params, inputs, T)
    total = mvn_logpdf(h[:1], params.init_mean, params.init_cov).sum()
    if T > 1:
        resid = h[1:] - h[:-1] @ params.A.T - drive
        total += mvn_logpdf(resid, np.zeros(params.state_dim), params.Q).sum()
    total += mvn_logpdf(y - h @ params.C.T, np.zeros(params.obs_dim), params.R).sum()
    return float(total)
