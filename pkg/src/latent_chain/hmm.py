"""Log-space forward-backward inference for discrete-state HMMs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._gauss import mvn_logpdf
from .models import CategoricalEmission, HmmParams


class ZeroProbabilityError(ValueError):
    """Every state assigns zero probability to the data at some step."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"observation sequence has zero probability at step {step}")


@dataclass(frozen=True)
class PosteriorMarginals:
    gamma: np.ndarray  # (T, K): P(h_k = i | y_{1:T})
    xi: np.ndarray  # (T-1, K, K): xi[k-1][i, j] = P(h_{k-1}=i, h_k=j | y_{1:T})
    log_likelihood: float


@dataclass(frozen=True)
class ForwardBackwardScratch:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    log_normalizers: np.ndarray  # log p(y_k | y_{1:k-1}); sums to the log-likelihood


def check_observations(params: HmmParams, obs) -> np.ndarray:
    """Coerce ``obs`` to the array shape the emission family expects."""
    family = params.emission_family
    if family == "categorical":
        y = np.asarray(obs)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if y.ndim != 1:
            raise ValueError(f"categorical observations must be a 1-d symbol array, got shape {y.shape}")
        if y.dtype.kind == "f":
            if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
                raise ValueError("categorical observations must be integer symbols")
        elif y.dtype.kind not in "iu":
            raise ValueError(f"categorical observations must be integers, got dtype {y.dtype}")
        y = y.astype(np.int64)
        V = params.emission_dim
        if y.size and (y.min() < 0 or y.max() >= V):
            raise ValueError(f"symbol out of range for alphabet of size {V}")
    elif family == "gaussian":
        y = np.asarray(obs, dtype=float)
        p = params.emission_dim
        if y.ndim == 1 and p == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[1] != p:
            raise ValueError(f"gaussian observations must have shape (T, {p}), got {y.shape}")
    else:
        raise ValueError(f"unsupported emission family {family!r}")
    if len(y) < 1:
        raise ValueError("observation sequence must be non-empty")
    return y


def log_emission_matrix(params: HmmParams, obs) -> np.ndarray:
    """``out[k, i] = log P(y_k | h_k = i)``, shape ``(T, K)``."""
    y = check_observations(params, obs)
    if params.emission_family == "categorical":
        B = np.stack([e.probs for e in params.emissions], axis=1)  # (V, K)
        with np.errstate(divide="ignore"):
            return np.log(B[y])
    return np.stack([mvn_logpdf(y, e.mean, e.cov) for e in params.emissions], axis=1)


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _forward_pass(log_pi, A, log_B):
    T, K = log_B.shape
    log_alpha = np.empty((T, K))
    log_norm = np.empty(T)
    log_alpha[0] = log_pi + log_B[0]
    m = log_alpha[0].max()
    if m == -np.inf:
        raise ZeroProbabilityError(0)
    prev_total = m + np.log(np.exp(log_alpha[0] - m).sum())
    log_norm[0] = prev_total
    with np.errstate(divide="ignore"):
        for k in range(1, T):
            prev = log_alpha[k - 1]
            m = prev.max()
            row = np.log(np.exp(prev - m) @ A) + m + log_B[k]
            mk = row.max()
            if mk == -np.inf:
                raise ZeroProbabilityError(k)
            total = mk + np.log(np.exp(row - mk).sum())
            log_norm[k] = total - prev_total
            prev_total = total
            log_alpha[k] = row
    return log_alpha, log_norm, float(prev_total)


def _backward_pass(A, log_B):
    T, K = log_B.shape
    log_beta = np.empty((T, K))
    log_beta[-1] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(T - 2, -1, -1):
            v = log_B[k + 1] + log_beta[k + 1]
            m = v.max()
            if m == -np.inf:
                log_beta[k] = -np.inf
                continue
            log_beta[k] = np.log(A @ np.exp(v - m)) + m
    return log_beta


def _normalize_rows(log_w: np.ndarray, axis) -> np.ndarray:
    m = np.max(log_w, axis=axis, keepdims=True)
    w = np.exp(log_w - m)
    return w / np.sum(w, axis=axis, keepdims=True)


def forward_backward_log(log_pi, transition, log_B):
    """Run both passes on a precomputed log-emission matrix.

    Returns ``(PosteriorMarginals, ForwardBackwardScratch)``.
    """
    A = np.asarray(transition, dtype=float)
    log_alpha, log_norm, loglik = _forward_pass(np.asarray(log_pi, dtype=float), A, log_B)
    log_beta = _backward_pass(A, log_B)
    gamma = _normalize_rows(log_alpha + log_beta, axis=1)
    T, K = log_B.shape
    if T > 1:
        log_A = _log(A)
        log_xi = (log_alpha[:-1, :, None] + log_A[None, :, :]
                  + (log_B[1:] + log_beta[1:])[:, None, :])
        xi = _normalize_rows(log_xi, axis=(1, 2))
    else:
        xi = np.zeros((0, K, K))
    return (PosteriorMarginals(gamma, xi, loglik),
            ForwardBackwardScratch(log_alpha, log_beta, log_norm))


def forward(params: HmmParams, obs):
    """Return ``(log_alpha, log_likelihood)``.

    ``log_alpha[k, i] = log p(y_{1:k}, h_k = i)``.
    """
    log_B = log_emission_matrix(params, obs)
    log_alpha, _, loglik = _forward_pass(_log(params.initial_dist), params.transition, log_B)
    return log_alpha, loglik


def backward(params: HmmParams, obs) -> np.ndarray:
    """``log_beta[k, i] = log p(y_{k+1:T} | h_k = i)``; the last row is zero."""
    return _backward_pass(params.transition, log_emission_matrix(params, obs))


def posterior_marginals(params: HmmParams, obs) -> PosteriorMarginals:
    log_B = log_emission_matrix(params, obs)
    post, _ = forward_backward_log(_log(params.initial_dist), params.transition, log_B)
    return post


def hmm_joint_log_likelihood(params: HmmParams, states, obs) -> float:
    """log p(h_{1:T}, y_{1:T}) for a fixed state path.  May be ``-inf``."""
    h = np.asarray(states, dtype=np.int64)
    K = params.num_states
    if h.ndim != 1 or h.size == 0 or h.min() < 0 or h.max() >= K:
        raise ValueError(f"state path must be a non-empty vector with entries in 0..{K - 1}")
    y = check_observations(params, obs)
    if len(y) != len(h):
        raise ValueError(f"path length {len(h)} != observation length {len(y)}")
    with np.errstate(divide="ignore"):
        total = np.log(params.initial_dist[h[0]])
        total += np.sum(np.log(params.transition[h[:-1], h[1:]]))
        if isinstance(params.emissions[0], CategoricalEmission):
            B = np.stack([e.probs for e in params.emissions])
            total += np.sum(np.log(B[h, y]))
        else:
            for i in np.unique(h):
                e = params.emissions[i]
                total += np.sum(mvn_logpdf(y[h == i], e.mean, e.cov))
    return float(total)
