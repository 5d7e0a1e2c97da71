"""Brute-force reference inference.

Nothing here reuses the forward-backward or Kalman recursions: the HMM oracle
enumerates every state path and the LG-SSM oracle builds the full joint
Gaussian over (h_{1:T}, y_{1:T}) and conditions it with a Schur complement.
These are only meant for tiny problems; both refuse anything past their
size guards.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .hmm import hmm_joint_log_likelihood
from .models import HmmParams, LgssmParams, as_inputs

MAX_PATHS = 4096
MAX_STACKED_DIM = 64


class OracleGuardError(ValueError):
    pass


@dataclass(frozen=True)
class EnumerationPosterior:
    paths: np.ndarray  # (K^T, T)
    path_log_weights: np.ndarray  # unnormalized log p(h, y) per path
    marginals: np.ndarray  # (T, K)
    pairwise: np.ndarray  # (T-1, K, K)
    log_evidence: float


def hmm_enumerate(params: HmmParams, obs) -> EnumerationPosterior:
    obs = np.asarray(obs)
    T, K = len(obs), params.num_states
    if K ** T > MAX_PATHS:
        raise OracleGuardError(f"{K}^{T} = {K ** T} paths exceeds the guard of {MAX_PATHS}")
    paths = np.array(list(itertools.product(range(K), repeat=T)), dtype=np.int64)
    logw = np.array([hmm_joint_log_likelihood(params, h, obs) for h in paths])
    log_evidence = float(logsumexp(logw))
    w = np.exp(logw - log_evidence)
    marginals = np.zeros((T, K))
    pairwise = np.zeros((max(T - 1, 0), K, K))
    for h, wi in zip(paths, w):
        marginals[np.arange(T), h] += wi
        if T > 1:
            pairwise[np.arange(T - 1), h[:-1], h[1:]] += wi
    return EnumerationPosterior(paths, logw, marginals, pairwise, log_evidence)


@dataclass(frozen=True)
class StackedGaussian:
    """Joint Gaussian over z = (h_1, ..., h_T, y_1, ..., y_T)."""

    mean: np.ndarray
    cov: np.ndarray
    state_dim: int
    obs_dim: int
    length: int

    @property
    def _split(self):
        return self.length * self.state_dim

    def _blocks(self):
        n = self._split
        mu_h, mu_y = self.mean[:n], self.mean[n:]
        S = self.cov
        return mu_h, mu_y, S[:n, :n], S[:n, n:], S[n:, n:]

    def condition_on(self, y):
        """Exact posterior mean/cov of the stacked states given all observations."""
        y = np.asarray(y, dtype=float).reshape(-1)
        mu_h, mu_y, Shh, Shy, Syy = self._blocks()
        try:
            cf = linalg.cho_factor(Syy, lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("observation block of the joint is singular") from exc
        mean = mu_h + Shy @ linalg.cho_solve(cf, y - mu_y)
        cov = Shh - Shy @ linalg.cho_solve(cf, Shy.T)
        return mean, 0.5 * (cov + cov.T)

    def smoothed(self, y):
        """Per-step posterior means ``(T, s)``, covariances ``(T, s, s)`` and
        lag-one second moments ``cross[k-1] = E[h_k h_{k-1}^T | y]``."""
        s, T = self.state_dim, self.length
        mean, cov = self.condition_on(y)
        means = mean.reshape(T, s)
        covs = np.stack([cov[k * s:(k + 1) * s, k * s:(k + 1) * s] for k in range(T)])
        cross = np.stack([cov[k * s:(k + 1) * s, (k - 1) * s:k * s]
                          + np.outer(means[k], means[k - 1]) for k in range(1, T)]) \
            if T > 1 else np.zeros((0, s, s))
        return means, covs, cross

    def log_evidence(self, y) -> float:
        _, mu_y, _, _, Syy = self._blocks()
        return float(multivariate_normal(mu_y, Syy).logpdf(np.asarray(y, dtype=float).reshape(-1)))


def lgssm_exact_joint(params: LgssmParams, inputs, length: int) -> StackedGaussian:
    """Build the joint Gaussian of states and observations in closed form.

    Writes z = M e + c with e = (h_1 - m_0, w_1..w_{T-1}, v_1..v_T) having a
    block-diagonal covariance, so cov(z) = M cov(e) M^T.
    """
    s, p, T = params.state_dim, params.obs_dim, length
    if T < 1:
        raise ValueError("length must be >= 1")
    if s * T + p * T > MAX_STACKED_DIM:
        raise OracleGuardError(
            f"stacked dimension {s * T + p * T} exceeds the guard of {MAX_STACKED_DIM}")
    x = as_inputs(inputs, T, params.input_dim)
    A, B, C = params.A, params.B, params.C

    powers = [np.eye(s)]
    for _ in range(T):
        powers.append(A @ powers[-1])

    n_e = s + s * (T - 1) + p * T
    M = np.zeros((s * T + p * T, n_e))
    c = np.zeros(s * T + p * T)
    for k in range(T):
        rows = slice(k * s, (k + 1) * s)
        # h_k = A^k h_1 + sum_{j<k} A^{k-1-j} (B x_j + w_j)   (0-based k)
        M[rows, 0:s] = powers[k]
        c[rows] = powers[k] @ params.init_mean
        for j in range(k):
            M[rows, s + j * s: s + (j + 1) * s] = powers[k - 1 - j]
            if params.input_dim:
                c[rows] += powers[k - 1 - j] @ (B @ x[j])
    off = s * T
    v0 = s + s * (T - 1)
    for k in range(T):
        rows = slice(off + k * p, off + (k + 1) * p)
        M[rows] = C @ M[k * s:(k + 1) * s]
        c[rows] = C @ c[k * s:(k + 1) * s]
        M[rows, v0 + k * p: v0 + (k + 1) * p] = np.eye(p)

    cov_e = linalg.block_diag(params.init_cov, *([params.Q] * (T - 1)), *([params.R] * T))
    cov = M @ cov_e @ M.T
    return StackedGaussian(c, 0.5 * (cov + cov.T), s, p, T)


def zoh_block_exponential(A, B, step: float):
    """ZOH discretization via one exponential of the block matrix [[A, B], [0, 0]]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    s, d = B.shape
    M = np.zeros((s + d, s + d))
    M[:s, :s] = A
    M[:s, s:] = B
    E = linalg.expm(step * M)
    return E[:s, :s], E[:s, s:]
