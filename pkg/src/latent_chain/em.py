"""Expectation-maximization for HMMs and linear Gaussian SSMs.

The transition update for the HMM is the ratio of expected transition
counts to expected state counts over steps 2..T, and the LG-SSM dynamics
update is the least-squares regression of E[h_k h_{k-1}^T] on
E[h_{k-1} h_{k-1}^T].  The remaining updates (initial distribution, emission
parameters, B, C, Q, R, initial Gaussian) are the standard maximum-likelihood
closed forms given the same posterior statistics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .hmm import PosteriorMarginals, ZeroProbabilityError, check_observations, posterior_marginals
from .kalman import KalmanNumericalError, SmoothedMoments, smoothed_moments
from .models import (
    CategoricalEmission,
    GaussianEmission,
    HmmParams,
    LgssmParams,
    as_inputs,
    as_obs_matrix,
    ensure_hmm,
    ensure_lgssm,
)

log = logging.getLogger(__name__)

DECREASE_SLACK = 1e-9


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    rel_tol: float = 1e-8
    min_variance_floor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.rel_tol < 0:
            raise ValueError(f"rel_tol must be >= 0, got {self.rel_tol}")
        if not self.min_variance_floor > 0:
            raise ValueError(f"min_variance_floor must be positive, got {self.min_variance_floor}")


@dataclass
class EmReport:
    iterations: int
    log_likelihood_trace: list
    final_params: object
    converged: bool
    stop_reason: str  # max-iters | tolerance | likelihood-decrease-fault | inference-fault
    error: Optional[str] = None
    notes: list = field(default_factory=list)

    @property
    def faulted(self) -> bool:
        return self.stop_reason.endswith("fault")


class EStepError(ValueError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        super().__init__(f"sequence {index}: {cause}")


class SingularGramError(np.linalg.LinAlgError):
    def __init__(self, what: str, deficiency: int):
        self.deficiency = deficiency
        super().__init__(f"{what} Gram matrix is singular (deficient subspace dimension {deficiency})")


def floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below at ``floor``."""
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.size == 0 or w[0] >= floor:
        return cov
    cov = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (cov + cov.T)


def _solve_gram(target: np.ndarray, gram: np.ndarray, what: str) -> np.ndarray:
    """target @ inv(gram) for symmetric ``gram``; refuses rank-deficient Grams."""
    gram = 0.5 * (gram + gram.T)
    w = np.linalg.eigvalsh(gram)
    tol = max(w[-1], 0.0) * gram.shape[0] * np.finfo(float).eps * 10
    deficient = int(np.sum(w <= tol))
    if deficient:
        raise SingularGramError(what, deficient)
    return np.linalg.solve(gram, target.T).T


# --------------------------------------------------------------------------
# HMM
# --------------------------------------------------------------------------


@dataclass
class HmmStats:
    """Expected counts accumulated over sequences."""

    init_counts: np.ndarray  # (K,)   sum of gamma at step 1
    trans_counts: np.ndarray  # (K, K) sum over k=2..T of xi_k
    trans_denominators: np.ndarray  # (K,) sum over k=2..T of gamma_{k-1}
    occupancy: np.ndarray  # (K,)   sum over all steps of gamma
    symbol_counts: Optional[np.ndarray] = None  # (K, V) categorical
    weighted_sum: Optional[np.ndarray] = None  # (K, p) gaussian
    weighted_outer: Optional[np.ndarray] = None  # (K, p, p) gaussian

    @classmethod
    def zeros(cls, params: HmmParams) -> "HmmStats":
        K, D = params.num_states, params.emission_dim
        st = cls(np.zeros(K), np.zeros((K, K)), np.zeros(K), np.zeros(K))
        if params.emission_family == "categorical":
            st.symbol_counts = np.zeros((K, D))
        else:
            st.weighted_sum = np.zeros((K, D))
            st.weighted_outer = np.zeros((K, D, D))
        return st

    def add(self, post: PosteriorMarginals, obs: np.ndarray) -> None:
        g = post.gamma
        self.init_counts += g[0]
        self.trans_counts += post.xi.sum(axis=0)
        self.trans_denominators += g[:-1].sum(axis=0)
        self.occupancy += g.sum(axis=0)
        if self.symbol_counts is not None:
            for v in range(self.symbol_counts.shape[1]):
                self.symbol_counts[:, v] += g[obs == v].sum(axis=0)
        else:
            self.weighted_sum += g.T @ obs
            self.weighted_outer += np.einsum("tk,ti,tj->kij", g, obs, obs)


def hmm_e_step(params: HmmParams, sequences: Sequence) -> tuple[list, float]:
    """Posterior marginals for every sequence plus the summed log-likelihood."""
    if len(sequences) == 0:
        raise ValueError("need at least one sequence")
    posts = []
    for n, obs in enumerate(sequences):
        try:
            posts.append(posterior_marginals(params, obs))
        except (ZeroProbabilityError, ValueError, np.linalg.LinAlgError) as exc:
            raise EStepError(n, exc) from exc
    return posts, float(sum(p.log_likelihood for p in posts))


def hmm_accumulate(params: HmmParams, sequences: Sequence, posts: Sequence) -> HmmStats:
    stats = HmmStats.zeros(params)
    for obs, post in zip(sequences, posts):
        stats.add(post, check_observations(params, obs))
    return stats


def _normalized(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, None)
    return v / v.sum()


def hmm_m_step(stats: HmmStats, old_params: HmmParams, config: EmConfig = EmConfig(),
               notes: Optional[list] = None) -> HmmParams:
    """Closed-form re-estimation from expected counts.

    States with zero expected occupancy keep their old transition row or
    emission; each such case is appended to ``notes``.
    """
    kept: list = []
    K = old_params.num_states
    init = _normalized(stats.init_counts) if stats.init_counts.sum() > 0 else old_params.initial_dist

    A = np.array(old_params.transition, dtype=float)
    for i in range(K):
        if stats.trans_denominators[i] > 0:
            A[i] = _normalized(stats.trans_counts[i] / stats.trans_denominators[i])
        else:
            kept.append(f"state {i} has zero expected transitions out; row kept")

    emissions = list(old_params.emissions)
    for i in range(K):
        occ = stats.occupancy[i]
        if not occ > 0:
            kept.append(f"state {i} has zero expected occupancy; emission kept")
            continue
        if stats.symbol_counts is not None:
            emissions[i] = CategoricalEmission(_normalized(stats.symbol_counts[i]))
        else:
            mean = stats.weighted_sum[i] / occ
            cov = stats.weighted_outer[i] / occ - np.outer(mean, mean)
            emissions[i] = GaussianEmission(mean, floor_covariance(cov, config.min_variance_floor))
    for msg in kept:
        log.info(msg)
    if notes is not None:
        notes.extend(kept)
    return HmmParams(init, A, tuple(emissions))


def init_hmm_from_data(sequences: Sequence, num_states: int, emission: str, seed: int = 0,
                       alphabet_size: Optional[int] = None) -> HmmParams:
    """Starting point for EM: uniform initial distribution, random positive
    row-normalized transitions, emissions moment-matched to the data with jitter."""
    rng = np.random.default_rng(seed)
    K = num_states
    pi = np.full(K, 1.0 / K)
    A = rng.uniform(0.5, 1.5, size=(K, K)) + K * np.eye(K)
    A /= A.sum(axis=1, keepdims=True)
    if emission == "categorical":
        y = np.concatenate([np.asarray(s, dtype=np.int64).reshape(-1) for s in sequences])
        V = int(y.max()) + 1 if alphabet_size is None else alphabet_size
        freq = np.bincount(y, minlength=V).astype(float) + 1.0
        freq /= freq.sum()
        probs = freq * rng.uniform(0.8, 1.2, size=(K, V))
        probs /= probs.sum(axis=1, keepdims=True)
        return HmmParams.categorical(pi, A, probs)
    if emission != "gaussian":
        raise ValueError(f"unknown emission family {emission!r}")
    y = np.concatenate([np.asarray(s, dtype=float).reshape(len(s), -1) for s in sequences])
    p = y.shape[1]
    mean = y.mean(axis=0)
    cov = np.atleast_2d(np.cov(y, rowvar=False, bias=True)) + 1e-6 * np.eye(p)
    w, V = np.linalg.eigh(cov)
    axis = V[:, -1] * np.sqrt(w[-1])
    # spread the states along the principal axis of the data
    offsets = np.linspace(-1.0, 1.0, K) if K > 1 else np.zeros(1)
    offsets = offsets + 0.1 * rng.standard_normal(K)
    means = mean + offsets[:, None] * axis
    return HmmParams.gaussian(pi, A, means, np.repeat(cov[None], K, axis=0))


# --------------------------------------------------------------------------
# LG-SSM
# --------------------------------------------------------------------------


@dataclass
class LgssmStats:
    n_seq: int
    n_trans: int
    n_obs: int
    hh_prev: np.ndarray  # sum_{k=2}^T E[h_{k-1} h_{k-1}^T]
    cross: np.ndarray  # sum_{k=2}^T E[h_k h_{k-1}^T]
    hh_next: np.ndarray  # sum_{k=2}^T E[h_k h_k^T]
    hh_all: np.ndarray  # sum_{k=1}^T E[h_k h_k^T]
    yh: np.ndarray  # sum y_k E[h_k]^T
    yy: np.ndarray  # sum y_k y_k^T
    xh_prev: np.ndarray  # sum_{k=2}^T x_{k-1} E[h_{k-1}]^T
    hx_next: np.ndarray  # sum_{k=2}^T E[h_k] x_{k-1}^T
    xx: np.ndarray  # sum_{k=2}^T x_{k-1} x_{k-1}^T
    init_m1: np.ndarray  # sum over sequences of E[h_1]
    init_m2: np.ndarray  # sum over sequences of E[h_1 h_1^T]

    @classmethod
    def zeros(cls, s: int, p: int, d: int) -> "LgssmStats":
        z = np.zeros
        return cls(0, 0, 0, z((s, s)), z((s, s)), z((s, s)), z((s, s)), z((p, s)), z((p, p)),
                   z((d, s)), z((s, d)), z((d, d)), z(s), z((s, s)))

    def add(self, mom: SmoothedMoments, y: np.ndarray, x: np.ndarray) -> None:
        T = len(y)
        m1, m2 = mom.m1, mom.m2
        self.n_seq += 1
        self.n_trans += T - 1
        self.n_obs += T
        self.hh_prev += m2[:-1].sum(axis=0)
        self.cross += mom.cross.sum(axis=0)
        self.hh_next += m2[1:].sum(axis=0)
        self.hh_all += m2.sum(axis=0)
        self.yh += y.T @ m1
        self.yy += y.T @ y
        if x.shape[1]:
            xp = x[: T - 1]
            self.xh_prev += xp.T @ m1[:-1]
            self.hx_next += m1[1:].T @ xp
            self.xx += xp.T @ xp
        self.init_m1 += m1[0]
        self.init_m2 += m2[0]


def _normalize_lgssm_data(params: LgssmParams, sequences, inputs):
    ys = [as_obs_matrix(y, params.obs_dim) for y in sequences]
    if inputs is None:
        inputs = [None] * len(ys)
    if len(inputs) != len(ys):
        raise ValueError(f"{len(inputs)} input sequences for {len(ys)} observation sequences")
    xs = [as_inputs(x, len(y), params.input_dim) for y, x in zip(ys, inputs)]
    return ys, xs


def lgssm_e_step(params: LgssmParams, sequences: Sequence, inputs: Optional[Sequence] = None):
    """Smoothed moments per sequence plus the summed Kalman log-likelihood."""
    if len(sequences) == 0:
        raise ValueError("need at least one sequence")
    ys, xs = _normalize_lgssm_data(params, sequences, inputs)
    moments = []
    for n, (y, x) in enumerate(zip(ys, xs)):
        try:
            moments.append(smoothed_moments(params, y, x))
        except (KalmanNumericalError, ValueError, np.linalg.LinAlgError) as exc:
            raise EStepError(n, exc) from exc
    return moments, float(sum(m.log_likelihood for m in moments))


def lgssm_accumulate(params: LgssmParams, sequences, moments, inputs=None) -> LgssmStats:
    ys, xs = _normalize_lgssm_data(params, sequences, inputs)
    stats = LgssmStats.zeros(params.state_dim, params.obs_dim, params.input_dim)
    for mom, y, x in zip(moments, ys, xs):
        stats.add(mom, y, x)
    return stats


def lgssm_m_step(stats: LgssmStats, old_params: LgssmParams, config: EmConfig = EmConfig()) -> LgssmParams:
    floor = config.min_variance_floor
    s, d = old_params.state_dim, old_params.input_dim
    A, B, Q = old_params.A, old_params.B, old_params.Q
    if stats.n_trans > 0:
        if d == 0:
            A = _solve_gram(stats.cross, stats.hh_prev, "state")
            F, W = A, stats.cross
        else:
            # regress h_k jointly on (h_{k-1}, x_{k-1})
            gram = np.block([[stats.hh_prev, stats.xh_prev.T], [stats.xh_prev, stats.xx]])
            W = np.hstack([stats.cross, stats.hx_next])
            F = _solve_gram(W, gram, "state-input")
            A, B = F[:, :s], F[:, s:]
        Q = floor_covariance((stats.hh_next - F @ W.T) / stats.n_trans, floor)

    C = _solve_gram(stats.yh, stats.hh_all, "observation")
    R = floor_covariance((stats.yy - C @ stats.yh.T) / stats.n_obs, floor)

    mu0 = stats.init_m1 / stats.n_seq
    P0 = floor_covariance(stats.init_m2 / stats.n_seq - np.outer(mu0, mu0), floor)
    return LgssmParams(A, B, C, Q, R, mu0, P0)


def init_lgssm_from_data(sequences: Sequence, state_dim: int, seed: int = 0,
                         input_dim: int = 0) -> LgssmParams:
    """A = 0.5 I, C a thin orthonormal basis scaled to the data, Q = R = I."""
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.asarray(s, dtype=float).reshape(len(s), -1) for s in sequences])
    p, s = y.shape[1], state_dim
    G = rng.standard_normal((max(p, s), min(p, s)))
    basis, _ = np.linalg.qr(G)
    C = basis if p >= s else basis.T
    C = C * np.sqrt(max(float(y.var(axis=0).mean()), 1e-12))
    mu0 = np.linalg.lstsq(C, y.mean(axis=0), rcond=None)[0]
    return LgssmParams(0.5 * np.eye(s), np.zeros((s, input_dim)), C, np.eye(s), np.eye(p),
                       mu0, np.eye(s))


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------


def em_fit(family: str, init_params, data: Sequence, config: EmConfig = EmConfig(),
           inputs: Optional[Sequence] = None) -> EmReport:
    """Alternate E- and M-steps until the relative improvement
    |dl| / (|l| + 1) drops below ``rel_tol`` or ``max_iters`` is reached.

    ``log_likelihood_trace[i]`` is the marginal log-likelihood of the
    parameters entering iteration ``i``.  A drop larger than 1e-9 stops the
    run and returns the better (previous) parameters.
    """
    if family == "hmm":
        ensure_hmm(init_params)

        def e_step(params):
            posts, ll = hmm_e_step(params, data)
            return hmm_accumulate(params, data, posts), ll

        def m_step(stats, params, notes):
            return hmm_m_step(stats, params, config, notes)
    elif family == "lgssm":
        ensure_lgssm(init_params)

        def e_step(params):
            moms, ll = lgssm_e_step(params, data, inputs)
            return lgssm_accumulate(params, data, moms, inputs), ll

        def m_step(stats, params, notes):
            return lgssm_m_step(stats, params, config)
    else:
        raise ValueError(f"unknown family {family!r}")

    params = init_params
    prev_params, prev_ll = None, None
    trace: list = []
    notes: list = []

    def report(final, converged, reason, error=None):
        return EmReport(len(trace), trace, final, converged, reason, error, notes)

    for _ in range(config.max_iters):
        try:
            stats, ll = e_step(params)
        except (EStepError, np.linalg.LinAlgError) as exc:
            return report(params, False, "inference-fault", str(exc))
        trace.append(ll)
        if prev_ll is not None:
            if ll < prev_ll - DECREASE_SLACK:
                log.warning("log-likelihood decreased from %.12g to %.12g", prev_ll, ll)
                return report(prev_params, False, "likelihood-decrease-fault",
                              f"log-likelihood decreased by {prev_ll - ll:.3g}")
            if abs(ll - prev_ll) / (abs(ll) + 1.0) < config.rel_tol:
                return report(params, True, "tolerance")
        try:
            new_params = m_step(stats, params, notes)
        except np.linalg.LinAlgError as exc:
            return report(params, False, "inference-fault", str(exc))
        prev_params, prev_ll = params, ll
        params = new_params
    return report(params, False, "max-iters")
