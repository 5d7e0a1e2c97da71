"""Parameter containers, validation and sampling for the three model families.

Arrays stored on the frozen dataclasses are marked read-only so a params
object can be shared freely once built.  Validation never raises: the
``validate_*`` functions return a list of human-readable violations and the
``ensure_*`` wrappers turn a non-empty list into :class:`InvalidModelError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

STOCHASTIC_TOL = 1e-12
SYMMETRY_TOL = 1e-10


class InvalidModelError(ValueError):
    """Raised when a params object fails structural validation."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _matrix(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# HMM
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoricalEmission:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    family = "categorical"

    @property
    def dim(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class GaussianEmission:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.atleast_1d(self.mean)))
        object.__setattr__(self, "cov", _frozen(np.atleast_2d(self.cov)))

    family = "gaussian"

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


Emission = Union[CategoricalEmission, GaussianEmission]


@dataclass(frozen=True)
class HmmParams:
    """Discrete-state HMM with a state-indexed row-stochastic transition matrix.

    ``transition[i, j]`` is the probability of moving from state ``i`` to
    state ``j``.  States are numbered ``0..K-1``.
    """

    initial_dist: np.ndarray
    transition: np.ndarray
    emissions: tuple

    def __post_init__(self):
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "transition", _frozen(np.atleast_2d(self.transition)))
        object.__setattr__(self, "emissions", tuple(self.emissions))

    @property
    def num_states(self) -> int:
        return int(self.initial_dist.shape[0])

    @property
    def emission_family(self) -> str:
        fams = {e.family for e in self.emissions}
        return fams.pop() if len(fams) == 1 else "mixed"

    @property
    def emission_dim(self) -> int:
        """Alphabet size for categorical emissions, vector dimension for Gaussian."""
        return self.emissions[0].dim

    @classmethod
    def categorical(cls, initial_dist, transition, emission_probs) -> "HmmParams":
        return cls(initial_dist, transition,
                   tuple(CategoricalEmission(row) for row in np.atleast_2d(emission_probs)))

    @classmethod
    def gaussian(cls, initial_dist, transition, means, covs) -> "HmmParams":
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        return cls(initial_dist, transition,
                   tuple(GaussianEmission(m, c) for m, c in zip(means, covs)))


def _prob_vector_violations(name: str, v: np.ndarray) -> list[str]:
    out = []
    if np.any(~np.isfinite(v)):
        return [f"{name} has non-finite entries"]
    if np.any(v < -STOCHASTIC_TOL):
        out.append(f"{name} has negative entries (min {v.min():.3g})")
    total = float(v.sum())
    if abs(total - 1.0) > STOCHASTIC_TOL:
        out.append(f"{name} sums to {total:.12g}")
    return out


def _is_spd(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True


def validate_hmm(params: HmmParams) -> list[str]:
    """Return every violated HmmParams invariant; empty list means valid."""
    violations: list[str] = []
    K = params.num_states
    if K < 1:
        return ["num_states must be positive"]
    pi = params.initial_dist
    if pi.ndim != 1:
        violations.append("initial_dist is not a vector")
    else:
        violations += _prob_vector_violations("initial_dist", pi)
    A = params.transition
    if A.shape != (K, K):
        violations.append(f"transition has shape {A.shape}, expected {(K, K)}")
    else:
        for i, row in enumerate(A):
            violations += _prob_vector_violations(f"row {i}", row)
    if len(params.emissions) != K:
        violations.append(f"{len(params.emissions)} emissions for {K} states")
    if params.emission_family == "mixed":
        violations.append("emissions mix categorical and gaussian families")
        return violations
    dims = {e.dim for e in params.emissions}
    if len(dims) > 1:
        violations.append(f"emissions disagree on output dimension: {sorted(dims)}")
    for i, e in enumerate(params.emissions):
        if isinstance(e, CategoricalEmission):
            if e.probs.ndim != 1:
                violations.append(f"emission {i} probs is not a vector")
            else:
                violations += _prob_vector_violations(f"emission {i}", e.probs)
        else:
            p = e.dim
            if e.cov.shape != (p, p):
                violations.append(f"emission {i} covariance has shape {e.cov.shape}")
                continue
            if np.max(np.abs(e.cov - e.cov.T), initial=0.0) > SYMMETRY_TOL:
                violations.append(f"emission {i} covariance asymmetric")
            elif not _is_spd(e.cov):
                violations.append(f"emission {i} covariance not positive definite")
    return violations


def ensure_hmm(params: HmmParams) -> HmmParams:
    v = validate_hmm(params)
    if v:
        raise InvalidModelError(v)
    return params


# --------------------------------------------------------------------------
# Linear Gaussian SSM
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LgssmParams:
    """Linear Gaussian state space model.

    h_{k+1} = A h_k + B x_k + w_k,  w_k ~ N(0, Q)
    y_k     = C h_k + v_k,          v_k ~ N(0, R)
    h_1 ~ N(init_mean, init_cov)
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "Q", "R", "init_cov"):
            object.__setattr__(self, name, _frozen(np.atleast_2d(getattr(self, name))))
        B = np.array(self.B, dtype=float)
        if B.size == 0:
            B = B.reshape(self.A.shape[0], 0)
        object.__setattr__(self, "B", _frozen(np.atleast_2d(B)))
        object.__setattr__(self, "init_mean", _frozen(np.atleast_1d(self.init_mean)))

    @property
    def state_dim(self) -> int:
        return int(self.A.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.B.shape[1])

    @property
    def obs_dim(self) -> int:
        return int(self.C.shape[0])

    @classmethod
    def create(cls, A, C, Q, R, init_mean, init_cov, B=None) -> "LgssmParams":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if B is None:
            B = np.zeros((A.shape[0], 0))
        return cls(A, B, C, Q, R, init_mean, init_cov)


def _cov_violations(name: str, m: np.ndarray, n: int, definite: bool) -> list[str]:
    if m.shape != (n, n):
        return [f"{name} has shape {m.shape}, expected {(n, n)}"]
    if not np.all(np.isfinite(m)):
        return [f"{name} has non-finite entries"]
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL:
        return [f"{name} asymmetric"]
    if n == 0:
        return []
    eig_min = float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
    if definite and (eig_min <= 0.0 or not _is_spd(m)):
        return [f"{name} not positive definite"]
    # PSD allowance scales with the matrix magnitude
    if eig_min < -SYMMETRY_TOL * max(1.0, float(np.abs(m).max())):
        return [f"{name} not positive semidefinite (min eigenvalue {eig_min:.3g})"]
    return []


def validate_lgssm(params: LgssmParams, *, require_definite_r: bool = True) -> list[str]:
    """Return violated LgssmParams invariants.

    ``require_definite_r=False`` relaxes R to positive semidefinite, which is
    all that sampling needs.
    """
    s, p = params.A.shape[0], params.C.shape[0]
    violations: list[str] = []
    if params.A.shape != (s, s) or s < 1:
        violations.append(f"A has shape {params.A.shape}, expected square")
    if params.B.shape[0] != s:
        violations.append(f"B has {params.B.shape[0]} rows, expected {s}")
    if params.C.shape[1] != s or p < 1:
        violations.append(f"C has shape {params.C.shape}, expected (p, {s})")
    if params.init_mean.shape != (s,):
        violations.append(f"init_mean has shape {params.init_mean.shape}, expected {(s,)}")
    violations += _cov_violations("Q", params.Q, s, definite=False)
    violations += _cov_violations("R", params.R, p, definite=require_definite_r)
    violations += _cov_violations("init_cov", params.init_cov, s, definite=False)
    return violations


def ensure_lgssm(params: LgssmParams, *, require_definite_r: bool = True) -> LgssmParams:
    v = validate_lgssm(params, require_definite_r=require_definite_r)
    if v:
        raise InvalidModelError(v)
    return params


# --------------------------------------------------------------------------
# Deterministic SSMs
# --------------------------------------------------------------------------


def _check_abc(A, B, C) -> int:
    s = A.shape[0]
    if A.ndim != 2 or A.shape != (s, s):
        raise ValueError(f"A must be square, got {A.shape}")
    if B.ndim != 2 or B.shape[0] != s:
        raise ValueError(f"B must have {s} rows, got {B.shape}")
    if C.ndim != 2 or C.shape[1] != s:
        raise ValueError(f"C must have {s} columns, got {C.shape}")
    return s


@dataclass(frozen=True)
class ContinuousSsmParams:
    """h'(t) = A h(t) + B x(t),  y(t) = C h(t) + D x(t)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        A, B, C = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.B, self.C))
        _check_abc(A, B, C)
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else np.atleast_2d(
            np.asarray(self.D, dtype=float))
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D must have shape {(C.shape[0], B.shape[1])}, got {D.shape}")
        for name, m in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, _frozen(m))


@dataclass(frozen=True)
class DiscreteSsmParams:
    """h_{k+1} = A_bar h_k + B_bar x_k,  y_k = C h_k.  No noise, no feedthrough."""

    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray
    step_size: Optional[float] = None
    rule: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        A, B, C = (np.atleast_2d(np.asarray(m, dtype=float))
                   for m in (self.A_bar, self.B_bar, self.C))
        _check_abc(A, B, C)
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        object.__setattr__(self, "A_bar", _frozen(A))
        object.__setattr__(self, "B_bar", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))

    @property
    def state_dim(self) -> int:
        return int(self.A_bar.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.B_bar.shape[1])

    @property
    def obs_dim(self) -> int:
        return int(self.C.shape[0])


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


def as_inputs(inputs, length: int, input_dim: int, *, min_length: Optional[int] = None) -> np.ndarray:
    """Coerce an input sequence to a float array of shape ``(n, input_dim)``.

    ``None`` is accepted only when ``input_dim == 0``.  The returned array has
    at least ``min_length`` rows (default ``length - 1``, since the last
    input never drives a transition).
    """
    need = max(length - 1, 0) if min_length is None else min_length
    if inputs is None:
        if input_dim != 0:
            raise ValueError(f"model has input_dim={input_dim} but no inputs were given")
        return np.zeros((max(length, 0), 0))
    x = np.asarray(inputs, dtype=float)
    if input_dim == 0:
        if x.ndim == 2 and x.shape[1] != 0:
            raise ValueError(f"inputs have dimension {x.shape[1]}, model expects 0")
        return np.zeros((max(length, 0), 0))
    if x.ndim == 1:
        x = x.reshape(-1, input_dim)
    if x.shape[1] != input_dim:
        raise ValueError(f"inputs have dimension {x.shape[1]}, model expects {input_dim}")
    if x.shape[0] < need:
        raise ValueError(f"need at least {need} inputs for a length-{length} sequence, got {x.shape[0]}")
    return x


def as_obs_matrix(obs, obs_dim: int) -> np.ndarray:
    y = np.asarray(obs, dtype=float)
    if y.ndim == 1:
        y = y[:, None] if obs_dim == 1 else y[None, :]
    if y.ndim != 2 or y.shape[1] != obs_dim:
        raise ValueError(f"observations have shape {np.shape(obs)}, expected (T, {obs_dim})")
    if y.shape[0] < 1:
        raise ValueError("observation sequence must be non-empty")
    return y


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (m + m.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_hmm(params: HmmParams, length: int, seed: int):
    """Draw ``(states, observations)`` of the given length.

    Categorical observations come back as an int array ``(T,)``, Gaussian ones
    as a float array ``(T, p)``.
    """
    ensure_hmm(params)
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    rng = np.random.default_rng(seed)
    K = params.num_states
    cum_pi = np.cumsum(params.initial_dist)
    cum_A = np.cumsum(params.transition, axis=1)
    u = rng.random(length)
    states = np.empty(length, dtype=np.int64)
    states[0] = min(int(np.searchsorted(cum_pi, u[0] * cum_pi[-1], side="right")), K - 1)
    for k in range(1, length):
        row = cum_A[states[k - 1]]
        states[k] = min(int(np.searchsorted(row, u[k] * row[-1], side="right")), K - 1)

    if params.emission_family == "categorical":
        V = params.emission_dim
        cum_B = np.cumsum(np.stack([e.probs for e in params.emissions]), axis=1)
        u = rng.random(length)
        obs = np.empty(length, dtype=np.int64)
        for i in range(K):
            idx = np.flatnonzero(states == i)
            row = cum_B[i]
            obs[idx] = np.minimum(np.searchsorted(row, u[idx] * row[-1], side="right"), V - 1)
    else:
        p = params.emission_dim
        z = rng.standard_normal((length, p))
        obs = np.empty((length, p))
        for i, e in enumerate(params.emissions):
            idx = states == i
            obs[idx] = e.mean + z[idx] @ _psd_sqrt(e.cov).T
    return states, obs


def sample_lgssm(params: LgssmParams, inputs, seed: int, length: Optional[int] = None):
    """Draw ``(states (T, s), observations (T, p))``.

    ``length`` defaults to the number of input rows; it must be given for
    models without inputs.
    """
    ensure_lgssm(params, require_definite_r=False)
    if length is None:
        if inputs is None:
            raise ValueError("length is required when there are no inputs")
        length = len(inputs)
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    x = as_inputs(inputs, length, params.input_dim)
    rng = np.random.default_rng(seed)
    s, p = params.state_dim, params.obs_dim
    h0 = params.init_mean + _psd_sqrt(params.init_cov) @ rng.standard_normal(s)
    w = rng.standard_normal((length, s)) @ _psd_sqrt(params.Q).T
    v = rng.standard_normal((length, p)) @ _psd_sqrt(params.R).T
    drive = x[: length - 1] @ params.B.T if params.input_dim else np.zeros((length - 1, s))
    h = np.empty((length, s))
    h[0] = h0
    A = params.A
    for k in range(1, length):
        h[k] = A @ h[k - 1] + drive[k - 1] + w[k - 1]
    y = h @ params.C.T + v
    return h, y
