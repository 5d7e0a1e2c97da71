"""Deterministic discrete-time SSMs: discretization, recurrent scan and the
equivalent causal convolution.

The discrete model has no feedthrough term; discretizing a continuous model
simply drops its D matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .models import ContinuousSsmParams, DiscreteSsmParams

ZOH_COND_MAX = 1e12
RULES = ("zoh", "bilinear")


class DiscretizationError(ValueError):
    pass


def _zoh_input_series(A: np.ndarray, B: np.ndarray, dt: float, max_terms: int = 500) -> np.ndarray:
    """sum_{m>=0} dt^{m+1} A^m / (m+1)! @ B, i.e. the integral of exp(tA) B over [0, dt]."""
    term = dt * B
    total = term.copy()
    for m in range(1, max_terms):
        term = (dt / (m + 1)) * (A @ term)
        total += term
        if np.max(np.abs(term)) <= 1e-17 * max(1.0, np.max(np.abs(total))):
            break
    return total


def discretize(cont: ContinuousSsmParams, step: float, rule: str = "zoh") -> DiscreteSsmParams:
    if not step > 0:
        raise DiscretizationError(f"step must be positive, got {step}")
    A, B, C = cont.A, cont.B, cont.C
    s = A.shape[0]
    eye = np.eye(s)
    if rule == "zoh":
        A_bar = expm(step * A)
        if s and np.linalg.cond(A) <= ZOH_COND_MAX:
            B_bar = np.linalg.solve(A, (A_bar - eye) @ B)
        else:
            B_bar = _zoh_input_series(A, B, step)
    elif rule == "bilinear":
        left = eye - 0.5 * step * A
        if np.linalg.cond(left) > 1.0 / np.finfo(float).eps:
            raise DiscretizationError("bilinear rule: (I - dt/2 A) is numerically singular")
        A_bar = np.linalg.solve(left, eye + 0.5 * step * A)
        B_bar = np.linalg.solve(left, step * B)
    else:
        raise DiscretizationError(f"unknown rule {rule!r}; expected one of {RULES}")
    if not (np.all(np.isfinite(A_bar)) and np.all(np.isfinite(B_bar))):
        raise DiscretizationError(f"{rule} rule produced non-finite matrices")
    return DiscreteSsmParams(A_bar, B_bar, C, step_size=float(step), rule=rule)


def _inputs(params: DiscreteSsmParams, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    d = params.input_dim
    if x.ndim == 1:
        x = x.reshape(-1, d) if d else x[:, None][:, :0]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"inputs must have shape (T, {d}), got {np.shape(inputs)}")
    return x


def scan(params: DiscreteSsmParams, inputs, h_init=None):
    """Run h_{k+1} = A_bar h_k + B_bar x_k, y_k = C h_k for k = 1..T.

    Returns ``(states (T, s), outputs (T, p))`` with ``states[0] = h_init``.
    """
    x = _inputs(params, inputs)
    T, s = len(x), params.state_dim
    h = np.zeros(s) if h_init is None else np.asarray(h_init, dtype=float).reshape(s)
    Ab, Bb = params.A_bar, params.B_bar
    states = np.empty((T, s))
    for k in range(T):
        states[k] = h
        h = Ab @ h + Bb @ x[k]
    return states, states @ params.C.T


def one_step_unroll_check(params: DiscreteSsmParams, h_prev, x_prev):
    """Evaluate y_k both as C(A_bar h + B_bar x) and as (C A_bar) h + (C B_bar) x."""
    h = np.asarray(h_prev, dtype=float)
    x = np.asarray(x_prev, dtype=float)
    C, Ab, Bb = params.C, params.A_bar, params.B_bar
    lhs = C @ (Ab @ h + Bb @ x)
    rhs = (C @ Ab) @ h + (C @ Bb) @ x
    return lhs, rhs


@dataclass(frozen=True)
class SsmKernel:
    taps: np.ndarray  # (L, p, d), taps[j] = C A_bar^j B_bar

    @property
    def length(self) -> int:
        return int(self.taps.shape[0])

    def to_json(self) -> dict:
        return {"length": self.length, "taps": self.taps.tolist()}


def convolution_kernel(params: DiscreteSsmParams, length: int) -> SsmKernel:
    if length < 1:
        raise ValueError(f"kernel length must be >= 1, got {length}")
    taps = np.empty((length, params.obs_dim, params.input_dim))
    M = params.B_bar.copy()
    for j in range(length):
        taps[j] = params.C @ M
        M = params.A_bar @ M
    return SsmKernel(taps)


def apply_kernel(kernel: SsmKernel, inputs) -> np.ndarray:
    """Causal convolution y_k = sum_j taps[j] x_{k-1-j}, with y_1 = 0."""
    x = np.asarray(inputs, dtype=float)
    L, p, d = kernel.taps.shape
    if x.ndim == 1:
        x = x.reshape(-1, d)
    if x.shape[1] != d:
        raise ValueError(f"inputs have dimension {x.shape[1]}, kernel expects {d}")
    T = len(x)
    y = np.zeros((T, p))
    for j in range(min(L, T - 1)):
        y[j + 1:] += x[: T - 1 - j] @ kernel.taps[j].T
    return y

