"""Side-by-side comparison of the model families on one data set."""
from __future__ import annotations

import logging

import numpy as np

from .em import EmConfig, em_fit, init_hmm_from_data, init_lgssm_from_data
from .models import HmmParams, LgssmParams

log = logging.getLogger(__name__)

MODELS = ("HMM", "LG-SSM", "Kalman Filter", "NLP SSM (S4/Mamba)")
ATTRIBUTES = ("Latent state", "Time", "Stochastic", "PGM defined", "Inference", "Training",
              "Uncertainty", "Role")

CAPABILITIES = {
    "Latent state": ("Discrete", "Continuous", "Continuous", "Continuous"),
    "Time": ("Discrete", "Discrete", "Discrete", "Discrete"),
    "Stochastic": ("Yes", "Yes", "Yes", "No"),
    "PGM defined": ("Yes", "Yes", "N/A", "No"),
    "Inference": ("Forward–Backward", "Kalman smoother", "Kalman filter", "Forward scan"),
    "Training": ("EM", "EM", "N/A", "Backpropagation"),
    "Uncertainty": ("State identity", "Trajectory", "Trajectory", "None"),
    "Role": ("Probabilistic model", "Probabilistic model", "Algorithm", "Deterministic model"),
}

FOOTNOTES = (
    "NLP SSMs as used in practice are deterministic and are not trained as probabilistic "
    "generative models, although a deterministic computation graph can be embedded in one.",
    "The Kalman filter is an inference algorithm rather than a model, so it has no PGM.",
    "Training of NLP SSMs by backpropagation is not implemented here; only the forward scan is.",
)


def capability(model: str, attribute: str) -> str:
    return CAPABILITIES[attribute][MODELS.index(model)]


def capability_matrix() -> list[dict]:
    return [{"attribute": a, **dict(zip(MODELS, CAPABILITIES[a]))} for a in ATTRIBUTES]


def hmm_parameter_count(params: HmmParams) -> int:
    K, D = params.num_states, params.emission_dim
    per_state = D - 1 if params.emission_family == "categorical" else D + D * (D + 1) // 2
    return (K - 1) + K * (K - 1) + K * per_state


def lgssm_parameter_count(params: LgssmParams) -> int:
    s, d, p = params.state_dim, params.input_dim, params.obs_dim
    return s * s + s * d + p * s + s * (s + 1) // 2 + p * (p + 1) // 2 + s + s * (s + 1) // 2


def _fit_row(family, init_fn, count_fn, data, config, n_steps):
    try:
        init = init_fn()
        rep = em_fit(family, init, data, config)
    except Exception as exc:  # one family failing must not sink the other
        log.warning("%s fit failed: %s", family, exc)
        return {"status": "error", "error": str(exc)}
    ll = rep.log_likelihood_trace[-1] if rep.log_likelihood_trace else None
    return {
        "status": "fault" if rep.faulted else "ok",
        "stop_reason": rep.stop_reason,
        "error": rep.error,
        "em_iterations": rep.iterations,
        "log_likelihood": ll,
        "log_likelihood_per_step": None if ll is None else ll / n_steps,
        "parameter_count": count_fn(rep.final_params),
        "final_params": rep.final_params,
    }


def compare_families(sequences, num_states: int, state_dim: int, config: EmConfig = EmConfig()) -> dict:
    """Fit a Gaussian-emission HMM and an LG-SSM to the same continuous data."""
    ys = [np.asarray(y, dtype=float).reshape(len(y), -1) for y in sequences]
    n_steps = sum(len(y) for y in ys)
    hmm_row = _fit_row("hmm", lambda: init_hmm_from_data(ys, num_states, "gaussian", config.seed),
                       hmm_parameter_count, ys, config, n_steps)
    lgssm_row = _fit_row("lgssm", lambda: init_lgssm_from_data(ys, state_dim, config.seed),
                         lgssm_parameter_count, ys, config, n_steps)
    return {
        "capabilities": capability_matrix(),
        "footnotes": list(FOOTNOTES),
        "fits": {"HMM": hmm_row, "LG-SSM": lgssm_row},
        "num_steps": n_steps,
    }


def format_report(result: dict) -> str:
    widths = [max(len("Attribute"), *(len(a) for a in ATTRIBUTES))]
    widths += [max(len(m), *(len(CAPABILITIES[a][i]) for a in ATTRIBUTES)) for i, m in enumerate(MODELS)]

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths))

    out = [line(["Attribute", *MODELS]), "-+-".join("-" * w for w in widths)]
    out += [line([a, *CAPABILITIES[a]]) for a in ATTRIBUTES]
    out += [""] + [f"[{i + 1}] {f}" for i, f in enumerate(result["footnotes"])] + [""]
    out.append(f"Fitted on {result['num_steps']} steps:")
    for name, row in result["fits"].items():
        if row["status"] == "error":
            out.append(f"  {name:<7} failed: {row['error']}")
            continue
        out.append(f"  {name:<7} loglik/step={row['log_likelihood_per_step']:.6f}  "
                   f"params={row['parameter_count']}  em_iters={row['em_iterations']}  "
                   f"stop={row['stop_reason']}")
    return "\n".join(out) + "\n"
