"""HMMs, linear Gaussian state space models and deterministic discretized SSMs
with shared EM machinery and brute-force reference inference."""

from .em import EmConfig, EmReport, em_fit, hmm_e_step, hmm_m_step, lgssm_e_step, lgssm_m_step
from .hmm import PosteriorMarginals, backward, forward, hmm_joint_log_likelihood, posterior_marginals
from .kalman import (
    GaussianBelief,
    SmoothedMoments,
    kalman_filter,
    lgssm_joint_log_likelihood,
    rts_smoother,
    smoothed_moments,
)
from .models import (
    ContinuousSsmParams,
    DiscreteSsmParams,
    HmmParams,
    LgssmParams,
    sample_hmm,
    sample_lgssm,
    validate_hmm,
    validate_lgssm,
)
from .nlp_ssm import SsmKernel, apply_kernel, convolution_kernel, discretize, one_step_unroll_check, scan
from .oracles import hmm_enumerate, lgssm_exact_joint

__version__ = "0.1.0"

__all__ = [
    "ContinuousSsmParams", "DiscreteSsmParams", "EmConfig", "EmReport", "GaussianBelief", "HmmParams",
    "LgssmParams", "PosteriorMarginals", "SmoothedMoments", "SsmKernel", "apply_kernel", "backward",
    "convolution_kernel", "discretize", "em_fit", "forward", "hmm_e_step", "hmm_enumerate",
    "hmm_joint_log_likelihood", "hmm_m_step", "kalman_filter", "lgssm_e_step", "lgssm_exact_joint",
    "lgssm_joint_log_likelihood", "lgssm_m_step", "one_step_unroll_check", "posterior_marginals",
    "rts_smoother", "sample_hmm", "sample_lgssm", "scan", "smoothed_moments", "validate_hmm",
    "validate_lgssm",
]
