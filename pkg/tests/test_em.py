import numpy as np
import pytest
from hypothesis import given, strategies as st

from latent_chain.em import (
    EmConfig,
    EStepError,
    HmmStats,
    LgssmStats,
    SingularGramError,
    em_fit,
    floor_covariance,
    hmm_accumulate,
    hmm_e_step,
    hmm_m_step,
    init_hmm_from_data,
    init_lgssm_from_data,
    lgssm_accumulate,
    lgssm_e_step,
    lgssm_m_step,
)
from latent_chain.hmm import posterior_marginals
from latent_chain.kalman import kalman_filter, smoothed_moments
from latent_chain.models import (
    HmmParams,
    LgssmParams,
    sample_hmm,
    sample_lgssm,
    validate_hmm,
    validate_lgssm,
)
from latent_chain.oracles import hmm_enumerate, lgssm_exact_joint

from _helpers import random_hmm, random_lgssm, random_obs


def blank_stats(K=2, V=2):
    return HmmStats.zeros(HmmParams.categorical(np.full(K, 1 / K), np.full((K, K), 1 / K), np.full((K, V), 1 / V)))


# ---- HMM ------------------------------------------------------------------


def test_transition_ratio():
    st_ = blank_stats()
    st_.trans_counts[:] = [[2.0, 2.0], [1.0, 3.0]]
    st_.trans_denominators[:] = [4.0, 4.0]
    st_.init_counts[:] = [1.0, 1.0]
    st_.occupancy[:] = [5.0, 5.0]
    st_.symbol_counts[:] = [[1.0, 4.0], [2.0, 3.0]]
    p = hmm_m_step(st_, HmmParams.categorical([0.5, 0.5], np.eye(2), np.full((2, 2), 0.5)))
    assert p.transition[0, 1] == 0.5
    assert p.transition[1].tolist() == [0.25, 0.75]
    assert np.allclose(p.emissions[0].probs, [0.2, 0.8], atol=1e-15)


def test_concentrated_occupancy_initial_dist():
    p = random_hmm(np.random.default_rng(0), 3)
    st_ = HmmStats.zeros(p)
    st_.init_counts[0] = 7.0
    st_.trans_counts[0, 0] = st_.trans_denominators[0] = st_.occupancy[0] = 7.0
    st_.symbol_counts[0, 1] = 7.0
    notes = []
    new = hmm_m_step(st_, p, notes=notes)
    assert new.initial_dist.tolist() == [1.0, 0.0, 0.0]
    # unvisited states keep their old rows and emissions
    assert np.array_equal(new.transition[1:], p.transition[1:])
    assert new.emissions[2] == p.emissions[2]
    assert len(notes) == 4


def test_gaussian_m_step_floor():
    p = HmmParams.gaussian([1.0], [[1.0]], [[0.0]], [[[1.0]]])
    y = np.full((5, 1), 2.0)
    post = posterior_marginals(p, y)
    new = hmm_m_step(hmm_accumulate(p, [y], [post]), p, EmConfig(min_variance_floor=1e-4))
    assert new.emissions[0].mean[0] == pytest.approx(2.0)
    assert new.emissions[0].cov[0, 0] == pytest.approx(1e-4)


def test_hmm_e_step_delegation_and_additivity(rng):
    p = random_hmm(rng, 3, V=4)
    obs = random_obs(rng, p, 9)
    posts, ll = hmm_e_step(p, [obs])
    ref = posterior_marginals(p, obs)
    assert np.array_equal(posts[0].gamma, ref.gamma) and ll == ref.log_likelihood
    _, ll2 = hmm_e_step(p, [obs, obs])
    assert ll2 == 2 * ll


def test_hmm_e_step_matches_enumeration(rng):
    p = random_hmm(rng, 2, V=3)
    batch = [random_obs(rng, p, 3) for _ in range(4)]
    posts, _ = hmm_e_step(p, batch)
    for obs, post in zip(batch, posts):
        assert np.max(np.abs(post.gamma - hmm_enumerate(p, obs).marginals)) <= 1e-10


def test_hmm_e_step_error_names_sequence():
    p = HmmParams.categorical([0.5, 0.5], np.full((2, 2), 0.5), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(EStepError) as err:
        hmm_e_step(p, [[0, 1], [0, 2]])
    assert err.value.index == 1


@given(st.integers(0, 2**32 - 1))
def test_hmm_one_iteration_improves(seed):
    rng = np.random.default_rng(seed)
    truth = random_hmm(rng, 2, V=3)
    data = [sample_hmm(truth, 6, seed + n)[1] for n in range(3)]
    init = random_hmm(rng, 2, V=3)
    posts, ll0 = hmm_e_step(init, data)
    new = hmm_m_step(hmm_accumulate(init, data, posts), init)
    assert validate_hmm(new) == []
    assert np.allclose(new.transition.sum(axis=1), 1.0, atol=1e-12)
    _, ll1 = hmm_e_step(new, data)
    assert ll1 >= ll0 - 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_hmm_em_monotone(seed):
    rng = np.random.default_rng(seed)
    truth = random_hmm(rng, 3, V=4)
    _, y = sample_hmm(truth, 200, seed)
    init = init_hmm_from_data([y], 3, "categorical", seed, alphabet_size=4)
    rep = em_fit("hmm", init, [y], EmConfig(max_iters=30, rel_tol=0.0))
    assert not rep.faulted
    assert np.all(np.diff(rep.log_likelihood_trace) >= -1e-9)


def test_hmm_near_fixed_point_converges_fast():
    p = HmmParams.gaussian([0.5, 0.5], [[0.9, 0.1], [0.2, 0.8]], [[-3.0], [3.0]], [[[1.0]], [[1.0]]])
    _, y = sample_hmm(p, 20_000, 1)
    rep = em_fit("hmm", p, [y], EmConfig())
    assert rep.stop_reason == "tolerance" and rep.converged
    # trace[i] is the likelihood entering iteration i; the test fires on the (i+1)-th entry
    assert rep.iterations - 1 <= 3


def test_max_iters_zero_returns_init(rng):
    p = random_hmm(rng, 2)
    rep = em_fit("hmm", p, [random_obs(rng, p, 10)], EmConfig(max_iters=0))
    assert rep.final_params is p and rep.log_likelihood_trace == [] and rep.iterations == 0
    assert rep.stop_reason == "max-iters" and not rep.converged


def test_em_inference_fault_reported():
    p = HmmParams.categorical([0.5, 0.5], np.full((2, 2), 0.5), [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    rep = em_fit("hmm", p, [[0, 2]], EmConfig(max_iters=5))
    assert rep.faulted and rep.stop_reason == "inference-fault" and "sequence 0" in rep.error


def test_init_hmm_from_data_valid(rng):
    y = rng.standard_normal((50, 2))
    assert validate_hmm(init_hmm_from_data([y], 3, "gaussian", 0)) == []
    assert validate_hmm(init_hmm_from_data([[0, 1, 2, 1]], 2, "categorical", 0)) == []
    with pytest.raises(ValueError):
        init_hmm_from_data([y], 2, "poisson")


# ---- LG-SSM ---------------------------------------------------------------


def scalar_stats(s0, s1):
    st_ = LgssmStats.zeros(1, 1, 0)
    st_.n_seq, st_.n_trans, st_.n_obs = 1, 3, 4
    st_.hh_prev[:] = s0
    st_.cross[:] = s1
    st_.hh_next[:] = s1 * s1 / s0 + 0.3
    st_.hh_all[:] = 2.0
    st_.yh[:] = 1.0
    st_.yy[:] = 3.0
    st_.init_m1[:] = 0.2
    st_.init_m2[:] = 0.5
    return st_


def test_scalar_dynamics_ratio():
    old = LgssmParams.create([[0.1]], [[1.0]], [[1.0]], [[1.0]], [0.0], [[1.0]])
    new = lgssm_m_step(scalar_stats(4.0, 3.0), old)
    assert new.A[0, 0] == 0.75
    assert new.Q[0, 0] == pytest.approx(0.1, abs=1e-15)
    assert new.C[0, 0] == 0.5
    assert new.R[0, 0] == pytest.approx((3.0 - 0.5) / 4, abs=1e-15)


def test_zero_residual_floors_q():
    old = LgssmParams.create(np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))
    st_ = LgssmStats.zeros(2, 2, 0)
    G = np.array([[2.0, 0.3], [0.3, 1.0]])
    A = np.array([[0.5, 0.1], [0.0, 0.7]])
    st_.n_seq, st_.n_trans, st_.n_obs = 1, 5, 6
    st_.hh_prev[:] = G
    st_.cross[:] = A @ G
    st_.hh_next[:] = A @ G @ A.T
    st_.hh_all[:] = G
    st_.yh[:] = G
    st_.yy[:] = G
    st_.init_m2[:] = np.eye(2)
    new = lgssm_m_step(st_, old, EmConfig(min_variance_floor=1e-6))
    assert np.allclose(new.A, A, atol=1e-14)
    assert np.allclose(new.Q, 1e-6 * np.eye(2), atol=1e-12)
    assert np.allclose(new.R, 1e-6 * np.eye(2), atol=1e-12)


def test_singular_gram_reports_dimension():
    old = LgssmParams.create(np.eye(3), np.eye(3), np.eye(3), np.eye(3), np.zeros(3), np.eye(3))
    st_ = LgssmStats.zeros(3, 3, 0)
    st_.n_seq, st_.n_trans, st_.n_obs = 1, 1, 2
    st_.hh_prev[:] = np.diag([1.0, 0.0, 0.0])
    with pytest.raises(SingularGramError) as err:
        lgssm_m_step(st_, old)
    assert err.value.deficiency == 2 and "2" in str(err.value)


def test_nearly_noiseless_recovery():
    A = np.array([[0.95, -0.2], [0.2, 0.95]]) * 0.98
    zero = np.zeros((2, 2))
    truth = LgssmParams.create(A, np.eye(2), zero, zero, [1.0, 0.0], zero)
    h, _ = sample_lgssm(truth, None, 0, length=60)
    # exact states as observations; smoothing under the true dynamics with tiny noise
    tiny = 1e-12 * np.eye(2)
    start = LgssmParams.create(A, np.eye(2), tiny, tiny, [0.0, 0.0], np.eye(2))
    moms, _ = lgssm_e_step(start, [h])
    new = lgssm_m_step(lgssm_accumulate(start, [h], moms), start)
    assert np.max(np.abs(new.A - A)) <= 1e-6


def test_lgssm_e_step_delegation_and_additivity(rng):
    p = random_lgssm(rng, 2, 2)
    _, y = sample_lgssm(p, None, 0, length=8)
    moms, ll = lgssm_e_step(p, [y])
    ref = smoothed_moments(p, y)
    assert np.array_equal(moms[0].m2, ref.m2)
    assert ll == kalman_filter(p, y).log_likelihood
    _, ll2 = lgssm_e_step(p, [y, y])
    assert ll2 == 2 * ll


def test_lgssm_e_step_matches_oracle(rng):
    p = random_lgssm(rng, 1, 1)
    _, y = sample_lgssm(p, None, 3, length=4)
    moms, ll = lgssm_e_step(p, [y])
    joint = lgssm_exact_joint(p, None, 4)
    means, covs, cross = joint.smoothed(y)
    assert np.max(np.abs(moms[0].m1 - means)) <= 1e-8
    assert np.max(np.abs(moms[0].cross - cross)) <= 1e-8
    assert ll == pytest.approx(joint.log_evidence(y), abs=1e-8)


def test_joint_b_update_with_inputs(rng):
    truth = LgssmParams.create([[0.6]], [[1.0]], [[0.05]], [[0.05]], [0.0], [[1.0]], B=[[1.5]])
    x = rng.standard_normal((3000, 1))
    _, y = sample_lgssm(truth, x, 2, length=3000)
    rep = em_fit("lgssm", init_lgssm_from_data([y], 1, 0, input_dim=1), [y],
                 EmConfig(max_iters=300, rel_tol=1e-10), inputs=[x])
    fp = rep.final_params
    assert np.all(np.diff(rep.log_likelihood_trace) >= -1e-9)
    # (A, B C) is invariant to the latent scale
    assert fp.A[0, 0] == pytest.approx(0.6, abs=0.05)
    assert (fp.B * fp.C)[0, 0] == pytest.approx(1.5, abs=0.1)


@pytest.mark.parametrize("seed", range(20))
def test_lgssm_em_monotone(seed):
    rng = np.random.default_rng(seed)
    truth = random_lgssm(rng, 2, 2)
    _, y = sample_lgssm(truth, None, seed, length=200)
    rep = em_fit("lgssm", init_lgssm_from_data([y], 2, seed), [y], EmConfig(max_iters=30, rel_tol=0.0))
    assert not rep.faulted
    assert np.all(np.diff(rep.log_likelihood_trace) >= -1e-9)
    assert validate_lgssm(rep.final_params) == []


def test_lgssm_near_fixed_point():
    # the latent scale is not identified, so EM creeps along that ridge and only a
    # coarse relative tolerance is met within a few iterations
    q = LgssmParams.create([[0.9]], [[1.0]], [[0.1]], [[0.1]], [0.0], [[1.0]])
    _, y = sample_lgssm(q, None, 1, length=20_000)
    rep = em_fit("lgssm", q, [y], EmConfig(rel_tol=1e-4))
    assert rep.converged and rep.iterations - 1 <= 3


def test_floor_covariance_properties(rng):
    M = rng.standard_normal((4, 4))
    out = floor_covariance(M @ M.T - 2 * np.eye(4), 0.1)
    assert np.array_equal(out, out.T) and np.linalg.eigvalsh(out).min() >= 0.1 - 1e-12
    spd = M @ M.T + np.eye(4)
    assert np.allclose(floor_covariance(spd, 1e-8), spd)


def test_unknown_family_rejected(rng):
    with pytest.raises(ValueError):
        em_fit("ssm", random_hmm(rng, 2), [[0, 1]])
