import numpy as np

from latent_chain.models import HmmParams, LgssmParams


def random_stochastic(rng, shape, concentration=1.0):
    m = rng.gamma(concentration, size=shape)
    return m / m.sum(axis=-1, keepdims=True)


def random_spd(rng, n, scale=1.0, jitter=0.2):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + jitter * np.eye(n))


def random_hmm(rng, K, emission="categorical", V=3, p=1):
    pi = random_stochastic(rng, K)
    A = random_stochastic(rng, (K, K))
    if emission == "categorical":
        return HmmParams.categorical(pi, A, random_stochastic(rng, (K, V)))
    means = 2.0 * rng.standard_normal((K, p))
    covs = np.stack([random_spd(rng, p, 0.7) for _ in range(K)])
    return HmmParams.gaussian(pi, A, means, covs)


def random_lgssm(rng, s, p, d=0):
    A = rng.standard_normal((s, s))
    A *= 0.9 / max(1e-9, np.abs(np.linalg.eigvals(A)).max())
    return LgssmParams(A, rng.standard_normal((s, d)), rng.standard_normal((p, s)),
                       random_spd(rng, s, 0.5), random_spd(rng, p, 0.5),
                       rng.standard_normal(s), random_spd(rng, s))


def random_obs(rng, params, T):
    if params.emission_family == "categorical":
        return rng.integers(0, params.emission_dim, size=T)
    return 2.0 * rng.standard_normal((T, params.emission_dim))
