"""Parameter recovery: simulate from known models, refit by EM from the data-driven init.

    python scripts/recovery.py --length 5000 --seeds 0 1 2
"""
import argparse
import itertools
import time

import numpy as np

from latent_chain import EmConfig, HmmParams, LgssmParams, em_fit, sample_hmm, sample_lgssm
from latent_chain.em import init_hmm_from_data, init_lgssm_from_data


def hmm_run(T, seed, config):
    truth = np.array([[0.9, 0.1], [0.2, 0.8]])
    p = HmmParams.gaussian([0.5, 0.5], truth, [[-3.0], [3.0]], [[[1.0]], [[1.0]]])
    _, y = sample_hmm(p, T, seed)
    rep = em_fit("hmm", init_hmm_from_data([y], 2, "gaussian", seed), [y], config)
    A = rep.final_params.transition
    err = min(np.abs(A[np.ix_(q, q)] - truth).max() for q in itertools.permutations(range(2)))
    return err, rep


def lgssm_run(T, seed, config):
    p = LgssmParams.create([[0.9]], [[1.0]], [[0.1]], [[0.1]], [0.0], [[1.0]])
    _, y = sample_lgssm(p, None, seed, length=T)
    rep = em_fit("lgssm", init_lgssm_from_data([y], 1, seed), [y], config)
    return abs(rep.final_params.A[0, 0] - 0.9), rep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--length", type=int, default=5000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--max-iters", type=int, default=200)
    ap.add_argument("--rel-tol", type=float, default=1e-8)
    args = ap.parse_args()
    config = EmConfig(max_iters=args.max_iters, rel_tol=args.rel_tol)

    print(f"{'family':<7} {'seed':>4} {'error':>8} {'iters':>6} {'stop':<12} {'loglik':>14} {'secs':>6}")
    for seed in args.seeds:
        for name, fn in (("HMM", hmm_run), ("LG-SSM", lgssm_run)):
            t0 = time.perf_counter()
            err, rep = fn(args.length, seed, config)
            print(f"{name:<7} {seed:>4} {err:>8.4f} {rep.iterations:>6} {rep.stop_reason:<12} "
                  f"{rep.log_likelihood_trace[-1]:>14.3f} {time.perf_counter() - t0:>6.1f}")


if __name__ == "__main__":
    main()
