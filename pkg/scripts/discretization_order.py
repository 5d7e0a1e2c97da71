"""Convergence orders of the discretization rules on a random stable system.

Prints ||A_zoh - (I + dt A)|| (quadratic in dt) and ||A_zoh - A_bilinear||
(cubic) for a sweep of step sizes, together with successive ratios.

    python scripts/discretization_order.py --dim 3 --seed 0
"""
import argparse

import numpy as np

from latent_chain import ContinuousSsmParams
from latent_chain.nlp_ssm import discretize


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    M = rng.standard_normal((args.dim, args.dim))
    A = M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(args.dim)
    cont = ContinuousSsmParams(A, np.ones((args.dim, 1)), np.ones((1, args.dim)))
    eye = np.eye(args.dim)

    prev = None
    print(f"{'dt':>8} {'zoh-euler':>12} {'ratio':>8} {'zoh-bilinear':>13} {'ratio':>8}")
    for dt in 10.0 ** -np.arange(1, 5):
        zoh = discretize(cont, dt).A_bar
        e1 = np.linalg.norm(zoh - (eye + dt * A))
        e2 = np.linalg.norm(zoh - discretize(cont, dt, "bilinear").A_bar)
        r1, r2 = ("", "") if prev is None else (f"{prev[0] / e1:.1f}", f"{prev[1] / e2:.1f}")
        print(f"{dt:>8.0e} {e1:>12.3e} {r1:>8} {e2:>13.3e} {r2:>8}")
        prev = (e1, e2)


if __name__ == "__main__":
    main()
