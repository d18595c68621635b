"""Certificate envelopes of the accelerated primal-dual method on entropic OT.

For each (N, gamma) prints the largest observed A_k ||A x_k - b||_2 / 2R and
A_k |gap_k| / 2R^2 (both must stay <= 1) and the fitted log-log slope of
the feasibility certificate.

    python3 scripts/envelope_check.py --iters 1000
"""
import argparse

import numpy as np

from otaccel.aam import StoppingRule
from otaccel.ot import EntropicOTProblem, OTDual, dual_radius_bound, envelope_accumulator
from otaccel.pdaam import run_pdaam


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", default="adaptive", choices=("adaptive", "line_search", "gradient"))
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'N':>3} {'gamma':>6} {'feas ratio':>11} {'gap ratio':>11} {'slope':>7}")
    for n in (4, 8, 16):
        for gamma in (0.1, 0.01):
            prob = EntropicOTProblem(rng.uniform(0, 1, (n, n)), gamma,
                                     rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)))
            R = dual_radius_bound(prob)
            _, trace = run_pdaam(OTDual(prob), method=args.method,
                                 stop=StoppingRule(max_iters=args.iters))
            rows = trace.rows[1:]
            A = np.array([envelope_accumulator(prob, r.A) for r in rows])
            feas = np.array([r.feasibility for r in rows])
            gap = np.abs([r.gap for r in rows])
            k = np.array([r.iteration for r in rows])
            keep = (k >= 10) & (feas > 0)
            slope = np.polyfit(np.log(k[keep]), np.log(feas[keep]), 1)[0] if keep.sum() > 2 else np.nan
            print(f"{n:>3} {gamma:>6} {np.max(A * feas) / (2 * R):>11.3e} "
                  f"{np.max(A * gap) / (2 * R * R):>11.3e} {slope:>7.2f}")


if __name__ == "__main__":
    main()
