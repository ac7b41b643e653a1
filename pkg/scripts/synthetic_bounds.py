"""Lower/upper cost bounds on random instances where the adversary cannot steer transitions.

Writes one CSV row per instance: the bounds, the witness cost and the CPS cost.
"""
import argparse
import csv

import numpy as np

from implicit_attacks.bounds import alpha2_star, upper_bound_cost
from implicit_attacks.cps import CpsConfig, run_cps
from implicit_attacks.mdp import ADVERSARY, VICTIM, TabularPolicy, TwoAgentMDP, best_response


def instance(rng, S, A1, A2):
    P = 0.5 * rng.dirichlet(np.ones(S), size=(S, 1, A2)) + 0.5 / S
    mdp = TwoAgentMDP(np.broadcast_to(P, (S, A1, A2, S)).copy(), rng.uniform(-1, 1, (S, A1, A2)),
                      0.9, rng.dirichlet(np.ones(S)))
    pi0 = TabularPolicy(ADVERSARY, rng.dirichlet(np.ones(A1), size=S))
    helper = TabularPolicy.deterministic(ADVERSARY, rng.integers(A1, size=S), A1)
    return mdp, pi0, best_response(mdp, helper)[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20)
    ap.add_argument("--states", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="synthetic_bounds.csv")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rows = []
    while len(rows) < args.n:
        mdp, pi0, target = instance(rng, args.states, 3, 2)
        a2, _ = alpha2_star(mdp, pi0, target)
        if a2 <= 1e-3:
            continue
        eps = a2 / 2
        rep = upper_bound_cost(mdp, pi0, target, eps)
        tr = run_cps(mdp, pi0, target, CpsConfig(epsilon=eps, max_iters=200, delta=0.05, lam=200.0))
        rows.append([len(rows), eps, rep.lower, tr.best.cost if tr.feasible else "inf", rep.upper, rep.beta])
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["instance", "epsilon", "lower", "cps_cost", "upper", "beta"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
