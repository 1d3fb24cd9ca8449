"""Visit counts at the origin of the d=1 benchmark torus for three B mobilities."""
import argparse

import numpy as np

from annihilate.core import SimParams
from annihilate.graph import make_torus
from annihilate.stats import recurrence_counts

REGIMES = [(1.0, "+1:0.25,-1:0.25,0:0.5"), (0.5, "+1:0.25,-1:0.25,0:0.5"),
           (0.0, "+1:0.3,-1:0.2,0:0.5")]  # static B needs a surplus of A


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=32768)
    ap.add_argument("--ladder", type=float, nargs="+", default=[100.0, 1000.0])
    ap.add_argument("--replicas", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--csv", help="prefix for per-regime count tables")
    args = ap.parse_args()
    g = make_torus(1, args.L)
    for D_B, nu in REGIMES:
        rep = recurrence_counts((g, SimParams(1.0, D_B, nu, max(args.ladder))), g.origin,
                                args.ladder, args.replicas, args.seed, jobs=args.jobs)
        if args.csv:
            rep.to_csv(f"{args.csv}_DB{D_B}.csv")
        inc = rep.increments()
        zero = rep.seeds[(inc == 0).any(axis=1)].tolist()
        print(f"D_B={D_B}: medians {rep.medians().tolist()}  "
              f"mean increments {np.round(inc.mean(axis=0), 2).tolist()}  zero-visit seeds {zero}")


if __name__ == "__main__":
    main()
