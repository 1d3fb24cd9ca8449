"""Escape probability of a single walk: K_n against its closed form, and the 3d torus."""
import argparse

from annihilate.graph import make_complete, make_torus
from annihilate.stats import complete_graph_escape, escape_probability


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=101)
    ap.add_argument("--horizons", type=float, nargs="+", default=[0.5, 2.0, 5.0, 20.0])
    ap.add_argument("--walks", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rep = escape_probability(make_complete(args.n), 1.0, args.horizons, args.walks, seed=args.seed)
    print(f"K_{args.n}:   T   simulated          closed form")
    for T, gh, se in zip(rep.horizons, rep.gamma_hat, rep.gamma_se):
        print(f"  {T:7.2f}  {gh:.4f} +- {se:.4f}   {complete_graph_escape(args.n, 1.0, T):.4f}")
    tor = escape_probability(make_torus(3, 64), 1.0, args.horizons, args.walks // 4,
                             seed=args.seed)
    print("torus d=3 L=64:   T   no-return     range/T")
    for T, gh, rt in zip(tor.horizons, tor.gamma_hat, tor.range_per_time):
        print(f"  {T:7.2f}  {gh:.4f}   {rt:.4f}")


if __name__ == "__main__":
    main()
