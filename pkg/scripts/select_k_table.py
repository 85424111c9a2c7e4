"""Criterion table over K for a 2-block SBM and an Erdos-Renyi graph of the same size."""
import argparse

from sbsgm import FitConfig, select_k
from sbsgm.graphon import BlockGraphonSpec, from_block_spec, sample_network


def table(name, net, ks, config):
    best, rows, _ = select_k(net, ks, config)
    print(f"\n{name} (N={net.N}, density {net.density:.3f})")
    print(f"{'K':>3} {'-2 loglik':>12} {'df':>8} {'criterion':>12}")
    for K, m2ll, df, crit in rows:
        print(f"{K:>3} {m2ll:12.1f} {df:8.2f} {crit:12.1f}{'  <-' if K == best else ''}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--kmax", type=int, default=3)
    ap.add_argument("--restarts", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    config = FitConfig(restarts=args.restarts, seed=args.seed)
    ks = range(1, args.kmax + 1)
    sbm = from_block_spec(BlockGraphonSpec.sbm([0.5, 0.5], [[0.6, 0.1], [0.1, 0.5]]), 4)
    table("2-block SBM", sample_network(sbm, args.n, 1)[0], ks, config)
    er = from_block_spec(BlockGraphonSpec.sbm([1.0], [[0.1]]), 2)
    table("Erdos-Renyi p=0.1", sample_network(er, args.n, 2)[0], ks, config)


if __name__ == "__main__":
    main()
