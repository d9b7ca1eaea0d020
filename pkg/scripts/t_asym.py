"""Asymmetric t-posterior: coarse tree, then restricted re-sampling of the shallow branches."""

import argparse
import time

import numpy as np

from sublevel.cli import build_tree, load_config, refine_branches, run_sampler


def energies(nodes):
    return np.round(sorted(n.energy for n in nodes), 2).tolist()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(None, "t-asym")
    cfg.seed = args.seed
    t0 = time.perf_counter()
    samples, _, swaps = run_sampler(cfg)
    tree, used = build_tree(samples, cfg)
    root = tree.nodes[tree.roots[0]]
    print(f"coarse ({time.perf_counter() - t0:.0f}s): leaves {energies(tree.leaves())} barriers {energies(tree.barriers())} root {root.energy:.2f}")
    print(f"swap acceptance {np.round(swaps, 2)}")
    for r in refine_branches(tree, used, cfg):
        t = r["tree"]
        print(
            f"branch at {r['minimum']:.2f}: cap {r['cap']:.2f} radius {r['radius']:.1f} "
            f"-> leaves {energies(t.leaves())} barriers {energies(t.barriers())}"
        )


if __name__ == "__main__":
    main()
