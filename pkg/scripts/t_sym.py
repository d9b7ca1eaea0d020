"""Symmetric t-posterior: tree, verification and masses at T=1."""

import argparse
import time

import numpy as np

from sublevel.cli import annotate, build_tree, load_config, run_sampler, verify_tree
from sublevel.landscape import branch_mass, write_tree_json


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", help="tree JSON path")
    args = ap.parse_args()
    cfg = load_config(None, "t-sym")
    cfg.seed = args.seed
    t0 = time.perf_counter()
    samples, acc, swaps = run_sampler(cfg)
    tree, used = build_tree(samples, cfg)
    print(f"{len(samples)} samples, {time.perf_counter() - t0:.0f}s; acceptance {np.round(acc, 2)}; swaps {np.round(swaps, 2)}")
    annotate(tree, used)
    root = tree.roots[0]
    for n in sorted(tree.nodes, key=lambda n: n.energy):
        own = branch_mass(tree, n.id, 1.0, descendants=n.kind == "leaf")
        print(f"{n.kind:8s} {n.energy:9.3f}  mass(T=1) {own:.4f}" + ("  root" if n.id == root else ""))
    report = verify_tree(tree, cfg)
    print(f"max leaf energy delta after re-minimisation {report['max_delta']:.4f}")
    if args.out:
        write_tree_json(tree, args.out, [1.0])


if __name__ == "__main__":
    main()
