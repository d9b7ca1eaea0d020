"""Layered 4-D surrogate: recovered minima per layer with and without interpolation rescue."""

import argparse
import json
import time

import numpy as np

from sublevel.cli import build_tree, parse_config, run_sampler
from sublevel.testbeds import layered_basin, layered_constants


def summary(tree):
    basin = {n.id: tuple(layered_basin(n.rep_state)) for n in tree.leaves()}
    layer = {k: 1 + int(np.count_nonzero(b)) for k, b in basin.items()}
    counts = [len({basin[k] for k in basin if layer[k] == j}) for j in range(1, 6)]
    c = layered_constants()
    off = []
    for n in tree.barriers():
        lows = sorted(min(layer[k] for k in tree.leaves_under(ch)) for ch in n.children)
        expected = max(c.barrier(j) for j in lows[1:])
        m = min(int(np.searchsorted(tree.grid.boundaries, expected, side="right")), tree.grid.M - 1)
        off.append(abs(n.energy - expected) / tree.grid.widths()[m])
    return counts, np.array(off)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    cfg = parse_config(json.dumps({"seed": args.seed}), "args", "layered4d")
    t0 = time.perf_counter()
    samples, acc, _ = run_sampler(cfg)
    print(f"{len(samples)} samples in {time.perf_counter() - t0:.0f}s; acceptance {np.round(acc, 2)}")
    print("layer sizes 1, 8, 24, 32, 16")
    for interp in (False, True):
        cfg_i = parse_config(json.dumps({"seed": args.seed, "cluster": {"interpolation": interp}}), "args", "layered4d")
        t0 = time.perf_counter()
        tree, _ = build_tree(samples, cfg_i)
        counts, off = summary(tree)
        print(
            f"interpolation={interp}: {len(tree.leaves())} leaves, distinct minima per layer {counts}, "
            f"barriers within one ring {int(np.sum(off <= 1))}/{len(off)}, {time.perf_counter() - t0:.0f}s"
        )


if __name__ == "__main__":
    main()
