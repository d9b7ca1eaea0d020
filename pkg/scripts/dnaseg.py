"""Simulated DNA segmentation: leaf verification and the global mode."""

import argparse
import json
import time

from sublevel.cli import build_tree, parse_config, run_sampler, testbed_of, verify_tree
from sublevel.testbeds import DNA_CHANGE_POINTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, help="sampler seed (preset default when omitted)")
    ap.add_argument("--draws", type=int, default=50000)
    args = ap.parse_args()
    overrides = {"draws": args.draws} if args.seed is None else {"seed": args.seed, "draws": args.draws}
    cfg = parse_config(json.dumps(overrides), "args", "dnaseg")
    t0 = time.perf_counter()
    samples, _, _ = run_sampler(cfg)
    tree, _ = build_tree(samples, cfg)
    report = verify_tree(tree, cfg, testbed_of(cfg))
    best = min(report["leaves"], key=lambda r: r["energy"])
    print(f"{len(samples)} draws, {len(tree.leaves())} leaves, {time.perf_counter() - t0:.0f}s")
    print(f"verified {report['verified']}/{report['total']} ({report['fraction']:.3f})")
    print(f"global mode {best['change_points']} at {best['energy']:.2f}; true change points {list(DNA_CHANGE_POINTS)}")


if __name__ == "__main__":
    main()
