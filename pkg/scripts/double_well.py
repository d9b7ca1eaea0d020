"""1-D double well: estimated density of states against quadrature, and branch masses."""

import argparse

import numpy as np

from sublevel.cli import annotate, build_tree, load_config, run_sampler
from sublevel.core import build_energy_grid
from sublevel.landscape import branch_mass, estimate_dos
from sublevel.testbeds import double_well_energy, quadrature_dos_1d


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    cfg = load_config(None, "double-well")
    cfg.seed = args.seed
    samples, _, _ = run_sampler(cfg)
    tree, used = build_tree(samples, cfg)
    grid = build_energy_grid(samples.energies, cfg.levels)
    est = estimate_dos(samples, grid)
    ref = quadrature_dos_1d(double_well_energy, -2.0, 2.0, grid)
    print("ring  estimate  quadrature  ratio")
    for m, (a, b) in enumerate(zip(est.values, ref.values)):
        print(f"{m:4d}  {a:8.4f}  {b:10.4f}  {a / b:5.3f}")
    annotate(tree, used)
    for T in (0.3, 1.0, 3.0):
        masses = [branch_mass(tree, n.id, T) for n in tree.leaves()]
        roots = [branch_mass(tree, r, T) for r in tree.roots]
        print(f"T={T}: leaf masses {np.round(masses, 4).tolist()}, roots {np.round(roots, 6).tolist()} (sum {sum(roots):.6f})")


if __name__ == "__main__":
    main()
