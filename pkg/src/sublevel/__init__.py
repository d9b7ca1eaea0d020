"""Energy landscapes of sampled distributions as trees of sublevel sets."""

from .core import (
    DosEstimate,
    EnergyGrid,
    GridError,
    Sample,
    SampleSet,
    Segmentation,
    assign_level_sets,
    build_energy_grid,
    make_rng,
    read_samples,
    subsample,
    write_samples,
)
from .landscape import LandscapeTree, Node, bup_build, branch_mass, estimate_dos, local_dos
from .ringcluster import ClusterParams

__all__ = [
    "ClusterParams",
    "DosEstimate",
    "EnergyGrid",
    "GridError",
    "LandscapeTree",
    "Node",
    "Sample",
    "SampleSet",
    "Segmentation",
    "assign_level_sets",
    "branch_mass",
    "bup_build",
    "build_energy_grid",
    "estimate_dos",
    "local_dos",
    "make_rng",
    "read_samples",
    "subsample",
    "write_samples",
]
