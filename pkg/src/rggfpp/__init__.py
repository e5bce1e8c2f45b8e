"""First-passage percolation on supercritical random geometric graphs.

The package builds Poisson point clouds in a box, joins points within a
fixed radius, draws positive edge weights, and measures the resulting
random metric: passage times, growth sets, geodesic trees, and an augmented
lattice overlay that regularizes passage times for comparison experiments.
"""

__version__ = "0.1.0"

from . import augmented, estimators, fpp, geometry, harness, percolation, rng

__all__ = [
    "__version__",
    "augmented",
    "estimators",
    "fpp",
    "geometry",
    "harness",
    "percolation",
    "rng",
]
