"""clusterlab: numerical laboratory for clustering of weakly interacting
diffusions on the 1-D torus.

Subpackages cover the interacting-particle simulation, the mean-field
McKean-Vlasov PDE, linear stability of the flat state, stationary
states and the bifurcation diagram, the reduced cluster model, and a
config-driven experiment harness with a CLI.
"""

from . import (errors, harness, io, particle, pde, potentials, reduced,
               spectral, stationary)
from .potentials import (HegselmannKrause, PiecewiseParabolic, PotentialSpec,
                         Tabulated)

__version__ = "0.1.0"

__all__ = [
    "errors", "harness", "io", "particle", "pde", "potentials", "reduced",
    "spectral", "stationary", "HegselmannKrause", "PiecewiseParabolic",
    "PotentialSpec", "Tabulated", "__version__",
]
