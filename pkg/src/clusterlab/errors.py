"""Exception types shared across the clusterlab modules."""


class ClusterLabError(Exception):
    """Base class for all clusterlab-specific errors."""


class PotentialError(ClusterLabError):
    """Invalid interaction-potential definition or parameters."""


class NoInstabilityError(ClusterLabError):
    """The Fourier transform of the potential is nonnegative on all modes,
    so no finite destabilising interaction strength exists."""


class StableSystemError(ClusterLabError):
    """All perturbation modes decay; there is no dominant unstable mode."""


class DegenerateInitError(ClusterLabError):
    """The initial perturbation amplitude is exactly zero, so no finite
    clustering-time estimate exists."""


class InvalidDensityError(ClusterLabError):
    """A density is negative or does not integrate to one."""


class CflViolationError(ClusterLabError):
    """Requested PDE time step exceeds the advective-diffusive CFL bound."""


class NoConvergenceError(ClusterLabError):
    """A fixed-point or Newton iteration failed to reach tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class ResidualError(ClusterLabError):
    """A constructed state fails its fixed-point residual bound."""


class EmptyBranchError(ClusterLabError):
    """Branch continuation could not produce a single converged point."""


class SubcriticalError(ClusterLabError):
    """Interaction strength is at or below the critical value, so no
    clustered branch exists."""


class GeometryError(ClusterLabError):
    """Cluster geometry is invalid (gap at or below the interaction
    diameter, or non-cyclic ordering)."""


class AbsorbedError(ClusterLabError):
    """The jump chain has reached its absorbing single-cluster state."""


class StepFailureError(ClusterLabError):
    """The adaptive ODE integrator failed to complete a step."""


class QuadratureError(ClusterLabError):
    """A quadrature result failed its self-consistency tolerance."""


class LabelMismatchError(ClusterLabError):
    """Cluster series cannot be matched one-to-one by initial position."""


class CheckpointError(ClusterLabError):
    """A checkpoint file is malformed or inconsistent with its run."""
