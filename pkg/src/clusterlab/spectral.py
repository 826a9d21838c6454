"""Linear stability of the uniform state against periodic perturbations.

A mean-field perturbation mode exp(i k x) of the flat density grows at
rate psi(k) = -k^2 (What(k) + 1), where What is the Fourier cosine
coefficient of the interaction potential.  The uniform state first
loses stability at the interaction strength gamma_sharp at which the
most negative Fourier coefficient reaches -1.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInitError, NoInstabilityError, StableSystemError
from .potentials import PotentialSpec, fourier_W

TWO_PI = 2.0 * math.pi


def growth_rate(spec, k):
    """Linear growth rate psi(k) = -k^2 (What(k) + 1) of mode k."""
    return -k * k * (fourier_W(spec, k) + 1.0)


def _mode_cutoff(ell):
    """Number of Fourier modes scanned by default: covers k ell up to 8 pi."""
    return max(int(math.ceil(4.0 / ell)), 8)


def gamma_sharp(family, ell):
    """Critical interaction strength for linear instability of the flat state.

    Equals -1 / min_k What_{1, ell}(k) over nonzero modes k in 2 pi Z.
    The scan window is widened until the minimiser is interior.
    """
    unit = PotentialSpec(family=family, gamma=1.0, ell=ell)
    n_modes = _mode_cutoff(ell)
    for _ in range(8):
        vals = np.array([fourier_W(unit, TWO_PI * j) for j in range(1, n_modes + 1)])
        j_min = int(np.argmin(vals))
        if j_min < n_modes - 1:
            break
        n_modes *= 2
    w_min = vals[j_min]
    if w_min >= 0.0:
        raise NoInstabilityError(
            "potential has no negative Fourier mode; flat state is stable "
            "for every interaction strength")
    return -1.0 / w_min


def dominant_mode(spec):
    """Fastest-growing perturbation mode of the flat state.

    Returns ``(k_max, psi_max, n_clusters)`` where ``n_clusters`` is the
    integer mode index k_max / (2 pi).  Ties favour the smaller
    wavenumber.  Raises :class:`StableSystemError` when every mode
    decays.
    """
    n_modes = _mode_cutoff(spec.ell)
    for _ in range(8):
        psis = np.array([growth_rate(spec, TWO_PI * j) for j in range(1, n_modes + 1)])
        j_best = int(np.argmax(psis))
        if j_best < n_modes - 1:
            break
        n_modes *= 2
    psi_max = psis[j_best]
    if psi_max <= 0.0:
        raise StableSystemError("all perturbation modes of the flat state decay")
    return TWO_PI * (j_best + 1), float(psi_max), j_best + 1


def hk_transcendental_root(tol=1e-12):
    """Root y* of y cos y - sin y + y^2 sin y on (pi/2, pi) by bisection.

    y* / (2 pi) sets the preferred cluster spacing (in units of the
    interaction range) of the Hegselmann-Krause potential.
    """

    def f(y):
        return y * math.cos(y) - math.sin(y) + y * y * math.sin(y)

    lo, hi = 0.5 * math.pi, math.pi
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) * flo > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clustering_time(spec, initial_mode_amplitude, n_particles=None):
    """Time for the dominant mode to grow from its initial size to O(1).

    The effective seed amplitude is the deterministic mode amplitude
    plus the 1/sqrt(N) fluctuation level when a particle count is
    given.  Zero effective amplitude has no finite estimate and raises
    :class:`DegenerateInitError`.
    """
    _, psi_max, _ = dominant_mode(spec)
    amp = float(initial_mode_amplitude)
    if n_particles is not None:
        amp = abs(amp + 1.0 / math.sqrt(n_particles))
    else:
        amp = abs(amp)
    if amp == 0.0:
        raise DegenerateInitError("zero seed amplitude: clustering time undefined")
    return -math.log(amp) / psi_max


@dataclass
class SpectralReport:
    """Summary of the linear-stability analysis for one potential."""

    gamma: float
    ell: float
    gamma_sharp: float
    unstable: bool
    k_max: float
    psi_max: float
    n_clusters: int
    modes: np.ndarray  # rows (k, What(k), psi(k))
    t_clustering: float


def spectral_report(spec, initial_mode_amplitude=0.0, n_particles=None):
    """Assemble the full linear-stability report for ``spec``."""
    g_sharp = gamma_sharp(spec.family, spec.ell)
    n_modes = _mode_cutoff(spec.ell)
    ks = TWO_PI * np.arange(1, n_modes + 1)
    what = np.array([fourier_W(spec, k) for k in ks])
    psi = -ks * ks * (what + 1.0)
    try:
        k_max, psi_max, n_clusters = dominant_mode(spec)
        unstable = True
    except StableSystemError:
        k_max, psi_max, n_clusters, unstable = math.nan, math.nan, 0, False
    t_cluster = math.nan
    if unstable:
        try:
            t_cluster = clustering_time(spec, initial_mode_amplitude, n_particles)
        except DegenerateInitError:
            pass
    return SpectralReport(
        gamma=spec.gamma, ell=spec.ell, gamma_sharp=g_sharp, unstable=unstable,
        k_max=k_max, psi_max=psi_max, n_clusters=n_clusters,
        modes=np.column_stack([ks, what, psi]), t_clustering=t_cluster)
