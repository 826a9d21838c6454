"""Interacting-particle simulation on the torus.

N particles follow the Euler-Maruyama discretisation of

    dX^i = -(1/N) sum_j W'_{gamma, ell}(X^i - X^j) dt + sqrt(2) dB^i,

with positions wrapped to [0, 1).  Drift sums are accelerated by a
cell list: only particles within the interaction radius contribute.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .potentials import wrap
from .reduced import ClusterConfiguration


@dataclass
class ParticleEnsemble:
    """Positions, clock and RNG stream of one interacting ensemble."""

    positions: np.ndarray
    rng: np.random.Generator
    time: float = 0.0

    @property
    def n(self):
        return len(self.positions)


@dataclass
class CellList:
    """Cyclic bucketing of particles into cells of width >= interaction radius."""

    n_cells: int
    order: np.ndarray = field(repr=False)      # particle indices sorted by cell
    starts: np.ndarray = field(repr=False)     # bucket offsets into ``order``

    @classmethod
    def build(cls, positions, interaction_radius):
        n_cells = max(int(math.floor(1.0 / interaction_radius)), 1)
        cells = np.minimum((positions % 1.0 * n_cells).astype(np.intp), n_cells - 1)
        order = np.argsort(cells, kind="stable")
        starts = np.searchsorted(cells[order], np.arange(n_cells + 1))
        return cls(n_cells=n_cells, order=order, starts=starts)

    def bucket(self, c):
        """Particle indices in cell ``c`` (cyclic)."""
        c %= self.n_cells
        return self.order[self.starts[c]:self.starts[c + 1]]


def compute_drift(positions, spec):
    """Mean-field drift -(1/N) sum_j W'(x_i - x_j) for every particle.

    Pairs farther apart than the interaction radius contribute exactly
    zero, so only same-cell and adjacent-cell pairs are visited.
    """
    n = len(positions)
    out = np.zeros(n)
    if spec.gamma == 0.0 or n == 0:
        return out
    cells = CellList.build(positions, spec.radius)
    if cells.n_cells < 3:
        # Cells no longer separate non-interacting pairs; sum all pairs.
        block = 512
        for lo in range(0, n, block):
            sub = positions[lo:lo + block]
            diff = wrap(sub[:, None] - positions[None, :])
            out[lo:lo + block] = np.sum(spec.W_prime(diff), axis=1)
    else:
        for c in range(cells.n_cells):
            idx = cells.bucket(c)
            if idx.size == 0:
                continue
            nbr = np.concatenate([cells.bucket(c - 1), idx, cells.bucket(c + 1)])
            diff = wrap(positions[idx][:, None] - positions[nbr][None, :])
            out[idx] = np.sum(spec.W_prime(diff), axis=1)
    return -out / n


def em_step(ensemble, spec, dt):
    """Advance the ensemble by one Euler-Maruyama step of size ``dt``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if dt * spec.gamma * spec.family.w_lipschitz > 0.5:
        warnings.warn(
            "time step resolves the drift poorly: dt * gamma * Lip(w') > 0.5",
            RuntimeWarning, stacklevel=2)
    drift = compute_drift(ensemble.positions, spec)
    noise = ensemble.rng.standard_normal(ensemble.n)
    new_pos = (ensemble.positions + dt * drift + math.sqrt(2.0 * dt) * noise) % 1.0
    return ParticleEnsemble(positions=new_pos, rng=ensemble.rng,
                            time=ensemble.time + dt)


def interaction_energy(ensemble, spec):
    """Order parameter (1/(2N^2)) sum_{i,j} W(X^i - X^j), diagonal included."""
    pos = ensemble.positions
    n = len(pos)
    if n == 0:
        return 0.0
    total = 0.0
    cells = CellList.build(pos, max(spec.radius, 1e-12))
    if cells.n_cells < 3:
        block = 512
        for lo in range(0, n, block):
            diff = wrap(pos[lo:lo + block][:, None] - pos[None, :])
            total += float(np.sum(spec.W(diff)))
    else:
        for c in range(cells.n_cells):
            idx = cells.bucket(c)
            if idx.size == 0:
                continue
            nbr = np.concatenate([cells.bucket(c - 1), idx, cells.bucket(c + 1)])
            diff = wrap(pos[idx][:, None] - pos[nbr][None, :])
            total += float(np.sum(spec.W(diff)))
    return total / (2.0 * n * n)


def detect_clusters(ensemble, gap_threshold=None, spec=None):
    """Partition particles into clusters separated by large empty gaps.

    The circle is cut at every gap between cyclically consecutive
    particles exceeding ``gap_threshold`` (default twice the
    interaction radius of ``spec``); each remaining arc is one cluster
    with mass = count/N and center = circular mean of its members.
    """
    if gap_threshold is None:
        if spec is None:
            raise ValueError("need gap_threshold or spec for its default")
        gap_threshold = 2.0 * spec.radius
    if not 0.0 < gap_threshold < 1.0:
        raise ValueError("gap_threshold must lie in (0, 1)")
    pos = np.sort(ensemble.positions % 1.0)
    n = len(pos)
    gaps = np.diff(np.append(pos, pos[0] + 1.0))
    cut_after = np.flatnonzero(gaps > gap_threshold)
    if cut_after.size == 0:
        center = _circular_mean(pos, np.ones(n))
        return ClusterConfiguration(centers=np.array([center]),
                                    masses=np.array([1.0]),
                                    n_particles=n, time=ensemble.time)
    centers, masses = [], []
    for i in range(cut_after.size):
        start = (cut_after[i - 1] + 1) % n
        stop = cut_after[i]
        if start <= stop:
            members = pos[start:stop + 1]
        else:
            members = np.concatenate([pos[start:], pos[:stop + 1] + 1.0])
        centers.append((members[0] + np.mean(members - members[0])) % 1.0)
        masses.append(len(members) / n)
    return ClusterConfiguration(centers=np.array(centers),
                                masses=np.array(masses),
                                n_particles=n, time=ensemble.time)


def _circular_mean(values, weights):
    """Weighted circular mean of torus points."""
    ang = 2.0 * math.pi * values
    z = np.sum(weights * np.exp(1j * ang))
    return (math.atan2(z.imag, z.real) / (2.0 * math.pi)) % 1.0


def sample_initial(kind, n, seed, density=None):
    """Create an initial ensemble.

    ``kind`` is one of ``grid`` (X^i = i/n), ``uniform_iid`` or
    ``iid`` (inverse-CDF draws from a piecewise-constant density).
    """
    if n < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(seed)
    if kind == "grid":
        pos = (np.arange(1, n + 1) / n) % 1.0
    elif kind == "uniform_iid":
        pos = rng.random(n)
    elif kind == "iid":
        if density is None:
            raise ValueError("iid sampling needs a density")
        density.validate()
        edges = np.linspace(0.0, 1.0, density.m + 1)
        cdf = np.concatenate([[0.0], np.cumsum(density.values) * density.h])
        cdf[-1] = 1.0
        pos = np.interp(rng.random(n), cdf, edges) % 1.0
    else:
        raise ValueError(f"unknown initial kind {kind!r}")
    return ParticleEnsemble(positions=pos, rng=rng, time=0.0)
