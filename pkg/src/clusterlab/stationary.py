"""Stationary states of the McKean-Vlasov dynamics on the torus.

Stationary densities are fixed points of the Kirkwood-Monroe map
rho = exp(-W * rho) / Z.  This module solves the fixed-point problem
(damped Picard and Newton with a dense analytic Jacobian), continues
the single-cluster branch in the interaction strength gamma, locates
the discontinuous transition point gamma_c via the free-energy gap to
the uniform state, constructs K-cluster states by the compression /
tiling identity, and evaluates the two-cluster free-energy landscape.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (EmptyBranchError, NoConvergenceError, ResidualError,
                     SubcriticalError)
from .pde import (DensityField, convolve_kernel, free_energy,
                  gaussian_mixture_init, _kernels)
from .potentials import PotentialSpec
from .reduced import ClusterConfiguration


def km_map(rho, spec, method="fft"):
    """One application of the Kirkwood-Monroe map exp(-W * rho)/Z."""
    v, _ = convolve_kernel(rho, spec, method)
    e = np.exp(-(v - np.min(v)))
    z = float(np.sum(e)) * rho.h
    return DensityField(values=e / z)


def km_residual(rho, spec, method="fft"):
    """Sup-norm fixed-point residual of the map at rho."""
    return float(np.max(np.abs(rho.values - km_map(rho, spec, method).values)))


@dataclass
class StationaryState:
    """A converged fixed point of the Kirkwood-Monroe map."""

    rho: DensityField
    residual: float
    free_energy: float
    spec: PotentialSpec
    n_iter: int = 0


def _conv_matrix(spec, m_cells):
    """Dense circulant matrix of the discrete convolution rho -> W * rho."""
    w_cells, _ = _kernels(spec, m_cells)
    idx = (np.arange(m_cells)[:, None] - np.arange(m_cells)[None, :]) % m_cells
    return w_cells[idx] / m_cells


def solve_fixed_point(rho0, spec, method="newton", damping=0.5, tol=1e-11,
                      max_iter=None):
    """Solve rho = KM(rho) from the initial guess ``rho0``.

    ``picard`` damps the plain iteration with factor ``damping``;
    ``newton`` solves the dense linearised system (mass preserved by
    projecting updates onto zero mean) and falls back to a damped
    Picard sweep whenever a Newton step fails to reduce the residual.
    """
    if method not in ("newton", "picard"):
        raise ValueError(f"unknown method {method!r}")
    rho0.validate()
    rho = DensityField(values=rho0.values.copy())
    if max_iter is None:
        max_iter = 100_000 if method == "picard" else 200
    km = km_map(rho, spec)
    residual = float(np.max(np.abs(rho.values - km.values)))
    best = residual
    if residual < tol:
        return StationaryState(rho=rho, residual=residual,
                               free_energy=free_energy(rho, spec), spec=spec,
                               n_iter=0)
    conv = _conv_matrix(spec, rho.m) if method == "newton" else None
    for it in range(1, max_iter + 1):
        if method == "picard":
            rho = DensityField(
                values=(1.0 - damping) * rho.values + damping * km.values)
        elif method == "newton":
            g = rho.values - km.values
            # d KM = KM . (-C delta) + KM * (h sum KM (C delta))
            kmc = km.values[:, None] * conv
            jac = np.eye(rho.m) - (-kmc + np.outer(
                km.values, rho.h * km.values @ conv))
            try:
                step = np.linalg.solve(jac, -g)
            except np.linalg.LinAlgError:
                step = None
            new_vals = None
            if step is not None:
                step -= np.mean(step)
                cand = rho.values + step
                if np.all(cand > 0.0):
                    new_vals = cand
            if new_vals is not None:
                cand_rho = DensityField(values=new_vals)
                cand_km = km_map(cand_rho, spec)
                cand_res = float(np.max(np.abs(cand_rho.values - cand_km.values)))
                if cand_res < residual:
                    rho, km, residual = cand_rho, cand_km, cand_res
                    best = min(best, residual)
                    if residual < tol:
                        return StationaryState(
                            rho=rho, residual=residual,
                            free_energy=free_energy(rho, spec), spec=spec,
                            n_iter=it)
                    continue
            # fallback: damped Picard sweep
            rho = DensityField(
                values=(1.0 - damping) * rho.values + damping * km.values)
        else:
            raise ValueError(f"unknown method {method!r}")
        km = km_map(rho, spec)
        residual = float(np.max(np.abs(rho.values - km.values)))
        best = min(best, residual)
        if residual < tol:
            return StationaryState(rho=rho, residual=residual,
                                   free_energy=free_energy(rho, spec),
                                   spec=spec, n_iter=it)
    raise NoConvergenceError(
        f"fixed-point iteration did not reach {tol:g} in {max_iter} steps",
        best_residual=best)


@dataclass
class BranchPoint:
    gamma: float
    state: StationaryState
    gap: float                # F(rho_gamma) - F(uniform at gamma)
    l1_dist: float            # ||rho_gamma - 1||_L1


@dataclass
class BifurcationBranch:
    points: list
    gamma_c: float = None


def _branch_point(state):
    uniform = DensityField.uniform(state.rho.m)
    gap = state.free_energy - free_energy(uniform, state.spec)
    l1 = state.rho.l1_distance(uniform)
    return BranchPoint(gamma=state.spec.gamma, state=state, gap=gap, l1_dist=l1)


def continue_branch(spec_at_start, gamma_grid, rho0, tol=1e-11,
                    collapse_l1=1e-6):
    """Warm-started continuation of a clustered branch along ``gamma_grid``.

    Records the free-energy gap to the uniform state and the L1
    distance from uniform at every gamma; stops when the solver fails
    or the state collapses to uniform.  The transition point gamma_c is
    the sign change of the gap, refined by bisection to relative 1e-4.
    """
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    if len(gamma_grid) >= 2 and not (np.all(np.diff(gamma_grid) > 0)
                                     or np.all(np.diff(gamma_grid) < 0)):
        raise ValueError("gamma_grid must be monotone")
    family, ell = spec_at_start.family, spec_at_start.ell
    points = []
    guess = rho0
    for gamma in gamma_grid:
        spec = PotentialSpec(family=family, gamma=float(gamma), ell=ell)
        try:
            state = solve_fixed_point(guess, spec, method="newton", tol=tol)
        except NoConvergenceError:
            break
        point = _branch_point(state)
        if point.l1_dist < collapse_l1:
            break
        points.append(point)
        guess = state.rho
    if not points:
        raise EmptyBranchError("no branch point converged at the first gamma")
    gamma_c = _locate_gamma_c(points, family, ell, tol)
    return BifurcationBranch(points=points, gamma_c=gamma_c)


def _locate_gamma_c(points, family, ell, tol):
    for a, b in zip(points[:-1], points[1:]):
        if a.gap == 0.0:
            return a.gamma
        if a.gap * b.gap < 0.0:
            return _bisect_gap(a, b, family, ell, tol)
    return None


def _bisect_gap(a, b, family, ell, tol):
    """Bisection on the free-energy gap between two bracketing branch points."""
    ga, gb = a.gamma, b.gamma
    sign_a = math.copysign(1.0, a.gap)
    guess = a.state.rho
    while abs(gb - ga) > 1e-4 * abs(0.5 * (ga + gb)):
        mid = 0.5 * (ga + gb)
        spec = PotentialSpec(family=family, gamma=mid, ell=ell)
        state = solve_fixed_point(guess, spec, method="newton", tol=tol)
        point = _branch_point(state)
        guess = state.rho
        if math.copysign(1.0, point.gap) == sign_a:
            ga = mid
        else:
            gb = mid
    return 0.5 * (ga + gb)


def multi_cluster_scale(state, k_fold):
    """K-cluster stationary state by the compression/tiling identity.

    A fixed point q at (gamma, ell) compressed as q(Kx) is a fixed
    point at (K^2 gamma, ell / K).  On the K-fold refined grid the
    discrete identity is exact (tiling the cell averages), so the
    constructed state inherits the residual of the input.
    """
    if k_fold == 1:
        return state
    spec = state.spec
    scaled_spec = PotentialSpec(family=spec.family,
                                gamma=spec.gamma * k_fold * k_fold,
                                ell=spec.ell / k_fold)
    values = np.tile(state.rho.values, k_fold)
    rho = DensityField(values=values)
    residual = km_residual(rho, scaled_spec)
    if residual > 1e-8:
        raise ResidualError(
            f"scaled state residual {residual:.2e} exceeds 1e-8 "
            "(under-resolved input state)")
    return StationaryState(rho=rho, residual=residual,
                           free_energy=free_energy(rho, scaled_spec),
                           spec=scaled_spec)


def symmetric_decreasing_check(rho, rel_tol=1e-6):
    """Is rho a translate of its symmetric decreasing rearrangement?

    The cell values are sorted in decreasing order and laid out
    alternately around a center cell; the deviation is the sup-norm
    mismatch minimised over all integer translations (both layout
    parities).  Single-cluster (or uniform) profiles pass, multi-bump
    profiles fail with a large deviation.
    """
    vals = rho.values
    m_cells = rho.m
    ranked = np.sort(vals)[::-1]
    dev = math.inf
    for parity in (0, 1):
        candidate = np.empty(m_cells)
        # offsets 0, +1, -1, +2, -2, ... (parity swaps the sign order)
        ks = np.arange(m_cells)
        half = (ks + 1) // 2
        sign = np.where(ks % 2 == (1 - parity), 1, -1)
        candidate[(sign * half) % m_cells] = ranked
        # exact sup-norm deviation minimised over all cyclic shifts
        idx = (np.arange(m_cells)[None, :] - np.arange(m_cells)[:, None]) % m_cells
        all_rolled = candidate[idx]
        dev = min(dev, float(np.min(np.max(np.abs(vals[None, :] - all_rolled),
                                           axis=1))))
    is_single = dev < rel_tol * float(np.max(vals))
    return is_single, dev


def two_cluster_landscape(spec, m1_grid, d_grid, m_cells=512):
    """Free-energy surface of two-cluster Gaussian mixtures.

    Entry (i, j) is the free energy of the mixture with masses
    (m1_grid[i], 1 - m1_grid[i]) and centers separated by d_grid[j].
    """
    m1_grid = np.asarray(m1_grid, dtype=float)
    d_grid = np.asarray(d_grid, dtype=float)
    out = np.empty((len(m1_grid), len(d_grid)))
    for i, m1 in enumerate(m1_grid):
        for j, d in enumerate(d_grid):
            config = ClusterConfiguration(centers=np.array([0.0, d]),
                                          masses=np.array([m1, 1.0 - m1]))
            rho = gaussian_mixture_init(config, spec, m_cells)
            out[i, j] = free_energy(rho, spec)
    return out


def critical_mass(spec, gamma_c):
    """Critical minimal cluster mass m_crit = gamma_c / gamma."""
    if spec.gamma <= gamma_c:
        raise SubcriticalError("gamma must exceed gamma_c for clustered states")
    return gamma_c / spec.gamma
