"""Experiment harness: named, config-driven pipelines and comparisons.

An :class:`ExperimentConfig` names one of the registered experiment
kinds (or ``custom``) plus parameter overrides, seeds and an output
directory.  :func:`run_experiment` executes the referenced pipeline,
writes CSV/JSON artifacts and matplotlib figures, and returns a
manifest (inputs, content hash per output, wall time, seed list).
Re-running with the same config and seeds reproduces byte-identical
CSV artifacts.
"""

import hashlib
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

from . import io
from .errors import CheckpointError, LabelMismatchError
from .particle import (detect_clusters, em_step, interaction_energy,
                       sample_initial)
from .pde import (DensityField, PdeRunConfig, gaussian_mixture_init,
                  load_density, run_pde, save_density)
from .potentials import (HegselmannKrause, PiecewiseParabolic, PotentialSpec,
                         tabulated_from_csv, wrap)
from .reduced import ClusterConfiguration, RateParams, run_reduced
from .spectral import spectral_report
from .stationary import (continue_branch, solve_fixed_point,
                         two_cluster_landscape)

KINDS = ("fig1_particles", "fig1_pde", "fig2_coalescence",
         "fig3_mass_exchange", "fig4_metastability", "fig5_comparison",
         "fig6_steady_state", "fig7_bifurcation", "fig8_landscape",
         "figPP_comparison", "custom")


@dataclass
class ExperimentConfig:
    """One experiment: kind, parameter overrides, seeds, output directory."""

    kind: str
    out_dir: str
    seeds: tuple = (0,)
    threads: int = 1
    checkpoint_interval: float = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; "
                             f"expected one of {KINDS}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")


def load_config(path):
    """Read an :class:`ExperimentConfig` from a TOML file.

    The ``[experiment]`` table holds kind/out_dir/seeds/threads/
    checkpoint_interval; every other table (``[potential]``,
    ``[particles]``, ``[pde]``, ``[reduced]``, ``[stationary]``,
    ``[spectral]``) becomes a parameter override for its module.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    exp = data.pop("experiment", {})
    if "pipeline" in exp:           # convenience for ``custom`` experiments
        data["pipeline"] = exp["pipeline"]
    return ExperimentConfig(
        kind=exp.get("kind", "custom"),
        out_dir=exp.get("out_dir", "."),
        seeds=tuple(exp.get("seeds", [0])),
        threads=int(exp.get("threads", 1)),
        checkpoint_interval=exp.get("checkpoint_interval"),
        params=data)


def _deep_merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def make_spec(pot_params):
    """Build a PotentialSpec from a ``[potential]`` parameter table."""
    family_name = pot_params.get("family", "hk")
    if family_name == "hk":
        family = HegselmannKrause()
    elif family_name == "pp":
        family = PiecewiseParabolic(alpha=float(pot_params.get("alpha", 1.0)),
                                    beta=float(pot_params.get("beta", 3.0)),
                                    a=float(pot_params.get("a", 0.5)))
    elif family_name == "tabulated":
        family = tabulated_from_csv(pot_params["csv"],
                                    wpp0=float(pot_params["wpp0"]))
    else:
        raise ValueError(f"unknown potential family {family_name!r}")
    return PotentialSpec(family=family, gamma=float(pot_params["gamma"]),
                         ell=float(pot_params["ell"]))


# --- mass series and cross-model comparison --------------------------------

def pde_mass_series(traj, centers, labels=None):
    """Per-cluster (t, center, mass) series of a PDE trajectory.

    The torus is partitioned once at the cyclic midpoints between the
    given initial ``centers``; each region keeps its label for the
    whole run, so the series stay comparable with the reduced model's.
    """
    centers = np.atleast_1d(np.asarray(centers, dtype=float)) % 1.0
    k = len(centers)
    if labels is None:
        labels = tuple(range(k))
    order = np.argsort(centers)
    m_cells = traj.snapshots[0].m
    h = 1.0 / m_cells
    if k == 1:
        regions = [np.arange(m_cells)]
        starts = [0]
    else:
        sc = centers[order]
        gaps = (np.roll(sc, -1) - sc) % 1.0
        bnd = np.rint(((sc + 0.5 * gaps) % 1.0) * m_cells).astype(int) % m_cells
        regions, starts = [], []
        for i in range(k):
            start = bnd[i - 1]
            length = (bnd[i] - start) % m_cells or m_cells
            regions.append((start + np.arange(length)) % m_cells)
            starts.append(start)
    times = np.asarray(traj.times)
    series = {}
    for i in range(k):
        lab = labels[order[i]] if k > 1 else labels[0]
        idx, start = regions[i], starts[i]
        xs = (start + 0.5 + np.arange(len(idx))) * h
        mass = np.empty(len(times))
        cent = np.empty(len(times))
        for it, rho in enumerate(traj.snapshots):
            w = rho.values[idx] * h
            mass[it] = np.sum(w)
            cent[it] = (np.sum(w * xs) / mass[it]) % 1.0 if mass[it] > 0 \
                else (start * h) % 1.0
        series[lab] = {"t": times, "center": cent, "mass": mass}
    return series


def ode_mass_series(traj):
    """Per-cluster (t, center, mass) series of a reduced trajectory."""
    series = {}
    for seg in traj.segments:
        for i, lab in enumerate(seg.labels):
            d = series.setdefault(lab, {"t": [], "center": [], "mass": []})
            d["t"].append(seg.times)
            d["center"].append(seg.centers[i])
            d["mass"].append(seg.masses[i])
    return {lab: {key: np.concatenate(arrs) for key, arrs in d.items()}
            for lab, d in series.items()}


@dataclass
class MassComparison:
    """Cross-model agreement report for paired per-cluster mass series."""

    sup_gap: dict               # label -> sup |m_a - m_b| before dissolution
    order_match: bool
    collapse_ratio: float       # t_collapse(a) / t_collapse(b); nan if only
                                # one side collapses, 1 if neither does
    dissolution_times: tuple    # (label -> t or None) per side


def _dissolution_times(series, threshold, set_end):
    out = {}
    for lab, d in series.items():
        t, m = d["t"], d["mass"]
        below = np.flatnonzero(m < threshold)
        if below.size:
            out[lab] = float(t[below[0]])
        elif t[-1] < set_end - 1e-12 * max(set_end, 1.0):
            out[lab] = float(t[-1])     # series ends early: dissolved there
        else:
            out[lab] = None
    return out


def compare_masses(pde_series, ode_series, dissolve_threshold=0.02):
    """Time-aligned comparison of two per-cluster mass series sets.

    Returns the per-cluster sup-norm mass gap before the first
    dissolution on either side, whether the clusters dissolve in the
    same order, and the ratio of collapse times (time at which a
    single cluster remains).
    """
    if set(pde_series) != set(ode_series):
        raise LabelMismatchError(
            f"cluster labels differ: {sorted(pde_series)} vs "
            f"{sorted(ode_series)}")
    k = len(pde_series)
    end_a = max(float(d["t"][-1]) for d in pde_series.values())
    end_b = max(float(d["t"][-1]) for d in ode_series.values())
    diss_a = _dissolution_times(pde_series, dissolve_threshold, end_a)
    diss_b = _dissolution_times(ode_series, dissolve_threshold, end_b)
    firsts = [t for t in list(diss_a.values()) + list(diss_b.values())
              if t is not None]
    t_cut = min(firsts) if firsts else min(end_a, end_b)
    sup_gap = {}
    for lab in pde_series:
        ta, ma = pde_series[lab]["t"], pde_series[lab]["mass"]
        tb, mb = ode_series[lab]["t"], ode_series[lab]["mass"]
        keep = ta <= min(t_cut, tb[-1]) + 1e-15
        sup_gap[lab] = float(np.max(np.abs(ma[keep] - np.interp(
            ta[keep], tb, mb)))) if np.any(keep) else math.nan
    seq_a = [lab for lab, t in sorted(diss_a.items(),
                                      key=lambda kv: (kv[1] is None, kv[1]))
             if t is not None]
    seq_b = [lab for lab, t in sorted(diss_b.items(),
                                      key=lambda kv: (kv[1] is None, kv[1]))
             if t is not None]
    order_match = seq_a == seq_b
    coll_a = max((t for t in diss_a.values() if t is not None), default=None) \
        if len(seq_a) == k - 1 else None
    coll_b = max((t for t in diss_b.values() if t is not None), default=None) \
        if len(seq_b) == k - 1 else None
    if coll_a is not None and coll_b is not None:
        ratio = coll_a / coll_b
    elif coll_a is None and coll_b is None:
        ratio = 1.0
    else:
        ratio = math.nan
    return MassComparison(sup_gap=sup_gap, order_match=order_match,
                          collapse_ratio=ratio,
                          dissolution_times=(diss_a, diss_b))


def gaussian_fit(rho, tail_frac=1e-3):
    """Least-squares Gaussian fit (on log density, tails excluded).

    Cells below ``tail_frac`` of the peak are excluded; returns a dict
    with the fitted center, variance and amplitude.
    """
    vals = rho.values
    x = rho.cell_centers()
    i0 = int(np.argmax(vals))
    xs = wrap(x - x[i0])
    mask = vals >= tail_frac * vals[i0]
    p2, p1, p0 = np.polyfit(xs[mask], np.log(vals[mask]), 2)
    if p2 >= 0.0:
        raise ValueError("profile is not log-concave around its peak")
    variance = -0.5 / p2
    center = (x[i0] - p1 / (2.0 * p2)) % 1.0
    amplitude = math.exp(p0 - p1 * p1 / (4.0 * p2))
    return {"center": center, "variance": variance, "amplitude": amplitude}


# --- pipeline runners -------------------------------------------------------

def _run_particles(spec, p, out_dir, seed):
    ens = sample_initial(p.get("init", "grid"), int(p["n"]), seed)
    dt = float(p["dt"])
    n_steps = int(round(float(p["t_end"]) / dt))
    stride = int(p.get("record_stride", max(n_steps // 1000, 1)))
    gap = p.get("gap_threshold")
    times, positions, energies, clusters = [], [], [], []

    def record(e):
        times.append(e.time)
        positions.append(e.positions.copy())
        energies.append(interaction_energy(e, spec))
        clusters.append(detect_clusters(e, gap_threshold=gap, spec=spec))

    record(ens)
    for step in range(1, n_steps + 1):
        ens = em_step(ens, spec, dt)
        if step % stride == 0 or step == n_steps:
            record(ens)
    return [
        io.write_particle_trajectory(os.path.join(out_dir, "trajectory.csv"),
                                     times, positions),
        io.write_clusters(os.path.join(out_dir, "clusters.csv"), clusters),
        io.write_energy(os.path.join(out_dir, "energy.csv"), times, energies),
    ]


def _build_pde_init(spec, p):
    m_cells = int(p["m_cells"])
    init = p.get("init", "uniform")
    if init == "mixture":
        config = ClusterConfiguration(centers=np.asarray(p["centers"]),
                                      masses=np.asarray(p["masses"]))
        return gaussian_mixture_init(config, spec, m_cells)
    if init == "perturbed_uniform":
        # indicator of [margin, 1 - margin], renormalised
        margin = float(p.get("margin", 0.01))
        x = (np.arange(m_cells) + 0.5) / m_cells
        values = np.where((x >= margin) & (x <= 1.0 - margin), 1.0, 0.0)
        rho = DensityField(values=values)
        rho.values /= rho.mass()
        return rho
    if init == "uniform_mode":
        # uniform state plus a small cosine perturbation of one mode
        x = (np.arange(m_cells) + 0.5) / m_cells
        amp = float(p.get("amplitude", 1e-4))
        k = float(p.get("mode_k", 2.0 * math.pi))
        return DensityField(values=1.0 + amp * np.cos(k * x))
    if init == "uniform":
        return DensityField.uniform(m_cells)
    raise ValueError(f"unknown PDE initial state {init!r}")


def _run_pde(spec, p, out_dir, checkpoint_interval=None):
    ckpt = os.path.join(out_dir, "checkpoint.mvpd")
    t_end = float(p["t_end"])
    rho0, t0 = None, 0.0
    if os.path.exists(ckpt) and p.get("resume", True):
        try:
            rho0, _, t0 = load_density(ckpt)
        except CheckpointError as exc:
            warnings.warn(f"ignoring unreadable checkpoint: {exc}",
                          RuntimeWarning, stacklevel=2)
    if rho0 is None:
        rho0 = _build_pde_init(spec, p)
    config = PdeRunConfig(
        spec=spec, m_cells=rho0.m, t_end=t_end, t_start=t0,
        dt=p.get("dt"), output_stride=int(p.get("output_stride", 2000)),
        steady_tol=float(p.get("steady_tol", 1e-10)),
        monitor_every_step=bool(p.get("monitor_every_step", False)),
        checkpoint_path=ckpt, checkpoint_interval=checkpoint_interval)
    traj = run_pde(rho0, config)
    save_density(ckpt, traj.final, dt=p.get("dt") or 0.0, t=traj.final_time)
    files = [
        io.write_pde_snapshots(os.path.join(out_dir, "snapshots.csv"), traj),
        io.write_free_energy(os.path.join(out_dir, "free_energy.csv"),
                             traj.energies),
        ckpt,
    ]
    if p.get("init") == "mixture":
        series = pde_mass_series(traj, p["centers"])
        files.append(io.write_mass_series(
            os.path.join(out_dir, "masses.csv"), series))
    return files, traj


def _reduced_params(spec, p):
    return RateParams(spec=spec,
                      c_merge=float(p.get("c_merge", 1.0)),
                      merge_distance=p.get("merge_distance"),
                      dissolve_mass=p.get("dissolve_mass"),
                      gamma_c=p.get("gamma_c"))


def _run_reduced(spec, p, out_dir, seed):
    config0 = ClusterConfiguration(centers=np.asarray(p["centers"]),
                                   masses=np.asarray(p["masses"]),
                                   n_particles=p.get("n_particles"))
    params = _reduced_params(spec, p)
    traj = run_reduced(config0, params, t_end=float(p["t_end"]),
                       mode=p.get("mode", "ode"),
                       rng=np.random.default_rng(seed),
                       dt=p.get("dt"),
                       record_stride=int(p.get("record_stride", 1)))
    return [
        io.write_reduced_trajectory(os.path.join(out_dir, "reduced.csv"),
                                    traj),
        io.write_event_log(os.path.join(out_dir, "events.csv"), traj.events),
    ], traj


def _run_comparison(spec, p, out_dir, checkpoint_interval=None):
    pde_files, pde_traj = _run_pde(spec, p["pde"], out_dir,
                                   checkpoint_interval)
    pde_series = pde_mass_series(pde_traj, p["pde"]["centers"])
    config0 = ClusterConfiguration(centers=np.asarray(p["pde"]["centers"]),
                                   masses=np.asarray(p["pde"]["masses"]))
    params = _reduced_params(spec, p.get("reduced", {}))
    ode_traj = run_reduced(config0, params, t_end=float(p["pde"]["t_end"]),
                           mode="ode")
    ode_series = ode_mass_series(ode_traj)
    report = compare_masses(pde_series, ode_series,
                            dissolve_threshold=params.dissolve_mass)
    files = pde_files + [
        io.write_mass_series(os.path.join(out_dir, "pde_masses.csv"),
                             pde_series),
        io.write_mass_series(os.path.join(out_dir, "ode_masses.csv"),
                             ode_series),
        io.write_event_log(os.path.join(out_dir, "events.csv"),
                           ode_traj.events),
    ]
    path = os.path.join(out_dir, "comparison.json")
    with open(path, "w") as fh:
        json.dump({"sup_gap": {str(k): v for k, v in report.sup_gap.items()},
                   "order_match": report.order_match,
                   "collapse_ratio": report.collapse_ratio,
                   "dissolution_times": [
                       {str(k): v for k, v in d.items()}
                       for d in report.dissolution_times]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(path)
    return files


def _run_stationary(spec, p, out_dir):
    m_cells = int(p.get("m_cells", 512))
    config = ClusterConfiguration(
        centers=np.asarray(p.get("centers", [0.5])),
        masses=np.asarray(p.get("masses", [1.0])))
    rho0 = gaussian_mixture_init(config, spec, m_cells)
    state = solve_fixed_point(rho0, spec, method=p.get("method", "newton"),
                              tol=float(p.get("tol", 1e-11)))
    files = [io.write_density(os.path.join(out_dir, "state.csv"), state.rho)]
    report = {"residual": state.residual, "free_energy": state.free_energy,
              "n_iter": state.n_iter, "sigma2_theory": spec.ell / spec.gamma}
    try:
        report["fit"] = gaussian_fit(state.rho)
    except ValueError:
        pass
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(path)
    return files


def _run_branch(spec, p, out_dir):
    m_cells = int(p.get("m_cells", 256))
    grid = p.get("gamma_grid")
    if grid is None:
        hi = float(p.get("gamma_hi", 160.0))
        lo = float(p.get("gamma_lo", 95.0))
        n = int(p.get("gamma_steps", 66))
        grid = np.linspace(hi, lo, n)
    start = PotentialSpec(family=spec.family, gamma=float(grid[0]),
                          ell=spec.ell)
    config = ClusterConfiguration(centers=np.array([0.5]),
                                  masses=np.array([1.0]))
    rho0 = gaussian_mixture_init(config, start, m_cells)
    branch = continue_branch(start, grid, rho0,
                             tol=float(p.get("tol", 1e-11)))
    files = [io.write_branch(os.path.join(out_dir, "branch.csv"), branch)]
    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump({"gamma_c": branch.gamma_c,
                   "n_points": len(branch.points)}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    files.append(path)
    return files


def _run_landscape(spec, p, out_dir):
    m1_grid = np.asarray(p.get("m1_grid",
                               np.linspace(0.05, 0.95, 37).tolist()))
    d_grid = np.asarray(p.get("d_grid",
                              np.linspace(0.08, 0.92, 43).tolist()))
    values = two_cluster_landscape(spec, m1_grid, d_grid,
                                   m_cells=int(p.get("m_cells", 512)))
    return [io.write_landscape(os.path.join(out_dir, "landscape.csv"),
                               m1_grid, d_grid, values)]


def _run_spectral(spec, p, out_dir):
    report = spectral_report(
        spec, initial_mode_amplitude=float(p.get("amplitude", 0.0)),
        n_particles=p.get("n_particles"))
    files = [io.write_modes(os.path.join(out_dir, "modes.csv"), report.modes)]
    path = os.path.join(out_dir, "report.json")
    payload = {key: getattr(report, key)
               for key in ("gamma", "ell", "gamma_sharp", "unstable",
                           "k_max", "psi_max", "n_clusters", "t_clustering")}
    payload = {k: (None if isinstance(v, float) and math.isnan(v) else v)
               for k, v in payload.items()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(path)
    return files


# --- experiment registry ----------------------------------------------------

_HK3 = {"family": "hk", "gamma": 1000.0, "ell": 0.05}
_FIG3_PDE = {"m_cells": 512, "t_end": 30.0, "init": "mixture",
             "centers": [0.1, 0.3, 0.7], "masses": [0.2, 0.3, 0.5],
             "output_stride": 5000}

DEFAULTS = {
    "fig1_particles": {
        "potential": {"family": "hk", "gamma": 1.0e4, "ell": 0.1},
        "particles": {"n": 100, "dt": 1e-5, "t_end": 0.05, "init": "grid",
                      "record_stride": 50},
    },
    "fig1_pde": {
        "potential": {"family": "hk", "gamma": 1.0e4, "ell": 0.1},
        "pde": {"m_cells": 512, "t_end": 0.002, "init": "perturbed_uniform",
                "margin": 0.01, "output_stride": 1000},
    },
    "fig2_coalescence": {
        "potential": {"family": "hk", "gamma": 2000.0, "ell": 0.08},
        "particles": {"n": 50, "dt": 5e-5, "t_end": 20.0, "init": "grid",
                      "record_stride": 400},
    },
    "fig3_mass_exchange": {"potential": _HK3, "pde": dict(_FIG3_PDE)},
    "fig4_metastability": {
        "potential": _HK3,
        "pde": {"m_cells": 512, "t_end": 50.0, "init": "mixture",
                "centers": [0.25, 0.75], "masses": [0.45, 0.55],
                "output_stride": 5000},
    },
    "fig5_comparison": {"potential": _HK3, "pde": dict(_FIG3_PDE),
                        "reduced": {}},
    "fig6_steady_state": {
        "potential": {"family": "hk", "gamma": 100.0, "ell": 0.5},
        "stationary": {"m_cells": 1024},
    },
    "fig7_bifurcation": {
        "potential": {"family": "hk", "gamma": 160.0, "ell": 0.1},
        "stationary": {"m_cells": 256, "gamma_hi": 160.0, "gamma_lo": 95.0,
                       "gamma_steps": 66},
    },
    "fig8_landscape": {
        "potential": {"family": "hk", "gamma": 150.0, "ell": 0.1},
        "stationary": {"m_cells": 512},
    },
    "figPP_comparison": {
        "potential": {"family": "pp", "alpha": 1.0, "beta": 3.0, "a": 0.5,
                      "gamma": 500.0, "ell": 0.05},
        "pde": {"m_cells": 512, "t_end": 30.0, "init": "mixture",
                "centers": [1.0 / 6.0, 0.5, 5.0 / 6.0],
                "masses": [0.1, 0.3, 0.6], "output_stride": 5000},
        "reduced": {},
    },
    "custom": {"potential": {"family": "hk", "gamma": 100.0, "ell": 0.1},
               "pipeline": "particles",
               "particles": {"n": 50, "dt": 1e-4, "t_end": 0.1,
                             "init": "grid"},
               "pde": {"m_cells": 128, "t_end": 0.01},
               "reduced": {"centers": [0.25, 0.75], "masses": [0.5, 0.5],
                           "t_end": 1.0},
               "stationary": {}, "spectral": {}},
}


def _per_seed(config, worker):
    """Run a seeded worker once per seed (subdirectories when several)."""
    if len(config.seeds) == 1:
        return worker(config.seeds[0], config.out_dir)
    dirs = {}
    for seed in config.seeds:
        sub = os.path.join(config.out_dir, f"seed-{seed}")
        os.makedirs(sub, exist_ok=True)
        dirs[seed] = sub
    files = []
    with ThreadPoolExecutor(max_workers=max(config.threads, 1)) as pool:
        futures = {seed: pool.submit(worker, seed, dirs[seed])
                   for seed in config.seeds}
        for seed in config.seeds:       # serialize the merge, seed order
            files.extend(futures[seed].result())
    return files


def run_experiment(config):
    """Execute one experiment; returns (and writes) its manifest."""
    params = _deep_merge(DEFAULTS[config.kind], config.params)
    os.makedirs(config.out_dir, exist_ok=True)
    spec = make_spec(params["potential"])
    t0 = time.monotonic()
    kind = config.kind
    if kind in ("fig1_particles", "fig2_coalescence"):
        files = _per_seed(config, lambda seed, d:
                          _run_particles(spec, params["particles"], d, seed))
    elif kind in ("fig1_pde", "fig3_mass_exchange", "fig4_metastability"):
        files = _run_pde(spec, params["pde"], config.out_dir,
                         config.checkpoint_interval)[0]
    elif kind in ("fig5_comparison", "figPP_comparison"):
        files = _run_comparison(spec, params, config.out_dir,
                                config.checkpoint_interval)
    elif kind == "fig6_steady_state":
        files = _run_stationary(spec, params["stationary"], config.out_dir)
    elif kind == "fig7_bifurcation":
        files = _run_branch(spec, params["stationary"], config.out_dir)
    elif kind == "fig8_landscape":
        files = _run_landscape(spec, params["stationary"], config.out_dir)
    else:
        pipeline = params.get("pipeline", "particles")
        if pipeline == "particles":
            files = _per_seed(config, lambda seed, d: _run_particles(
                spec, params["particles"], d, seed))
        elif pipeline == "pde":
            files = _run_pde(spec, params["pde"], config.out_dir,
                             config.checkpoint_interval)[0]
        elif pipeline == "reduced":
            files = _per_seed(config, lambda seed, d: _run_reduced(
                spec, params["reduced"], d, seed)[0])
        elif pipeline == "stationary":
            files = _run_stationary(spec, params["stationary"],
                                    config.out_dir)
        elif pipeline == "spectral":
            files = _run_spectral(spec, params["spectral"], config.out_dir)
        else:
            raise ValueError(f"unknown custom pipeline {pipeline!r}")
    from . import plotting
    files = list(files) + plotting.render_all(config.out_dir)
    wall = time.monotonic() - t0
    manifest = {
        "kind": config.kind,
        "params": params,
        "seeds": list(config.seeds),
        "threads": config.threads,
        "checkpoint_interval": config.checkpoint_interval,
        "wall_time_s": wall,
        "outputs": {os.path.relpath(f, config.out_dir): _sha256(f)
                    for f in sorted(set(files))},
    }
    with open(os.path.join(config.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
