"""Figure rendering for experiment artifacts.

:func:`render_all` scans an output directory (including per-seed
subdirectories), renders a matplotlib figure next to every recognised
CSV artifact, and returns the list of image paths.  The figures are
derived purely from the delimited artifacts, so they can be re-rendered
without re-running the experiment.
"""

import glob
import json
import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io


def _load_columns(path):
    header, rows = io.read_csv(path)
    if not rows:
        return header, {}
    cols = list(zip(*rows))
    return header, {name: np.asarray(col, dtype=object)
                    for name, col in zip(header, cols)}


def _floats(col):
    return col.astype(float)


def _save(fig, path):
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_trajectory(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(_floats(cols["t"]), _floats(cols["x"]), ",", color="tab:blue")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("particle trajectories")
    return _save(fig, out_path)


def plot_energy(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    fig, ax = plt.subplots(figsize=(7, 2.6))
    ax.plot(_floats(cols["t"]), _floats(cols["energy"]), color="tab:red")
    ax.set_xlabel("t")
    ax.set_ylabel("interaction energy")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_clusters(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    t = _floats(cols["t"])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.scatter(t, _floats(cols["center"]),
               s=80.0 * _floats(cols["mass"]), c="tab:green", alpha=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("cluster center")
    ax.set_ylim(0.0, 1.0)
    return _save(fig, out_path)


def plot_snapshots(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    t = _floats(cols["t"])
    rho = _floats(cols["rho"])
    times = np.unique(t)
    m_cells = int(np.sum(t == times[0]))
    grid = rho.reshape(len(times), m_cells)
    x = (np.arange(m_cells) + 0.5) / m_cells
    fig, (ax0, ax1) = plt.subplots(
        1, 2, figsize=(10, 4), gridspec_kw={"width_ratios": [2, 1]})
    mesh = ax0.pcolormesh(times, x, grid.T, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax0, label="rho")
    ax0.set_xlabel("t")
    ax0.set_ylabel("x")
    ax1.plot(x, grid[-1], color="tab:blue")
    ax1.set_xlabel("x")
    ax1.set_ylabel("rho(final)")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_free_energy(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    fig, ax = plt.subplots(figsize=(7, 2.6))
    ax.plot(_floats(cols["t"]), _floats(cols["F"]), label="F")
    ax.plot(_floats(cols["t"]), _floats(cols["entropy_part"]),
            label="entropy", ls="--")
    ax.plot(_floats(cols["t"]), _floats(cols["interaction_part"]),
            label="interaction", ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("free energy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def _mass_lines(ax, cols, ls="-", prefix=""):
    labels = cols["cluster_id"]
    t = _floats(cols["t"])
    mass = _floats(cols["mass"])
    for lab in sorted(set(labels), key=str):
        keep = labels == lab
        ax.plot(t[keep], mass[keep], ls=ls, label=f"{prefix}{lab}")


def plot_masses(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    _mass_lines(ax, cols)
    ax.set_xlabel("t")
    ax.set_ylabel("cluster mass")
    ax.legend(fontsize=8)
    return _save(fig, out_path)


def plot_comparison(pde_csv, ode_csv, out_path):
    _, pde_cols = _load_columns(pde_csv)
    _, ode_cols = _load_columns(ode_csv)
    fig, ax = plt.subplots(figsize=(7, 4))
    _mass_lines(ax, pde_cols, ls="-", prefix="pde ")
    _mass_lines(ax, ode_cols, ls="--", prefix="ode ")
    ax.set_xlabel("t")
    ax.set_ylabel("cluster mass")
    ax.legend(fontsize=8)
    return _save(fig, out_path)


def plot_state(csv_path, out_path, report_path=None):
    _, cols = _load_columns(csv_path)
    x = _floats(cols["x"])
    rho = _floats(cols["rho"])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(x, np.maximum(rho, 1e-300), color="tab:blue",
                label="steady state")
    if report_path and os.path.exists(report_path):
        with open(report_path) as fh:
            report = json.load(fh)
        fit = report.get("fit")
        if fit:
            arg = (x - fit["center"] + 0.5) % 1.0 - 0.5
            gauss = fit["amplitude"] * np.exp(
                -arg * arg / (2.0 * fit["variance"]))
            ax.semilogy(x, gauss, color="tab:red", ls="--",
                        label=f"Gaussian fit, var={fit['variance']:.4g}")
    ax.set_xlabel("x")
    ax.set_ylabel("rho")
    ax.legend(fontsize=8)
    return _save(fig, out_path)


def plot_branch(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    gamma = _floats(cols["gamma"])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(gamma, _floats(cols["gap"]), color="tab:blue",
            label="free-energy gap")
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("gamma")
    ax.set_ylabel("F(rho) - F(uniform)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(gamma, _floats(cols["l1_dist"]), color="tab:red",
             label="L1 distance")
    ax2.set_ylabel("||rho - 1||_L1", color="tab:red")
    return _save(fig, out_path)


def plot_landscape(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    m1 = _floats(cols["m1"])
    d = _floats(cols["d"])
    f_vals = _floats(cols["F"])
    m1_grid = np.unique(m1)
    d_grid = np.unique(d)
    grid = f_vals.reshape(len(m1_grid), len(d_grid))
    fig, ax = plt.subplots(figsize=(7, 4))
    mesh = ax.pcolormesh(d_grid, m1_grid, grid, shading="nearest",
                         cmap="magma")
    fig.colorbar(mesh, ax=ax, label="free energy")
    ax.set_xlabel("d")
    ax.set_ylabel("m1")
    return _save(fig, out_path)


def plot_reduced(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    _mass_lines(ax0, cols)
    ax0.set_ylabel("mass")
    ax0.legend(fontsize=8)
    labels = cols["cluster_id"]
    t = _floats(cols["t"])
    center = _floats(cols["center"])
    for lab in sorted(set(labels), key=str):
        keep = labels == lab
        ax1.plot(t[keep], center[keep], label=str(lab))
    ax1.set_xlabel("t")
    ax1.set_ylabel("center")
    ax1.set_ylim(0.0, 1.0)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_modes(csv_path, out_path):
    _, cols = _load_columns(csv_path)
    k = _floats(cols["k"])
    psi = _floats(cols["psi"])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(k / (2.0 * math.pi), psi, "o-", ms=3)
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("mode index k / 2 pi")
    ax.set_ylabel("growth rate psi(k)")
    return _save(fig, out_path)


_SINGLE = {
    "trajectory.csv": plot_trajectory,
    "energy.csv": plot_energy,
    "clusters.csv": plot_clusters,
    "snapshots.csv": plot_snapshots,
    "free_energy.csv": plot_free_energy,
    "masses.csv": plot_masses,
    "ode_masses.csv": plot_masses,
    "branch.csv": plot_branch,
    "landscape.csv": plot_landscape,
    "reduced.csv": plot_reduced,
    "modes.csv": plot_modes,
}


def render_all(out_dir):
    """Render figures for every recognised artifact under ``out_dir``."""
    images = []
    dirs = [out_dir] + sorted(glob.glob(os.path.join(out_dir, "seed-*")))
    for directory in dirs:
        if not os.path.isdir(directory):
            continue
        for name, renderer in _SINGLE.items():
            path = os.path.join(directory, name)
            if os.path.exists(path):
                images.append(renderer(path, path[:-4] + ".png"))
        state = os.path.join(directory, "state.csv")
        if os.path.exists(state):
            images.append(plot_state(state, state[:-4] + ".png",
                                     os.path.join(directory, "report.json")))
        pde_m = os.path.join(directory, "pde_masses.csv")
        ode_m = os.path.join(directory, "ode_masses.csv")
        if os.path.exists(pde_m) and os.path.exists(ode_m):
            images.append(plot_comparison(
                pde_m, ode_m, os.path.join(directory, "comparison.png")))
        elif os.path.exists(pde_m):
            images.append(plot_masses(pde_m, pde_m[:-4] + ".png"))
    return images
