"""Delimited-text artifacts with stable, reproducible formatting.

Every writer emits CSV with a header row and floats rendered through a
single shortest-roundtrip format, so re-running a pipeline with the
same inputs reproduces byte-identical files.
"""

import csv

import numpy as np

FLOAT_FMT = "%.17g"


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    """Write ``rows`` (iterables of cells) under ``header``; returns path."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(c) for c in row])
    return path


def read_csv(path):
    """Read a CSV written by :func:`write_csv`; returns (header, rows).

    Cells are converted to float where possible and kept as strings
    otherwise.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            row = []
            for cell in raw:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(row)
    return header, rows


def write_particle_trajectory(path, times, positions):
    """Rows (t, particle_id, x); ``positions`` is one array per time."""
    rows = ((t, i, x)
            for t, pos in zip(times, positions)
            for i, x in enumerate(pos))
    return write_csv(path, ["t", "particle_id", "x"], rows)


def write_clusters(path, configs):
    """Rows (t, cluster_id, center, mass) from ClusterConfigurations."""
    rows = ((cfg.time, lab, c, m)
            for cfg in configs
            for lab, c, m in zip(cfg.labels, cfg.centers, cfg.masses))
    return write_csv(path, ["t", "cluster_id", "center", "mass"], rows)


def write_energy(path, times, energies):
    """Rows (t, energy): the particle-system order parameter."""
    return write_csv(path, ["t", "energy"], zip(times, energies))


def write_pde_snapshots(path, traj):
    """Rows (t, cell_index, rho) for every snapshot of a PDE trajectory."""
    rows = ((t, i, v)
            for t, rho in zip(traj.times, traj.snapshots)
            for i, v in enumerate(rho.values))
    return write_csv(path, ["t", "cell_index", "rho"], rows)


def write_free_energy(path, energies):
    """Rows (t, F, entropy_part, interaction_part)."""
    return write_csv(path, ["t", "F", "entropy_part", "interaction_part"],
                     energies)


def write_branch(path, branch):
    """Rows (gamma, gap, l1_dist, residual, n_iter) of a bifurcation branch."""
    rows = ((p.gamma, p.gap, p.l1_dist, p.state.residual, p.state.n_iter)
            for p in branch.points)
    return write_csv(path, ["gamma", "gap", "l1_dist", "residual", "n_iter"],
                     rows)


def write_landscape(path, m1_grid, d_grid, values):
    """Rows (m1, d, F) of a two-cluster free-energy landscape."""
    rows = ((m1, d, values[i, j])
            for i, m1 in enumerate(m1_grid)
            for j, d in enumerate(d_grid))
    return write_csv(path, ["m1", "d", "F"], rows)


def write_reduced_trajectory(path, traj):
    """Rows (t, cluster_id, center, mass, event) of a reduced trajectory."""
    return write_csv(path, ["t", "cluster_id", "center", "mass", "event"],
                     traj.records())


def write_event_log(path, events):
    """Rows (t_event, type, participants, masses_before, masses_after).

    List-valued cells are ';'-joined so the file stays one flat CSV.
    """
    def join(values):
        return ";".join(_fmt(v) for v in values)

    rows = ((ev.time, ev.kind, join(ev.participants),
             join(ev.masses_before), join(ev.masses_after))
            for ev in events)
    return write_csv(path, ["t_event", "type", "participants",
                            "masses_before", "masses_after"], rows)


def write_mass_series(path, series):
    """Rows (t, cluster_id, center, mass) from a label -> arrays mapping.

    ``series`` maps each label to a dict with keys ``t``, ``center``
    and ``mass`` holding equally long arrays.
    """
    rows = ((t, lab, c, m)
            for lab in sorted(series)
            for t, c, m in zip(series[lab]["t"], series[lab]["center"],
                               series[lab]["mass"]))
    return write_csv(path, ["t", "cluster_id", "center", "mass"], rows)


def write_density(path, rho):
    """Rows (cell_index, x, rho) of a single density profile."""
    rows = zip(range(rho.m), rho.cell_centers(), rho.values)
    return write_csv(path, ["cell_index", "x", "rho"], rows)


def write_modes(path, modes):
    """Rows (k, What, psi) of a linear-stability mode table."""
    return write_csv(path, ["k", "What", "psi"], modes)
