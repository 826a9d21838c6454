"""Command-line interface.

Every subcommand runs through the experiment harness, so each
invocation produces delimited artifacts, rendered figures and a
``manifest.json`` in the output directory.
"""

import argparse
import json
import os
import sys

from . import harness
from .harness import ExperimentConfig, compare_masses, load_config


def _add_potential_args(parser):
    parser.add_argument("--family", default="hk",
                        choices=["hk", "pp", "tabulated"])
    parser.add_argument("--gamma", type=float, default=100.0)
    parser.add_argument("--ell", type=float, default=0.1)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--beta", type=float, default=3.0)
    parser.add_argument("--a", type=float, default=0.5)
    parser.add_argument("--table", help="CSV file (x, w) for tabulated w")
    parser.add_argument("--wpp0", type=float,
                        help="curvature w''(0) of a tabulated potential")


def _potential_params(args):
    params = {"family": args.family, "gamma": args.gamma, "ell": args.ell}
    if args.family == "pp":
        params.update(alpha=args.alpha, beta=args.beta, a=args.a)
    elif args.family == "tabulated":
        if args.table is None or args.wpp0 is None:
            raise SystemExit("tabulated potential needs --table and --wpp0")
        params.update(csv=args.table, wpp0=args.wpp0)
    return params


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clusterlab",
        description="Numerical laboratory for clustering of weakly "
                    "interacting diffusions on the torus.")
    parser.add_argument("--seed", type=int, nargs="+", default=[0],
                        help="random seed(s)")
    parser.add_argument("--out", default="clusterlab-out",
                        help="output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker-pool size for multi-seed experiments")
    parser.add_argument("--checkpoint-interval", type=float, default=None,
                        help="seconds between PDE checkpoint writes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectral", help="linear stability of the flat state")
    _add_potential_args(p)
    p.add_argument("--amplitude", type=float, default=0.0)
    p.add_argument("--n-particles", type=int)

    p = sub.add_parser("particles", help="interacting-particle simulation")
    _add_potential_args(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--init", default="grid", choices=["grid", "uniform_iid"])
    p.add_argument("--stride", type=int, default=0,
                   help="record every this many steps (0: auto)")

    p = sub.add_parser("pde", help="McKean-Vlasov PDE run")
    _add_potential_args(p)
    p.add_argument("--m-cells", type=int, default=256)
    p.add_argument("--dt", type=float, default=None,
                   help="fixed time step (default: adaptive CFL)")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--stride", type=int, default=2000)
    p.add_argument("--init", default="uniform",
                   choices=["uniform", "perturbed_uniform", "uniform_mode",
                            "mixture"])
    p.add_argument("--centers", type=float, nargs="+")
    p.add_argument("--masses", type=float, nargs="+")

    p = sub.add_parser("stationary",
                       help="stationary states and the bifurcation branch")
    _add_potential_args(p)
    p.add_argument("--m-cells", type=int, default=512)
    p.add_argument("--branch", action="store_true",
                   help="continue the branch over a gamma grid")
    p.add_argument("--gamma-hi", type=float, default=160.0)
    p.add_argument("--gamma-lo", type=float, default=95.0)
    p.add_argument("--gamma-steps", type=int, default=66)

    p = sub.add_parser("reduced", help="reduced cluster model")
    _add_potential_args(p)
    p.add_argument("--mode", default="ode",
                   choices=["ode", "ode+bm", "gillespie+bm"])
    p.add_argument("--centers", type=float, nargs="+", required=True)
    p.add_argument("--masses", type=float, nargs="+", required=True)
    p.add_argument("--n-particles", type=int)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--dt", type=float)

    p = sub.add_parser("experiment", help="run a named or TOML experiment")
    p.add_argument("target", help="experiment kind or config-file path")

    p = sub.add_parser("compare", help="compare two per-cluster mass CSVs")
    p.add_argument("pde_csv")
    p.add_argument("ode_csv")
    p.add_argument("--threshold", type=float, default=0.02,
                   help="dissolution mass threshold")
    return parser


def _series_from_csv(path):
    import numpy as np

    from .io import read_csv
    _, rows = read_csv(path)
    series = {}
    for t, lab, center, mass in rows:
        d = series.setdefault(lab, {"t": [], "center": [], "mass": []})
        d["t"].append(t)
        d["center"].append(center)
        d["mass"].append(mass)
    return {lab: {k: np.asarray(v) for k, v in d.items()}
            for lab, d in series.items()}


def _config_from_args(args, kind, params):
    return ExperimentConfig(
        kind=kind, out_dir=args.out, seeds=tuple(args.seed),
        threads=args.threads, checkpoint_interval=args.checkpoint_interval,
        params=params)


def main(argv=None):
    args = build_parser().parse_args(argv)
    cmd = args.command

    if cmd == "compare":
        report = compare_masses(_series_from_csv(args.pde_csv),
                                _series_from_csv(args.ode_csv),
                                dissolve_threshold=args.threshold)
        payload = {
            "sup_gap": {str(k): v for k, v in report.sup_gap.items()},
            "order_match": report.order_match,
            "collapse_ratio": report.collapse_ratio,
        }
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
        return 0

    if cmd == "experiment":
        if os.path.exists(args.target):
            config = load_config(args.target)
            config.out_dir = args.out
            config.seeds = tuple(args.seed)
            config.threads = args.threads
            if args.checkpoint_interval is not None:
                config.checkpoint_interval = args.checkpoint_interval
        else:
            config = _config_from_args(args, args.target, {})
    elif cmd == "spectral":
        params = {"potential": _potential_params(args),
                  "pipeline": "spectral",
                  "spectral": {"amplitude": args.amplitude,
                               "n_particles": args.n_particles}}
        config = _config_from_args(args, "custom", params)
    elif cmd == "particles":
        particles = {"n": args.n, "dt": args.dt, "t_end": args.t_end,
                     "init": args.init}
        if args.stride:
            particles["record_stride"] = args.stride
        params = {"potential": _potential_params(args),
                  "pipeline": "particles", "particles": particles}
        config = _config_from_args(args, "custom", params)
    elif cmd == "pde":
        pde = {"m_cells": args.m_cells, "dt": args.dt, "t_end": args.t_end,
               "output_stride": args.stride, "init": args.init}
        if args.init == "mixture":
            if not args.centers or not args.masses:
                raise SystemExit("mixture init needs --centers and --masses")
            pde.update(centers=args.centers, masses=args.masses)
        params = {"potential": _potential_params(args), "pipeline": "pde",
                  "pde": pde}
        config = _config_from_args(args, "custom", params)
    elif cmd == "stationary":
        stat = {"m_cells": args.m_cells, "gamma_hi": args.gamma_hi,
                "gamma_lo": args.gamma_lo, "gamma_steps": args.gamma_steps}
        kind = "fig7_bifurcation" if args.branch else "fig6_steady_state"
        params = {"potential": _potential_params(args), "stationary": stat}
        config = _config_from_args(args, kind, params)
    elif cmd == "reduced":
        reduced = {"mode": args.mode, "centers": args.centers,
                   "masses": args.masses, "t_end": args.t_end}
        if args.n_particles is not None:
            reduced["n_particles"] = args.n_particles
        if args.dt is not None:
            reduced["dt"] = args.dt
        params = {"potential": _potential_params(args),
                  "pipeline": "reduced", "reduced": reduced}
        config = _config_from_args(args, "custom", params)
    else:
        raise SystemExit(f"unknown command {cmd!r}")

    manifest = harness.run_experiment(config)
    print(json.dumps({"out_dir": config.out_dir,
                      "n_outputs": len(manifest["outputs"]),
                      "wall_time_s": manifest["wall_time_s"]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
