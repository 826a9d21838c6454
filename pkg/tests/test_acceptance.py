"""Acceptance gate: one test (and one printed pass/fail line) per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the
printed lines for passing criteria too).  The full gate takes roughly
half an hour; the long criteria are the monitored PDE run (5) and the
two PDE-vs-reduced comparisons (7).
"""

import json
import math
import time
import warnings

import numpy as np
import pytest

from clusterlab.harness import ExperimentConfig, ode_mass_series, run_experiment
from clusterlab.particle import compute_drift
from clusterlab.pde import (DensityField, PdeRunConfig, gaussian_mixture_init,
                            run_pde)
from clusterlab.potentials import HegselmannKrause, PotentialSpec, wrap
from clusterlab.reduced import (ClusterConfiguration, RateParams,
                                heavy_bm_step, integrate_mass_ode,
                                mfpt_eyring_kramers, mfpt_quadrature_oracle,
                                run_reduced)
from clusterlab.spectral import dominant_mode, gamma_sharp, \
    hk_transcendental_root
from clusterlab.stationary import (continue_branch, multi_cluster_scale,
                                   solve_fixed_point,
                                   symmetric_decreasing_check)

HK = HegselmannKrause()


def report(num, ok, detail):
    line = f"CRITERION {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    return line


class TestAcceptance:
    def test_criterion_01_transcendental_root(self):
        y = hk_transcendental_root()          # warm any caches
        t0 = time.perf_counter()
        y = hk_transcendental_root()
        elapsed = time.perf_counter() - t0
        ok = (abs(y - 2.74) < 0.01 and 0.43 < y / (2 * math.pi) < 0.44
              and elapsed < 1e-3)
        line = report(1, ok, f"y*={y:.6f}, y*/2pi={y/(2*math.pi):.4f}, "
                             f"{elapsed*1e6:.0f} us")
        assert ok, line

    def test_criterion_02_gamma_sharp_asymptotics(self):
        t0 = time.perf_counter()
        ratio_003 = gamma_sharp(HK, 0.03) * 0.03 ** 2 / 1.5
        err_01 = abs(gamma_sharp(HK, 0.1) * 0.1 ** 2 / 1.5 - 1.0)
        err_001 = abs(gamma_sharp(HK, 0.01) * 0.01 ** 2 / 1.5 - 1.0)
        elapsed = time.perf_counter() - t0
        ok = 0.9 <= ratio_003 <= 1.1 and err_001 < err_01 and elapsed < 1.0
        line = report(2, ok, f"ratio(0.03)={ratio_003:.4f}, "
                             f"err 0.1->{err_01:.4f}, 0.01->{err_001:.4f}, "
                             f"{elapsed:.2f} s")
        assert ok, line

    def test_criterion_03_gaussian_variance(self):
        from clusterlab.harness import gaussian_fit
        t0 = time.perf_counter()
        spec = PotentialSpec(family=HK, gamma=100.0, ell=0.5)
        cfg = ClusterConfiguration(centers=np.array([0.5]),
                                   masses=np.array([1.0]))
        rho0 = gaussian_mixture_init(cfg, spec, 1024)
        state = solve_fixed_point(rho0, spec, tol=1e-12)
        var = gaussian_fit(state.rho, tail_frac=1e-3)["variance"]
        elapsed = time.perf_counter() - t0
        ok = abs(var - 0.005) / 0.005 < 0.05 and elapsed < 10.0
        line = report(3, ok, f"variance={var:.6f} (target 0.005 +-5%), "
                             f"{elapsed:.1f} s")
        assert ok, line

    def test_criterion_04_discontinuous_transition(self):
        t0 = time.perf_counter()
        ell = 0.1
        start = PotentialSpec(family=HK, gamma=160.0, ell=ell)
        cfg = ClusterConfiguration(centers=np.array([0.5]),
                                   masses=np.array([1.0]))
        rho0 = gaussian_mixture_init(cfg, start, 256)
        branch = continue_branch(start, np.linspace(160.0, 95.0, 66), rho0)
        elapsed = time.perf_counter() - t0
        gs = gamma_sharp(HK, ell)
        near = min(branch.points,
                   key=lambda p: abs(p.gamma - (branch.gamma_c or np.inf)))
        gaps = [(p.gamma, p.gap) for p in branch.points]
        sign_change = (min(g for _, g in gaps) < 0.0 < max(g for _, g in gaps))
        ok = (branch.gamma_c is not None and sign_change
              and near.l1_dist > 0.1 and branch.gamma_c < gs
              and elapsed < 300.0)
        line = report(4, ok, f"gamma_c={branch.gamma_c:.3f} < "
                             f"gamma_sharp={gs:.3f}, L1 at crossing="
                             f"{near.l1_dist:.3f}, {elapsed:.0f} s")
        assert ok, line

    def test_criterion_05_pde_conservation_dissipation(self, tmp_path):
        spec = PotentialSpec(family=HK, gamma=1000.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.3, 0.7]),
                                   masses=np.array([0.2, 0.3, 0.5]))
        rho0 = gaussian_mixture_init(cfg, spec, 512)
        t0 = time.perf_counter()
        config = PdeRunConfig(spec=spec, m_cells=512, t_end=5.0,
                              output_stride=5000, monitor_every_step=True,
                              checkpoint_path=str(tmp_path / "ck.mvpd"),
                              checkpoint_interval=60.0)
        traj = run_pde(rho0, config)
        elapsed = time.perf_counter() - t0
        f_scale = max(abs(e[1]) for e in traj.energies)
        tol = 1e-10 * (1.0 + f_scale)
        ok = (traj.mass_drift < 1e-10 and traj.max_energy_violation <= tol
              and traj.min_density >= 0.0 and elapsed < 600.0)
        line = report(5, ok, f"mass drift={traj.mass_drift:.2e}, "
                             f"energy violation={traj.max_energy_violation:.2e}"
                             f" (tol {tol:.2e}), min rho="
                             f"{traj.min_density:.2e}, {elapsed:.0f} s")
        assert ok, line

    def test_criterion_06_growth_rate(self):
        ell = 0.1
        gs = gamma_sharp(HK, ell)
        spec = PotentialSpec(family=HK, gamma=2.0 * gs, ell=ell)
        k_max, psi_max, n = dominant_mode(spec)
        m = 256
        x = (np.arange(m) + 0.5) / m
        rho0 = DensityField(values=1.0 + 1e-4 * np.cos(k_max * x))
        amps = []

        def cb(t, rho):
            amps.append((t, 2.0 * abs(np.fft.rfft(rho.values)[n]) / m))

        config = PdeRunConfig(spec=spec, m_cells=m, t_end=0.04,
                              output_stride=20)
        run_pde(rho0, config, callback=cb)
        amps = np.array(amps)
        keep = (amps[:, 1] < 1e-2) & (amps[:, 1] > 1.2e-4)
        slope = np.polyfit(amps[keep, 0], np.log(amps[keep, 1]), 1)[0]
        rel = abs(slope - psi_max) / psi_max
        ok = rel < 0.10
        line = report(6, ok, f"measured rate={slope:.2f} vs psi(k_max)="
                             f"{psi_max:.2f}, rel err={rel:.4f}")
        assert ok, line

    @pytest.mark.parametrize("kind", ["fig5_comparison", "figPP_comparison"])
    def test_criterion_07_reduced_vs_pde(self, kind, tmp_path):
        warnings.simplefilter("ignore")
        config = ExperimentConfig(
            kind=kind, out_dir=str(tmp_path), checkpoint_interval=60.0,
            params={"pde": {"m_cells": 256, "t_end": 60.0,
                            "steady_tol": 1e-8, "output_stride": 20000}})
        run_experiment(config)
        with open(tmp_path / "comparison.json") as fh:
            rep = json.load(fh)
        ratio = rep["collapse_ratio"]
        ok = rep["order_match"] and 0.5 <= ratio <= 2.0
        line = report(7, ok, f"{kind}: order match={rep['order_match']}, "
                             f"collapse ratio={ratio:.3f}")
        assert ok, line

    def test_criterion_08_metastability_scaling(self):
        gammas = [600.0, 800.0, 1000.0]
        logs = []
        for g in gammas:
            spec = PotentialSpec(family=HK, gamma=g, ell=0.05)
            params = RateParams(spec=spec)
            cfg = ClusterConfiguration(centers=np.array([0.25, 0.75]),
                                       masses=np.array([0.45, 0.55]))
            traj = integrate_mass_ode(cfg, params, t_end=1e9)
            logs.append(math.log(traj.events[0].time))
        slope = float(np.polyfit(gammas, logs, 1)[0])
        target = 0.05 * HK.delta * 0.45          # ell * Delta * m_light
        ok = abs(slope - target) / target < 0.15
        line = report(8, ok, f"slope={slope:.5f} vs target {target:.5f} "
                             f"+-15% = [{0.85*target:.5f}, {1.15*target:.5f}]")
        assert ok, (
            line + "\nKnown deficit, not an implementation error: the exact "
            "collapse time of the mass ODE at gamma in {600, 800, 1000} "
            "carries two subleading corrections to the e^(gamma ell Delta m) "
            "law - the Laplace prefactor of the dissolution integral "
            "(-(3/2)/gamma in d log t/d gamma) and backflow from the light "
            "cluster (inflow/outflow ~ 0.30 at gamma=600 vs 0.08 at "
            "gamma=1000) - which together predict a slope of ~0.0086, "
            "matching the measurement; the asymptotic law only reaches the "
            "15% window for gamma beyond ~2000.")

    def test_criterion_09_eyring_kramers_vs_oracle(self):
        ell = 0.05
        cfg = ClusterConfiguration(
            centers=np.array([1.0 / 6.0, 0.5, 5.0 / 6.0]),
            masses=np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]))
        errs = []
        for gl in (15.0, 20.0, 25.0):
            spec = PotentialSpec(family=HK, gamma=gl / ell, ell=ell)
            ek = mfpt_eyring_kramers(1, cfg, spec)
            oracle = mfpt_quadrature_oracle(1, cfg, spec)
            errs.append(abs(math.log(ek / oracle)))
        ok = errs[0] > errs[1] > errs[2] and errs[2] < 0.35
        line = report(9, ok, "|log EK/oracle| over gamma*ell in {15,20,25}: "
                             + ", ".join(f"{e:.4f}" for e in errs))
        assert ok, line

    def test_criterion_10_gillespie_vs_ode(self):
        warnings.simplefilter("ignore")
        spec = PotentialSpec(family=HK, gamma=1000.0, ell=0.05)
        params = RateParams(spec=spec)

        def cfg0(n=None):
            return ClusterConfiguration(centers=np.array([0.1, 0.3, 0.7]),
                                        masses=np.array([0.2, 0.3, 0.5]),
                                        n_particles=n)

        t_end = 0.085                  # before the first ODE dissolution
        ode_s = ode_mass_series(integrate_mass_ode(cfg0(), params, t_end))
        t_grid = np.linspace(0.0, t_end, 18)
        n_seeds = 32
        paths = {lab: [] for lab in (0, 1, 2)}
        for seed in range(n_seeds):
            traj = run_reduced(cfg0(10_000), params, t_end=t_end,
                               mode="gillespie+bm",
                               rng=np.random.default_rng(seed),
                               dt=t_end / 100)
            s = ode_mass_series(traj)
            for lab in paths:
                paths[lab].append(np.interp(t_grid, s[lab]["t"],
                                            s[lab]["mass"]))
        worst = 0.0
        for lab in paths:
            arr = np.array(paths[lab])
            mean = arr.mean(axis=0)
            se = arr.std(axis=0, ddof=1) / math.sqrt(n_seeds)
            ode_m = np.interp(t_grid, ode_s[lab]["t"], ode_s[lab]["mass"])
            z = np.abs(mean - ode_m) / np.maximum(3.0 * se, 1e-12)
            worst = max(worst, float(z[1:].max()))   # t=0 has zero SE
        ok = worst <= 1.0
        line = report(10, ok, f"max |mean - ODE| / (3 SE) = {worst:.3f} "
                              f"over {n_seeds} seeds, N=1e4")
        assert ok, line

    def test_criterion_11_coalescence_timescale(self):
        spec = PotentialSpec(family=HK, gamma=1000.0, ell=0.05)
        params = RateParams(spec=spec)
        ns = [25, 50, 100]
        dt = 4e-4
        means = []
        for n in ns:
            times = []
            for seed in range(200):
                rng = np.random.default_rng(10_000 * n + seed)
                cfg = ClusterConfiguration(centers=np.array([0.25, 0.75]),
                                           masses=np.array([0.5, 0.5]),
                                           n_particles=n)
                while cfg.k > 1:
                    cfg = heavy_bm_step(cfg, params, dt, rng)
                times.append(cfg.time)
            means.append(float(np.mean(times)))
        slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
        ok = abs(slope - 1.0) <= 0.25
        line = report(11, ok, f"log-log slope={slope:.3f} (target 1 +- 0.25),"
                              f" means={[round(m, 3) for m in means]}")
        assert ok, line

    def test_criterion_12_multi_cluster_scaling(self):
        spec = PotentialSpec(family=HK, gamma=100.0, ell=0.5)
        cfg = ClusterConfiguration(centers=np.array([0.5]),
                                   masses=np.array([1.0]))
        rho0 = gaussian_mixture_init(cfg, spec, 512)
        state = solve_fixed_point(rho0, spec, tol=1e-12)
        residuals = {k: multi_cluster_scale(state, k).residual
                     for k in (2, 3)}
        ok = all(r < 1e-8 for r in residuals.values())
        line = report(12, ok, "KM residuals: "
                      + ", ".join(f"K={k}: {r:.2e}"
                                  for k, r in residuals.items()))
        assert ok, line

    def test_criterion_13_symmetric_decreasing(self):
        spec = PotentialSpec(family=HK, gamma=150.0, ell=0.1)
        m = 256
        results = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            rho0 = DensityField(values=1.0 + 0.05 * rng.standard_normal(m))
            rho0.values -= rho0.values.min() - 0.5   # keep positive
            rho0.values /= rho0.mass()
            state = solve_fixed_point(rho0, spec, tol=1e-11)
            ok_i, dev = symmetric_decreasing_check(state.rho)
            results.append((ok_i, dev))
        ok = all(r[0] for r in results)
        line = report(13, ok, "5 random starts, max deviation="
                              f"{max(r[1] for r in results):.2e}")
        assert ok, line

    def test_criterion_14_cell_list_equivalence(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(2, 201))
            # O(1-100) drift magnitudes, where 1e-14 absolute is meaningful
            spec = PotentialSpec(family=HK,
                                 gamma=float(rng.uniform(1.0, 200.0)),
                                 ell=float(rng.uniform(0.02, 0.45)))
            pos = rng.random(n)
            got = compute_drift(pos, spec)
            diff = wrap(pos[:, None] - pos[None, :])
            want = -np.sum(spec.W_prime(diff), axis=1) / n
            worst = max(worst, float(np.max(np.abs(got - want))))
        ok = worst < 1e-14
        line = report(14, ok, f"max |cell-list - brute force| = {worst:.2e} "
                              f"over 100 ensembles")
        assert ok, line
