import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterlab.errors import AbsorbedError, GeometryError
from clusterlab.potentials import HegselmannKrause, PotentialSpec
from clusterlab.reduced import (ClusterConfiguration, RateParams, d_dir,
                                exit_probability, gillespie_step,
                                heavy_bm_step, integrate_mass_ode,
                                mass_ode_rhs, mfpt_eyring_kramers,
                                mfpt_quadrature_oracle, rate_phi_l,
                                rate_phi_r, run_reduced, sigma_cluster, v_eff)


@pytest.fixture
def params(hk_spec):
    return RateParams(spec=hk_spec(gamma=1000.0, ell=0.05))


@pytest.fixture
def three_clusters():
    return ClusterConfiguration(centers=np.array([0.1, 0.3, 0.7]),
                                masses=np.array([0.2, 0.3, 0.5]))


class TestConfiguration:
    def test_sorted_cyclically(self):
        cfg = ClusterConfiguration(centers=np.array([0.7, 0.1]),
                                   masses=np.array([0.6, 0.4]))
        assert np.array_equal(cfg.centers, [0.1, 0.7])
        assert np.array_equal(cfg.masses, [0.4, 0.6])
        assert cfg.labels == (1, 0)

    def test_gaps_sum_to_one(self, three_clusters):
        assert float(np.sum(three_clusters.gaps())) == pytest.approx(1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            ClusterConfiguration(centers=np.array([0.2, 0.8]),
                                 masses=np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            ClusterConfiguration(centers=np.array([0.2, 0.8]),
                                 masses=np.array([1.2, -0.2]))

    def test_d_dir(self):
        assert d_dir(0.9, 0.1) == pytest.approx(0.2)
        assert d_dir(0.1, 0.9) == pytest.approx(0.8)


class TestRates:
    def test_matches_explicit_formula(self, params, three_clusters):
        spec = params.spec
        cfg = three_clusters
        for j in range(3):
            m = cfg.masses[j]
            x_l = cfg.centers[(j - 1) % 3]
            x = cfg.centers[j]
            x_r = cfg.centers[(j + 1) % 3]
            pref = math.sqrt(math.e * spec.gamma * spec.wpp0
                             / (2.0 * math.pi * spec.ell)) * math.sqrt(m) \
                * math.exp(-spec.gamma * spec.ell * spec.delta * m)
            want_r = pref / (d_dir(x, x_r) - 2.0 * spec.radius)
            want_l = pref / (d_dir(x_l, x) - 2.0 * spec.radius)
            assert rate_phi_r(m, x_l, x, x_r, params) == pytest.approx(
                want_r, rel=1e-14)
            assert rate_phi_l(m, x_l, x, x_r, params) == pytest.approx(
                want_l, rel=1e-14)

    def test_tight_gap_raises(self, params):
        with pytest.raises(GeometryError):
            rate_phi_r(0.5, 0.0, 0.5, 0.55, params)   # gap 0.05 < 2 * radius

    def test_rates_consistent_with_eyring_kramers_mfpt(self, params,
                                                       three_clusters):
        """phi_r + phi_l and 1/MFPT share the per-gap structure; they
        differ exactly by the interaction diameter in the prefactor."""
        cfg = three_clusters
        spec = params.spec
        for j in range(3):
            x_l = cfg.centers[(j - 1) % 3]
            x = cfg.centers[j]
            x_r = cfg.centers[(j + 1) % 3]
            lp = d_dir(x, x_r) - 2.0 * spec.radius
            lm = d_dir(x_l, x) - 2.0 * spec.radius
            total = (rate_phi_r(cfg.masses[j], x_l, x, x_r, params)
                     + rate_phi_l(cfg.masses[j], x_l, x, x_r, params))
            want = (lp + lm) / (lp + lm + 2.0 * spec.radius) \
                / mfpt_eyring_kramers(j, cfg, spec)
            assert total == pytest.approx(want, rel=1e-12)


class TestMassOde:
    def test_rhs_conserves_mass(self, params, three_clusters):
        rhs = mass_ode_rhs(three_clusters, params)
        assert abs(float(np.sum(rhs))) < 1e-15

    def test_single_cluster_rhs_zero(self, params):
        cfg = ClusterConfiguration(centers=np.array([0.5]),
                                   masses=np.array([1.0]))
        assert np.array_equal(mass_ode_rhs(cfg, params), [0.0])

    def test_heavy_cluster_gains(self, params):
        """With symmetric geometry mass flows from light to heavy."""
        cfg = ClusterConfiguration(centers=np.array([0.25, 0.75]),
                                   masses=np.array([0.3, 0.7]))
        rhs = mass_ode_rhs(cfg, params)
        assert rhs[0] < 0.0 < rhs[1]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_rhs_sums_to_zero_random(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        centers = np.sort(rng.random(k))
        if np.min(np.diff(np.append(centers, centers[0] + 1.0))) < 0.12:
            return
        masses = rng.random(k) + 0.2
        masses /= masses.sum()
        spec = PotentialSpec(family=HegselmannKrause(),
                             gamma=float(rng.uniform(200, 2000)), ell=0.05)
        rhs = mass_ode_rhs(ClusterConfiguration(centers=centers,
                                                masses=masses),
                           RateParams(spec=spec))
        assert abs(float(np.sum(rhs))) < 1e-12 * max(
            float(np.max(np.abs(rhs))), 1.0)

    def test_integrate_conserves_and_dissolves(self, params, three_clusters):
        traj = integrate_mass_ode(three_clusters, params, t_end=30.0)
        for seg in traj.segments:
            total = np.sum(seg.masses, axis=0)
            assert np.max(np.abs(total - 1.0)) < 1e-7
        kinds = [ev.kind for ev in traj.events]
        assert kinds.count("dissolve") == 2
        for ev in traj.events:
            assert sum(ev.masses_before) == pytest.approx(
                sum(ev.masses_after), abs=1e-9)
        assert traj.final_config.k == 1
        assert traj.final_config.masses[0] == pytest.approx(1.0)

    def test_events_ordered_lightest_first(self, params, three_clusters):
        traj = integrate_mass_ode(three_clusters, params, t_end=30.0)
        dissolved = [ev.participants[0] for ev in traj.events
                     if ev.kind == "dissolve"]
        assert dissolved == [0, 1]

    def test_extrapolated_flag(self, params, three_clusters):
        traj = integrate_mass_ode(three_clusters, params, t_end=30.0)
        assert not traj.segments[0].extrapolated
        assert traj.segments[-1].extrapolated

    def test_contact_merges_first(self, params):
        cfg = ClusterConfiguration(centers=np.array([0.50, 0.53, 0.9]),
                                   masses=np.array([0.3, 0.3, 0.4]))
        with pytest.warns(RuntimeWarning):
            traj = integrate_mass_ode(cfg, params, t_end=1e-6)
        assert traj.events[0].kind == "merge"
        assert traj.final_config.k == 2

    def test_mass_series_lookup(self, params, three_clusters):
        traj = integrate_mass_ode(three_clusters, params, t_end=1.0)
        t, m = traj.mass_series(2)
        assert m[0] == pytest.approx(0.5)
        with pytest.raises(KeyError):
            traj.mass_series("nope")


class TestDissolveThreshold:
    def test_default_threshold(self, params):
        spec = params.spec
        assert params.dissolve_mass == pytest.approx(
            1.0 / (spec.gamma * spec.ell * spec.wpp0))

    def test_gamma_c_threshold(self, hk_spec):
        p = RateParams(spec=hk_spec(gamma=1000.0, ell=0.05), gamma_c=200.0)
        assert p.dissolve_mass == pytest.approx(0.2)


class TestEffectivePotential:
    def test_zero_gamma_flat(self, hk_spec, three_clusters):
        spec = hk_spec(gamma=0.0, ell=0.05)
        assert v_eff(0.37, three_clusters, spec) == 0.0

    def test_quadratic_well_depth(self, params, three_clusters):
        """At a center the quadratic mode gives -gamma ell Delta m + 1/2."""
        spec = params.spec
        j = 2
        got = v_eff(float(three_clusters.centers[j]), three_clusters, spec,
                    mode="quadratic")
        want = (-spec.gamma * spec.ell * spec.delta
                * three_clusters.masses[j] + 0.5)
        assert got == pytest.approx(want)

    def test_full_matches_quadratic_near_center(self, params,
                                                three_clusters):
        """Near a heavy center the convolution is close to the parabola."""
        spec = params.spec
        x = three_clusters.centers[2] + 0.3 * sigma_cluster(
            spec, three_clusters.masses[2])
        full = v_eff(x, three_clusters, spec)
        quad = v_eff(x, three_clusters, spec, mode="quadratic")
        scale = spec.gamma * spec.ell * spec.delta
        assert abs(full - quad) < 0.05 * scale

    def test_unknown_mode(self, params, three_clusters):
        with pytest.raises(ValueError):
            v_eff(0.5, three_clusters, params.spec, mode="bogus")


class TestMfpt:
    def test_flat_potential_oracle(self, hk_spec):
        """At gamma = 0 pure diffusion gives u(x) = (x - a)(b - x) / 2."""
        spec = hk_spec(gamma=0.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.4, 0.7]),
                                   masses=np.array([1 / 3, 1 / 3, 1 / 3]))
        a, b = 0.25, 0.65
        got = mfpt_quadrature_oracle(1, cfg, spec, a=a, b=b)
        x = 0.4
        assert got == pytest.approx((x - a) * (b - x) / 2.0, rel=1e-6)

    def test_closed_form_vs_oracle(self, hk_spec):
        """Eyring-Kramers against brute-force quadrature in the deep-well
        regime, within the expected Laplace-approximation accuracy."""
        spec = hk_spec(gamma=1500.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.15, 0.5, 0.85]),
                                   masses=np.array([0.2, 0.5, 0.3]))
        ek = mfpt_eyring_kramers(1, cfg, spec)
        oracle = mfpt_quadrature_oracle(1, cfg, spec)
        assert ek == pytest.approx(oracle, rel=0.35)

    def test_closed_form_recomputation(self, hk_spec):
        spec = hk_spec(gamma=1000.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.3, 0.7]),
                                   masses=np.array([0.2, 0.3, 0.5]))
        j, m = 1, 0.3
        lp = d_dir(0.3, 0.7) - 2 * spec.radius
        lm = d_dir(0.1, 0.3) - 2 * spec.radius
        want = (lp * lm / (lp + lm + 2 * spec.radius)
                * math.sqrt(2 * math.pi * spec.ell
                            / (math.e * spec.gamma * spec.wpp0 * m))
                * math.exp(spec.gamma * spec.ell * spec.delta * m))
        assert mfpt_eyring_kramers(j, cfg, spec) == pytest.approx(
            want, rel=1e-14)

    def test_geometry_error(self, hk_spec):
        spec = hk_spec(gamma=1000.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.18, 0.7]),
                                   masses=np.array([0.2, 0.3, 0.5]))
        with pytest.raises(GeometryError):
            mfpt_eyring_kramers(0, cfg, spec)

    def test_oracle_requires_bracketing(self, hk_spec):
        spec = hk_spec(gamma=0.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.4, 0.7]),
                                   masses=np.array([1 / 3, 1 / 3, 1 / 3]))
        with pytest.raises(ValueError):
            mfpt_quadrature_oracle(1, cfg, spec, a=0.45, b=0.65)


class TestExitProbability:
    def test_flat_closed_vs_quadrature(self, hk_spec):
        """At gamma = 0 the exit split is linear between the well edges."""
        spec = hk_spec(gamma=0.0, ell=0.0499)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.35, 0.8]),
                                   masses=np.array([1 / 3, 1 / 3, 1 / 3]))
        closed = exit_probability(1, cfg, spec, method="closed")
        quad = exit_probability(1, cfg, spec, method="quadrature",
                                a=0.1 + 2.0 * spec.radius,
                                b=0.8 - 2.0 * spec.radius)
        assert closed == pytest.approx(quad, rel=1e-6)

    def test_symmetric_geometry_half(self, hk_spec):
        spec = hk_spec(gamma=800.0, ell=0.05)
        cfg = ClusterConfiguration(centers=np.array([0.2, 0.5, 0.8]),
                                   masses=np.array([0.25, 0.5, 0.25]))
        assert exit_probability(1, cfg, spec) == pytest.approx(0.5)

    def test_biased_toward_nearer_exit(self, hk_spec):
        spec = hk_spec(gamma=0.0, ell=0.04)
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.3, 0.8]),
                                   masses=np.array([1 / 3, 1 / 3, 1 / 3]))
        # right exit much closer than left: low probability of exiting left
        assert exit_probability(1, cfg, spec) > 0.5

    def test_unknown_method(self, hk_spec):
        cfg = ClusterConfiguration(centers=np.array([0.2, 0.7]),
                                   masses=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            exit_probability(0, cfg, hk_spec(gamma=10.0, ell=0.05),
                             method="bogus")


class TestHeavyBm:
    def test_one_step_variance(self, hk_spec):
        """Increment variance of a center over dt is 2 dt / (N m)."""
        spec = hk_spec(gamma=1000.0, ell=0.05)
        params = RateParams(spec=spec)
        dt, n, m = 1e-3, 1000, 0.5
        rng = np.random.default_rng(8)
        incs = []
        for _ in range(4000):
            cfg = ClusterConfiguration(centers=np.array([0.3, 0.8]),
                                       masses=np.array([m, 1.0 - m]),
                                       n_particles=n)
            out = heavy_bm_step(cfg, params, dt, rng)
            incs.append(float(out.centers[0] - 0.3))
        assert np.var(incs) == pytest.approx(2.0 * dt / (n * m), rel=0.1)

    def test_advances_clock(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=1000.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.3, 0.8]),
                                   masses=np.array([0.5, 0.5]),
                                   n_particles=100, time=1.0)
        out = heavy_bm_step(cfg, params, 0.25, np.random.default_rng(0))
        assert out.time == pytest.approx(1.25)

    def test_requires_n_particles(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=1000.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.3, 0.8]),
                                   masses=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            heavy_bm_step(cfg, params, 1e-3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            heavy_bm_step(ClusterConfiguration(
                centers=np.array([0.3, 0.8]), masses=np.array([0.5, 0.5]),
                n_particles=100), params, 0.0, np.random.default_rng(0))

    def test_close_centers_merge(self, hk_spec):
        spec = hk_spec(gamma=1e6, ell=0.05)   # noise ~ 1e-6, no stray merges
        params = RateParams(spec=spec)
        cfg = ClusterConfiguration(centers=np.array([0.40, 0.43, 0.9]),
                                   masses=np.array([0.3, 0.1, 0.6]),
                                   n_particles=10**6)
        out = heavy_bm_step(cfg, params, 1e-9, np.random.default_rng(1))
        assert out.k == 2
        # merged center is the mass-weighted mean, label from the heavier one
        j = int(np.argmin(np.abs(out.centers - 0.4075)))
        assert out.masses[j] == pytest.approx(0.4)
        assert out.labels[j] == 0


class TestGillespie:
    def test_expected_drift_matches_rhs(self, hk_spec):
        """Averaged one-jump mass change per unit time equals the ODE rhs."""
        spec = hk_spec(gamma=1000.0, ell=0.05)
        params = RateParams(spec=spec)
        n = 10_000
        cfg = ClusterConfiguration(centers=np.array([0.1, 0.3, 0.7]),
                                   masses=np.array([0.2, 0.3, 0.5]),
                                   n_particles=n)
        rng = np.random.default_rng(99)
        drift = np.zeros(3)
        t_tot = 0.0
        for _ in range(20_000):
            tau, nxt = gillespie_step(cfg, params, rng)
            drift += nxt.masses - cfg.masses
            t_tot += tau
        rhs = mass_ode_rhs(cfg, params)
        assert np.max(np.abs(drift / t_tot - rhs)) < 0.05 * float(
            np.max(np.abs(rhs)))

    def test_single_jump_moves_one_particle(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=1000.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.2, 0.7]),
                                   masses=np.array([0.4, 0.6]),
                                   n_particles=50)
        tau, nxt = gillespie_step(cfg, params, np.random.default_rng(3))
        assert tau > 0.0
        diff = np.abs(nxt.masses - cfg.masses)
        assert np.all((diff == 0.0) | (np.abs(diff - 1 / 50) < 1e-12))
        assert float(np.sum(nxt.masses)) == pytest.approx(1.0)

    def test_last_particle_dissolves_cluster(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=400.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.2, 0.7]),
                                   masses=np.array([0.1, 0.9]),
                                   n_particles=10)
        rng = np.random.default_rng(0)
        while cfg.k == 2:
            _, cfg = gillespie_step(cfg, params, rng)
        assert cfg.masses[0] == pytest.approx(1.0)

    def test_absorbing_state(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=400.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.5]),
                                   masses=np.array([1.0]), n_particles=10)
        with pytest.raises(AbsorbedError):
            gillespie_step(cfg, params, np.random.default_rng(0))

    def test_requires_n_particles(self, hk_spec):
        params = RateParams(spec=hk_spec(gamma=400.0, ell=0.05))
        cfg = ClusterConfiguration(centers=np.array([0.2, 0.7]),
                                   masses=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            gillespie_step(cfg, params, np.random.default_rng(0))


class TestRunReduced:
    def test_ode_mode_is_integrate_mass_ode(self, params, three_clusters):
        a = run_reduced(three_clusters, params, t_end=5.0, mode="ode")
        b = integrate_mass_ode(three_clusters, params, t_end=5.0)
        assert len(a.segments) == len(b.segments)
        for sa, sb in zip(a.segments, b.segments):
            assert np.array_equal(sa.masses, sb.masses)

    def test_ode_bm_tracks_frozen_ode(self, params, three_clusters):
        """With many particles center noise is tiny and the coupled run
        reproduces the frozen-center ODE masses."""
        cfg = ClusterConfiguration(centers=three_clusters.centers,
                                   masses=three_clusters.masses,
                                   n_particles=10**7)
        t_end = 0.05
        traj = run_reduced(cfg, params, t_end=t_end, mode="ode+bm",
                           rng=np.random.default_rng(4), dt=t_end / 400)
        ode = integrate_mass_ode(three_clusters, params, t_end=t_end)
        for lab in (0, 1, 2):
            t_a, m_a = traj.mass_series(lab)
            t_b, m_b = ode.mass_series(lab)
            assert abs(m_a[-1] - np.interp(t_a[-1], t_b, m_b)) < 1e-3

    def test_gillespie_bm_reaches_consensus(self, hk_spec, three_clusters):
        # merge at the full interaction diameter: with few particles the
        # centers wander, and rates are undefined for tighter gaps
        params = RateParams(spec=hk_spec(gamma=1000.0, ell=0.05),
                            c_merge=2.0)
        cfg = ClusterConfiguration(centers=three_clusters.centers,
                                   masses=three_clusters.masses,
                                   n_particles=200)
        traj = run_reduced(cfg, params, t_end=40.0, mode="gillespie+bm",
                           rng=np.random.default_rng(11), dt=0.02)
        assert traj.final_config.k == 1
        assert traj.final_config.masses[0] == pytest.approx(1.0)
        assert all(ev.kind in ("dissolve", "merge") for ev in traj.events)

    def test_mode_validation(self, params, three_clusters):
        with pytest.raises(ValueError):
            run_reduced(three_clusters, params, 1.0, mode="bogus")
        with pytest.raises(ValueError):
            run_reduced(three_clusters, params, 1.0, mode="ode+bm")

    def test_clock_consistency(self, params, three_clusters):
        """Split steps must advance time once: final time equals t_end."""
        cfg = ClusterConfiguration(centers=three_clusters.centers,
                                   masses=three_clusters.masses,
                                   n_particles=10**6)
        t_end = 0.02
        traj = run_reduced(cfg, params, t_end=t_end, mode="ode+bm",
                           rng=np.random.default_rng(5), dt=t_end / 100)
        assert traj.final_config.time == pytest.approx(t_end, rel=1e-9)
