"""Reduced cluster model: Eyring-Kramers mass exchange plus heavy centers.

Once the density has condensed into K well-separated Gaussian-like
clusters, the dynamics reduces to (i) exponentially slow mass exchange
between cyclic neighbours with rates phi^(r), phi^(l), (ii) Brownian
motion of each center with variance inversely proportional to the
cluster's particle count, and (iii) merging / dissolution boundary
conditions.  A Gillespie jump chain provides the finite-N counterpart
of the mass ODE, and quadrature oracles for mean first-passage times
and exit probabilities validate the closed-form rates.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (AbsorbedError, GeometryError, QuadratureError,
                     StepFailureError)
from .potentials import wrap

_MASS_TOL = 1e-9


def d_dir(x_from, x_to):
    """Directed (counter-clockwise) distance from x_from to x_to in [0, 1)."""
    return (x_to - x_from) % 1.0


@dataclass
class ClusterConfiguration:
    """Cyclically ordered cluster centers with masses summing to one."""

    centers: np.ndarray
    masses: np.ndarray
    n_particles: int = None
    time: float = 0.0
    labels: tuple = None

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=float)) % 1.0
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if centers.shape != masses.shape:
            raise ValueError("centers and masses must have equal length")
        if np.any(masses <= 0.0) or np.any(masses > 1.0 + _MASS_TOL):
            raise ValueError("cluster masses must lie in (0, 1]")
        if abs(float(np.sum(masses)) - 1.0) > _MASS_TOL:
            raise ValueError("cluster masses must sum to 1")
        order = np.argsort(centers, kind="stable")
        labels = self.labels if self.labels is not None else tuple(range(len(centers)))
        labels = tuple(np.asarray(labels, dtype=object)[order])
        self.centers = centers[order]
        self.masses = masses[order]
        self.labels = labels

    @property
    def k(self):
        return len(self.centers)

    def gaps(self):
        """Directed gaps to the right neighbour (cyclic); sums to 1."""
        return d_dir(self.centers, np.roll(self.centers, -1))


@dataclass
class RateParams:
    """Shared parameters of the reduced model."""

    spec: object
    c_merge: float = 1.0
    merge_distance: float = None
    dissolve_mass: float = None
    gamma_c: float = None

    def __post_init__(self):
        if self.merge_distance is None:
            self.merge_distance = self.c_merge * self.spec.radius
        if self.dissolve_mass is None:
            if self.gamma_c is not None:
                self.dissolve_mass = self.gamma_c / self.spec.gamma
            else:
                self.dissolve_mass = 1.0 / (
                    self.spec.gamma * self.spec.ell * self.spec.wpp0)

    def check_geometry(self, config):
        """Warn when initial gaps do not dominate the merge distance."""
        if config.k >= 2 and float(np.min(config.gaps())) <= self.merge_distance:
            warnings.warn(
                "initial cluster gap at or below the merge distance; "
                "reduced model assumptions are violated",
                RuntimeWarning, stacklevel=3)


def sigma_cluster(spec, m):
    """Standard deviation sqrt(ell / (gamma w''(0) m)) of a cluster of mass m."""
    return math.sqrt(spec.ell / (spec.gamma * spec.wpp0 * m))


def _rate_prefactor(spec, m):
    return math.sqrt(math.e * spec.gamma * spec.wpp0 / (2.0 * math.pi * spec.ell)) \
        * math.sqrt(m) * math.exp(-spec.gamma * spec.ell * spec.delta * m)


def rate_phi_r(m, x_l, x, x_r, params):
    """Rate at which a cluster at x loses mass to its right neighbour."""
    spec = params.spec
    den = d_dir(x, x_r) - 2.0 * spec.radius
    if den <= 0.0:
        raise GeometryError("right gap within interaction range; merge expected")
    return _rate_prefactor(spec, m) / den


def rate_phi_l(m, x_l, x, x_r, params):
    """Rate at which a cluster at x loses mass to its left neighbour."""
    spec = params.spec
    den = d_dir(x_l, x) - 2.0 * spec.radius
    if den <= 0.0:
        raise GeometryError("left gap within interaction range; merge expected")
    return _rate_prefactor(spec, m) / den


def _all_rates(centers, masses, params):
    """Vectors (phi_r, phi_l) for every cluster of a cyclic configuration."""
    spec = params.spec
    right = d_dir(centers, np.roll(centers, -1)) - 2.0 * spec.radius
    left = d_dir(np.roll(centers, 1), centers) - 2.0 * spec.radius
    if np.any(right <= 0.0) or np.any(left <= 0.0):
        raise GeometryError("cluster gap within interaction range")
    pref = (math.sqrt(spec.gamma * spec.wpp0 * math.e / (2.0 * math.pi * spec.ell))
            * np.sqrt(masses)
            * np.exp(-spec.gamma * spec.ell * spec.delta * masses))
    return pref / right, pref / left


def mass_ode_rhs(config, params):
    """Cyclic mass-flux balance dm/dt of the reduced ODE; sums to zero."""
    if config.k == 1:
        return np.zeros(1)
    phi_r, phi_l = _all_rates(config.centers, config.masses, params)
    m = config.masses
    out = (np.roll(phi_r * m, 1) + np.roll(phi_l * m, -1) - (phi_r + phi_l) * m)
    scale = max(float(np.max(np.abs(phi_r * m) + np.abs(phi_l * m))), 1.0)
    assert abs(float(np.sum(out))) < 1e-13 * scale
    return out


@dataclass
class ReducedEvent:
    """One topological event (merge or dissolution) of the reduced model."""

    time: float
    kind: str
    participants: tuple
    masses_before: tuple
    masses_after: tuple


@dataclass
class Segment:
    """One smooth piece of a reduced trajectory between events."""

    times: np.ndarray
    centers: np.ndarray   # (K, T)
    masses: np.ndarray    # (K, T)
    labels: tuple
    extrapolated: bool = False


@dataclass
class ReducedTrajectory:
    """Piecewise trajectory of the reduced model."""

    segments: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final_config: ClusterConfiguration = None

    def mass_series(self, label):
        """Concatenated (t, mass) series of one cluster label."""
        ts, ms = [], []
        for seg in self.segments:
            if label in seg.labels:
                i = seg.labels.index(label)
                ts.append(seg.times)
                ms.append(seg.masses[i])
        if not ts:
            raise KeyError(f"unknown cluster label {label!r}")
        return np.concatenate(ts), np.concatenate(ms)

    @property
    def labels(self):
        return self.segments[0].labels if self.segments else ()

    def first_dissolution(self):
        """(time, label) of the first dissolution event, or None."""
        for ev in self.events:
            if ev.kind == "dissolve":
                return ev.time, ev.participants[0]
        return None

    def records(self):
        """Flat (t, label, center, mass, event) rows for CSV export."""
        rows = []
        ev_by_time = {(ev.time, lab): ev.kind for ev in self.events
                      for lab in ev.participants}
        for seg in self.segments:
            for it, t in enumerate(seg.times):
                for ic, lab in enumerate(seg.labels):
                    rows.append((t, lab, seg.centers[ic, it], seg.masses[ic, it],
                                 ev_by_time.get((t, lab), "none")))
        return rows


def _dissolve(centers, masses, labels, j, params, time, events):
    """Remove cluster j, moving its residual mass to the two neighbours
    proportionally to the outgoing (i.e. neighbour-incoming) rates."""
    k = len(centers)
    masses_before = tuple(masses)
    residual = masses[j]
    if k > 1:
        phi_r, phi_l = _all_rates(centers, masses, params)
        tot = phi_r[j] + phi_l[j]
        frac_r = phi_r[j] / tot if tot > 0 else 0.5
        masses = masses.copy()
        masses[(j + 1) % k] += residual * frac_r
        masses[(j - 1) % k] += residual * (1.0 - frac_r)
    centers = np.delete(centers, j)
    new_masses = np.delete(masses, j)
    events.append(ReducedEvent(
        time=time, kind="dissolve", participants=(labels[j],),
        masses_before=masses_before, masses_after=tuple(new_masses)))
    labels = labels[:j] + labels[j + 1:]
    return centers, new_masses, labels


def _merge_contacts(centers, masses, labels, merge_distance, time, events):
    """Merge every cyclically adjacent pair within the merge distance,
    cascading until all gaps exceed it."""
    while len(centers) >= 2:
        k = len(centers)
        gaps = d_dir(centers, np.roll(centers, -1))
        touching = np.flatnonzero(gaps <= merge_distance)
        if touching.size == 0:
            break
        j = int(touching[np.argmin(gaps[touching])])
        jn = (j + 1) % k
        m1, m2 = masses[j], masses[jn]
        new_center = (centers[j] + gaps[j] * m2 / (m1 + m2)) % 1.0
        keep = labels[j] if m1 >= m2 else labels[jn]
        masses_before = tuple(masses)
        new_centers = np.delete(centers, [j, jn])
        new_masses = np.delete(masses, [j, jn])
        order = np.argsort(np.append(new_centers, new_center))
        centers = np.append(new_centers, new_center)[order]
        appended = np.append(new_masses, m1 + m2)
        events.append(ReducedEvent(
            time=time, kind="merge", participants=(labels[j], labels[jn]),
            masses_before=masses_before,
            masses_after=tuple(appended[order])))
        labels = tuple(np.asarray(
            [lab for i, lab in enumerate(labels) if i not in (j, jn)] + [keep],
            dtype=object)[order])
        masses = appended[order]
    return centers, masses, labels


def integrate_mass_ode(config0, params, t_end, max_points=2000):
    """Integrate the mass ODE with frozen centers up to ``t_end``.

    Dissolution events (mass hitting the dissolution threshold) remove
    the cluster, redistribute its residual mass to the neighbours and
    restart the integration.  Segments after the first dissolution are
    flagged as extrapolated: the reduced model is only quantitative up
    to that event.
    """
    params.check_geometry(config0)
    eps = params.dissolve_mass
    events = []
    segments = []
    centers, masses, labels = (config0.centers.copy(), config0.masses.copy(),
                               config0.labels)
    centers, masses, labels = _merge_contacts(
        centers, masses, labels, params.merge_distance, config0.time, events)
    t = config0.time
    dissolved = False
    while t < t_end:
        k = len(centers)
        if k == 1:
            ts = np.array([t, t_end])
            segments.append(Segment(
                times=ts, centers=np.tile(centers[:, None], (1, 2)),
                masses=np.tile(masses[:, None], (1, 2)), labels=labels,
                extrapolated=dissolved))
            t = t_end
            break
        # dissolve anything already at/below threshold before integrating
        low = np.flatnonzero(masses <= eps)
        if low.size:
            centers, masses, labels = _dissolve(
                centers, masses, labels, int(low[0]), params, t, events)
            dissolved = True
            continue
        frozen = centers.copy()

        def rhs(_t, m):
            cfg = ClusterConfiguration.__new__(ClusterConfiguration)
            cfg.centers, cfg.masses, cfg.labels = frozen, m, labels
            cfg.n_particles, cfg.time = None, _t
            return mass_ode_rhs(cfg, params)

        def make_event(j):
            def ev(_t, m):
                return m[j] - eps
            ev.terminal = True
            ev.direction = -1.0
            return ev

        sol = solve_ivp(rhs, (t, t_end), masses, method="LSODA",
                        rtol=1e-8, atol=1e-12,
                        events=[make_event(j) for j in range(k)])
        if not sol.success:
            raise StepFailureError(f"mass ODE integration failed: {sol.message}")
        ts, ys = _thin(sol.t, sol.y, max_points)
        segments.append(Segment(
            times=ts, centers=np.tile(frozen[:, None], (1, len(ts))),
            masses=ys, labels=labels, extrapolated=dissolved))
        t = float(sol.t[-1])
        masses = sol.y[:, -1].copy()
        hit = [j for j in range(k) if len(sol.t_events[j])]
        if hit:
            centers, masses, labels = _dissolve(
                centers, masses, labels, hit[0], params, t, events)
            dissolved = True
        elif t >= t_end:
            break
    final = ClusterConfiguration(centers=centers, masses=masses,
                                 labels=labels, time=t,
                                 n_particles=config0.n_particles)
    return ReducedTrajectory(segments=segments, events=events, final_config=final)


def _thin(ts, ys, max_points):
    if len(ts) <= max_points:
        return ts, ys
    idx = np.unique(np.linspace(0, len(ts) - 1, max_points).astype(int))
    return ts[idx], ys[:, idx]


def heavy_bm_step(config, params, dt, rng):
    """Move every center by a heavy-Brownian increment and resolve merges."""
    if config.n_particles is None:
        raise ValueError("heavy_bm_step needs n_particles")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cfg, _ = _heavy_bm_move(config, params, dt, rng, [])
    return cfg


def _heavy_bm_move(config, params, dt, rng, events, time_advance=None):
    """Center noise over dt; ``time_advance`` overrides the clock increment
    (zero when the mass update of the same split step already advanced it)."""
    if time_advance is None:
        time_advance = dt
    std = np.sqrt(2.0 * dt / (config.n_particles * config.masses))
    centers = (config.centers + std * rng.standard_normal(config.k)) % 1.0
    order = np.argsort(centers, kind="stable")
    centers = centers[order]
    masses = config.masses[order]
    labels = tuple(np.asarray(config.labels, dtype=object)[order])
    n_before = len(events)
    centers, masses, labels = _merge_contacts(
        centers, masses, labels, params.merge_distance,
        config.time + time_advance, events)
    cfg = ClusterConfiguration(centers=centers, masses=masses,
                               n_particles=config.n_particles,
                               time=config.time + time_advance, labels=labels)
    return cfg, len(events) > n_before


def gillespie_step(config, params, rng):
    """One jump of the mass-exchange Markov chain.

    Particle-level jump rates follow the reaction-rate picture: cluster
    j sends single particles right at rate M^(j) phi^(r)_j and left at
    rate M^(j) phi^(l)_j, so the expected drift of M/N matches the mass
    ODE exactly.
    """
    if config.k == 1:
        raise AbsorbedError("single cluster is absorbing")
    n = config.n_particles
    if n is None:
        raise ValueError("gillespie_step needs n_particles")
    counts = np.rint(config.masses * n).astype(np.int64)
    phi_r, phi_l = _all_rates(config.centers, config.masses, params)
    rates = np.concatenate([counts * phi_r, counts * phi_l])
    total = float(np.sum(rates))
    tau = rng.exponential(1.0 / total)
    pick = np.searchsorted(np.cumsum(rates), rng.random() * total)
    k = config.k
    j = pick % k
    target = (j + 1) % k if pick < k else (j - 1) % k
    counts[j] -= 1
    counts[target] += 1
    centers, labels = config.centers, config.labels
    if counts[j] == 0:
        centers = np.delete(centers, j)
        counts = np.delete(counts, j)
        labels = labels[:j] + labels[j + 1:]
    new = ClusterConfiguration(centers=centers, masses=counts / n,
                               n_particles=n, time=config.time + tau,
                               labels=labels)
    return tau, new


def _support_breakpoints(spec):
    """Positive kink locations of W inside its support, ending at the radius."""
    fam = spec.family
    if hasattr(fam, "a"):
        return np.array([fam.a * spec.ell, spec.radius])
    if hasattr(fam, "xs"):
        xs = np.asarray(fam.xs)
        return xs[xs > 1e-15] * spec.ell
    return np.array([spec.radius])


def v_eff(x, config, spec, mode="full"):
    """Effective potential felt by a tagged particle among fixed clusters.

    ``full`` convolves W with the periodised Gaussian profile of every
    cluster; ``quadratic`` uses the nearest cluster's parabolic
    approximation -gamma ell Delta m + (x - X)^2 / (2 sigma^2) + 1/2.
    """
    x = np.asarray(x, dtype=float)
    if spec.gamma == 0.0:
        return np.zeros_like(x) if x.ndim else 0.0
    sigmas = np.array([sigma_cluster(spec, m) for m in config.masses])
    if mode == "quadratic":
        dist = wrap(x[..., None] - config.centers)
        nearest = np.argmin(np.abs(dist), axis=-1)
        m = config.masses[nearest]
        s2 = sigmas[nearest] ** 2
        d = np.take_along_axis(dist, nearest[..., None], axis=-1)[..., 0]
        val = (-spec.gamma * spec.ell * spec.delta * m + d * d / (2.0 * s2) + 0.5)
        return val if x.ndim else float(val)
    if mode != "full":
        raise ValueError(f"unknown v_eff mode {mode!r}")
    val = _v_eff_full(np.atleast_1d(x), config, spec)
    return val.reshape(x.shape) if x.ndim else float(val[0])


def _v_eff_full(xs, config, spec, tol=1e-9):
    """Quadrature convolution of W with periodised cluster Gaussians."""
    sigmas = np.array([sigma_cluster(spec, m) for m in config.masses])
    n_img = int(math.ceil(6.0 * float(np.max(sigmas)))) + 2
    imgs = np.arange(-n_img, n_img + 1)
    pieces = np.concatenate([[0.0], _support_breakpoints(spec)])
    prev = None
    refine = 1
    for _ in range(6):
        nodes, weights = _composite_gl(pieces, float(np.min(sigmas)) / (2 * refine))
        w_vals = spec.W(nodes)                 # symmetric kernel
        # g_per(x - u - X_k) summed over images, for +u and -u node sets
        out = np.zeros(len(xs))
        for k in range(config.k):
            s = sigmas[k]
            for sign in (1.0, -1.0):
                arg = (xs[:, None] - sign * nodes[None, :] - config.centers[k])
                dens = np.zeros_like(arg)
                for n in imgs:
                    dens += np.exp(-0.5 * ((arg + n) / s) ** 2)
                dens /= s * math.sqrt(2.0 * math.pi)
                out += config.masses[k] * (dens @ (weights * w_vals))
        if prev is not None and float(np.max(np.abs(out - prev))) <= tol * max(
                spec.gamma * spec.ell, 1.0):
            return out
        prev = out
        refine *= 2
    return prev


def _composite_gl(pieces, target_h):
    """Composite 10-point Gauss-Legendre nodes/weights on [0, max(pieces)]."""
    gx, gw = np.polynomial.legendre.leggauss(10)
    nodes, weights = [], []
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        n_pan = max(int(math.ceil((hi - lo) / max(target_h, 1e-12))), 1)
        edges = np.linspace(lo, hi, n_pan + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            nodes.append(0.5 * (a + b) + half * gx)
            weights.append(half * gw)
    return np.concatenate(nodes), np.concatenate(weights)


def mfpt_eyring_kramers(j, config, spec):
    """Closed-form Eyring-Kramers mean first-passage time of cluster j's mass."""
    x = config.centers[j]
    d_plus = d_dir(x, config.centers[(j + 1) % config.k])
    d_minus = d_dir(config.centers[(j - 1) % config.k], x)
    lp = d_plus - 2.0 * spec.radius
    lm = d_minus - 2.0 * spec.radius
    if lp <= 0.0 or lm <= 0.0:
        raise GeometryError("gap within interaction range")
    m = config.masses[j]
    pref = lp * lm / (lp + lm + 2.0 * spec.radius)
    return pref * math.sqrt(
        2.0 * math.pi * spec.ell / (math.e * spec.gamma * spec.wpp0 * m)) \
        * math.exp(spec.gamma * spec.ell * spec.delta * m)


def _unwrapped_neighbours(j, config):
    """Positions (X_{j-1}, X_j, X_{j+1}) lifted to the real line around X_j."""
    x = config.centers[j]
    xl = x - d_dir(config.centers[(j - 1) % config.k], x)
    xr = x + d_dir(x, config.centers[(j + 1) % config.k])
    return xl, x, xr


def _mfpt_profile(xs, v_vals):
    """Exact MFPT profile u on a grid from potential samples (generator
    d^2/dx^2 - V' d/dx, absorbing ends), via shifted cumulative trapezoids."""
    c = float(np.max(v_vals))
    d = float(np.min(v_vals))
    ea = np.exp(v_vals - c)
    eb = np.exp(-(v_vals - d))
    dx = np.diff(xs)
    i2 = np.concatenate([[0.0], np.cumsum(0.5 * dx * (eb[1:] + eb[:-1]))])
    i1 = np.concatenate([[0.0], np.cumsum(0.5 * dx * (ea[1:] + ea[:-1]))])
    prod = ea * i2
    jint = np.concatenate([[0.0], np.cumsum(0.5 * dx * (prod[1:] + prod[:-1]))])
    return math.exp(c - d) * (-jint + i1 * (jint[-1] / i1[-1]))


def mfpt_quadrature_oracle(j, config, spec, a=None, b=None, n_grid=4096):
    """Mean first-passage time of a tagged particle from X^(j) to (a, b).

    Brute-force evaluation of the exact two-boundary solution with the
    full effective potential; overflow is avoided by shifting all
    exponentials by the extrema of V_eff.  Defaults place a and b at
    the near edges of the adjacent wells (one interaction radius from
    the neighbouring centers).
    """
    xl, x, xr = _unwrapped_neighbours(j, config)
    if a is None:
        a = xl + spec.radius
    if b is None:
        b = xr - spec.radius
    if not a < x < b:
        raise ValueError("need a < X^(j) < b")
    xs = np.linspace(a, b, n_grid + 1)
    v_vals = v_eff(xs, config, spec, mode="full")
    u_fine = np.interp(x, xs, _mfpt_profile(xs, v_vals))
    u_coarse = np.interp(x, xs[::2], _mfpt_profile(xs[::2], v_vals[::2]))
    if abs(u_fine - u_coarse) > 1e-6 * abs(u_fine):
        xs2 = np.linspace(a, b, 4 * n_grid + 1)
        v2 = v_eff(xs2, config, spec, mode="full")
        u_finer = np.interp(x, xs2, _mfpt_profile(xs2, v2))
        if abs(u_finer - u_fine) > 1e-6 * abs(u_finer):
            raise QuadratureError("MFPT quadrature failed to converge")
        return float(u_finer)
    return float(u_fine)


def exit_probability(j, config, spec, method="closed", a=None, b=None,
                     n_grid=4096):
    """Probability that cluster j's escaping particle exits left (toward
    X^(j-1) / boundary a) before exiting right."""
    xl, x, xr = _unwrapped_neighbours(j, config)
    if method == "closed":
        num = (xr - x) - 2.0 * spec.radius
        den = (xr - xl) - 4.0 * spec.radius
        if num <= 0.0 or den <= num:
            raise GeometryError("gap within interaction range")
        return num / den
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if a is None:
        a = xl + spec.radius
    if b is None:
        b = xr - spec.radius
    xs = np.linspace(a, b, n_grid + 1)
    v_vals = v_eff(xs, config, spec, mode="full")
    ea = np.exp(v_vals - float(np.max(v_vals)))
    dx = np.diff(xs)
    i1 = np.concatenate([[0.0], np.cumsum(0.5 * dx * (ea[1:] + ea[:-1]))])
    return float((i1[-1] - np.interp(x, xs, i1)) / i1[-1])


def run_reduced(config0, params, t_end, mode="ode", rng=None, dt=None,
                record_stride=1):
    """Run the reduced model in one of its three coupling modes.

    ``ode`` freezes the centers and integrates the mass ODE;
    ``ode+bm`` couples it to heavy-Brownian center motion on a fixed
    time grid; ``gillespie+bm`` replaces the ODE by the jump chain,
    interleaving jumps with center moves.
    """
    if mode == "ode":
        return integrate_mass_ode(config0, params, t_end)
    if mode not in ("ode+bm", "gillespie+bm"):
        raise ValueError(f"unknown mode {mode!r}")
    if config0.n_particles is None:
        raise ValueError(f"mode {mode!r} needs n_particles")
    if rng is None:
        rng = np.random.default_rng()
    params.check_geometry(config0)
    if dt is None:
        dt = (config0.n_particles * float(np.min(config0.masses))
              * params.merge_distance**2 / 50.0)
        dt = min(dt, t_end / 100.0)
    events = []
    traj = ReducedTrajectory(events=events)
    cfg = config0
    recorder = _SegmentRecorder(traj, cfg, extrapolated=False)
    step = 0
    while cfg.time < t_end - 1e-15 and cfg.k >= 1:
        topo_changed = False
        if cfg.k >= 2:
            if mode == "ode+bm":
                cfg, dissolved = _masses_rk4(cfg, params, dt, events)
                topo_changed |= dissolved
            else:
                cfg, changed = _gillespie_window(cfg, params, dt, rng, events)
                topo_changed |= changed
            cfg, merged = _heavy_bm_move(cfg, params, dt, rng, events,
                                         time_advance=0.0)
            topo_changed |= merged
        else:
            cfg = ClusterConfiguration(
                centers=cfg.centers, masses=cfg.masses, labels=cfg.labels,
                n_particles=cfg.n_particles, time=cfg.time + dt)
        step += 1
        if topo_changed:
            recorder.flush()
            recorder = _SegmentRecorder(
                traj, cfg,
                extrapolated=any(e.kind == "dissolve" for e in events))
        elif step % record_stride == 0:
            recorder.push(cfg)
    recorder.flush()
    traj.final_config = cfg
    return traj


def _masses_rk4(cfg, params, dt, events):
    """One fixed RK4 substep of the mass ODE, with dissolution check."""
    def f(m):
        c = ClusterConfiguration.__new__(ClusterConfiguration)
        c.centers, c.masses, c.labels = cfg.centers, m, cfg.labels
        c.n_particles, c.time = None, cfg.time
        return mass_ode_rhs(c, params)

    m = cfg.masses
    k1 = f(m)
    k2 = f(m + 0.5 * dt * k1)
    k3 = f(m + 0.5 * dt * k2)
    k4 = f(m + dt * k3)
    m_new = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    centers, labels = cfg.centers.copy(), cfg.labels
    dissolved = False
    while len(m_new) > 1 and np.any(m_new <= params.dissolve_mass):
        j = int(np.argmin(m_new))
        centers, m_new, labels = _dissolve(
            centers, m_new, labels, j, params, cfg.time + dt, events)
        dissolved = True
    return ClusterConfiguration(centers=centers, masses=m_new, labels=labels,
                                n_particles=cfg.n_particles,
                                time=cfg.time + dt), dissolved


def _gillespie_window(cfg, params, dt, rng, events):
    """Process all jump-chain events inside one window of length dt."""
    remaining = dt
    changed = False
    base_time = cfg.time
    while cfg.k >= 2:
        k_before = cfg.k
        masses_before = tuple(cfg.masses)
        try:
            tau, nxt = gillespie_step(cfg, params, rng)
        except AbsorbedError:
            break
        if tau > remaining:
            break
        remaining -= tau
        if nxt.k < k_before:
            gone = set(cfg.labels) - set(nxt.labels)
            events.append(ReducedEvent(
                time=nxt.time, kind="dissolve", participants=tuple(gone),
                masses_before=masses_before, masses_after=tuple(nxt.masses)))
            changed = True
        cfg = nxt
    return ClusterConfiguration(centers=cfg.centers, masses=cfg.masses,
                                labels=cfg.labels, n_particles=cfg.n_particles,
                                time=base_time + dt), changed


class _SegmentRecorder:
    """Accumulates per-step states of a fixed label set into a Segment."""

    def __init__(self, traj, cfg, extrapolated):
        self.traj = traj
        self.labels = cfg.labels
        self.extrapolated = extrapolated
        self.times = [cfg.time]
        self.centers = [cfg.centers.copy()]
        self.masses = [cfg.masses.copy()]

    def push(self, cfg):
        self.times.append(cfg.time)
        self.centers.append(cfg.centers.copy())
        self.masses.append(cfg.masses.copy())

    def flush(self):
        self.traj.segments.append(Segment(
            times=np.asarray(self.times),
            centers=np.asarray(self.centers).T,
            masses=np.asarray(self.masses).T,
            labels=self.labels, extrapolated=self.extrapolated))
