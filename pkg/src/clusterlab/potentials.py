"""Attractive interaction potentials on the 1-D torus.

A potential is built from a compactly supported, even shape function
``w`` with ``w(x) = 0`` for ``|x| >= s_w`` and its minimum at the
origin.  The rescaled pair potential used everywhere else is

    W_{gamma, ell}(x) = gamma * ell * w(x / ell),

extended 1-periodically.  The rescaling keeps the interaction range
``s_w * ell`` inside half the torus so the periodic extension is
unambiguous.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import PotentialError

#: Half-width below which two torus points are considered identical.
_EDGE_TOL = 1e-12


def wrap(x):
    """Map torus coordinates to the fundamental domain [-1/2, 1/2)."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)


@dataclass(frozen=True)
class HegselmannKrause:
    """Smoothed Hegselmann-Krause shape w(x) = (x^2 - 1)/2 on |x| <= 1."""

    @property
    def s_w(self):
        return 1.0

    @property
    def delta(self):
        return 0.5

    @property
    def wpp0(self):
        return 1.0

    @property
    def w_lipschitz(self):
        """Lipschitz constant of w' inside the support."""
        return 1.0

    @property
    def integral(self):
        """Integral of w over its support."""
        return -2.0 / 3.0

    def w(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 1.0
        return np.where(inside, 0.5 * (x * x - 1.0), 0.0)

    def w_prime(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < 1.0
        return np.where(inside, x, 0.0)


@dataclass(frozen=True)
class PiecewiseParabolic:
    """Two-piece parabolic well with curvatures ``alpha`` (inner, |x| <= a)
    and ``beta`` (outer, a < |x| <= 1), continuous at the joints."""

    alpha: float
    beta: float
    a: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise PotentialError("curvatures alpha and beta must be positive")
        if not 0.0 < self.a < 1.0:
            raise PotentialError("inner radius a must lie in (0, 1)")

    @property
    def s_w(self):
        return 1.0

    @property
    def delta(self):
        a2 = self.a * self.a
        return 0.5 * (self.alpha * a2 + self.beta * (1.0 - a2))

    @property
    def wpp0(self):
        return self.alpha

    @property
    def w_lipschitz(self):
        return max(self.alpha, self.beta)

    @property
    def integral(self):
        a3 = self.a**3
        return -(2.0 / 3.0) * (self.alpha * a3 + self.beta * (1.0 - a3))

    def w(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        a2 = self.a * self.a
        inner = 0.5 * self.alpha * (x * x - a2) + 0.5 * self.beta * (a2 - 1.0)
        outer = 0.5 * self.beta * (x * x - 1.0)
        return np.where(ax <= self.a, inner, np.where(ax <= 1.0, outer, 0.0))

    def w_prime(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        return np.where(
            ax <= self.a, self.alpha * x,
            np.where(ax < 1.0, self.beta * x, 0.0))


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear shape interpolating user samples of w.

    ``xs`` must be a strictly increasing, symmetric grid covering the
    support; ``ws`` the matching samples.  The curvature at the origin
    cannot be inferred from a piecewise-linear table, so ``wpp0`` is
    supplied by the user.
    """

    xs: tuple
    ws: tuple
    wpp0: float

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ws = np.asarray(self.ws, dtype=float)
        if xs.ndim != 1 or xs.size < 3 or xs.shape != ws.shape:
            raise PotentialError("need matching 1-D sample arrays, >= 3 points")
        if not np.all(np.diff(xs) > 0):
            raise PotentialError("sample grid must be strictly increasing")
        if not np.allclose(xs, -xs[::-1], atol=_EDGE_TOL):
            raise PotentialError("sample grid must be symmetric about 0")
        if not np.allclose(ws, ws[::-1], atol=_EDGE_TOL):
            raise PotentialError("shape function must be even")
        if np.any(ws > _EDGE_TOL):
            raise PotentialError("shape function must be nonpositive")
        if abs(ws[0]) > _EDGE_TOL or abs(ws[-1]) > _EDGE_TOL:
            raise PotentialError("shape function must vanish at the support edge")
        half = ws[xs >= -_EDGE_TOL]
        if np.any(np.diff(half) < -_EDGE_TOL):
            raise PotentialError("shape function must be nondecreasing away from 0")
        if not self.wpp0 > 0.0:
            raise PotentialError("origin curvature wpp0 must be positive")
        object.__setattr__(self, "xs", tuple(float(v) for v in xs))
        object.__setattr__(self, "ws", tuple(float(v) for v in ws))

    @property
    def s_w(self):
        return self.xs[-1]

    @property
    def delta(self):
        return -min(self.ws)

    @property
    def w_lipschitz(self):
        xs = np.asarray(self.xs)
        slopes = np.diff(self.ws) / np.diff(xs)
        return float(np.max(np.abs(np.diff(slopes)) / (0.5 * (np.diff(xs)[1:] + np.diff(xs)[:-1]))))

    @property
    def integral(self):
        return float(np.trapezoid(self.ws, self.xs))

    def w(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.xs, self.ws, left=0.0, right=0.0)

    def w_prime(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.asarray(self.xs)
        slopes = np.append(np.diff(self.ws) / np.diff(xs), 0.0)
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1)
        return np.where(np.abs(x) < self.s_w, slopes[idx], 0.0)


def tabulated_from_csv(path, wpp0):
    """Load a :class:`Tabulated` shape from a two-column (x, w) CSV file."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise PotentialError("tabulated potential file must have two columns")
    return Tabulated(xs=tuple(data[:, 0]), ws=tuple(data[:, 1]), wpp0=float(wpp0))


@dataclass(frozen=True)
class PotentialSpec:
    """Rescaled interaction W_{gamma, ell} on the torus.

    ``gamma`` is the interaction strength, ``ell`` the interaction
    range; ``ell * s_w`` may not exceed half the torus length.
    """

    family: object
    gamma: float
    ell: float

    def __post_init__(self):
        if not self.gamma >= 0.0:
            raise PotentialError("gamma must be nonnegative")
        if not self.ell > 0.0:
            raise PotentialError("ell must be positive")
        if self.ell * self.family.s_w > 0.5 + _EDGE_TOL:
            raise PotentialError(
                "interaction radius ell * s_w must not exceed half the torus")

    @property
    def s_w(self):
        return self.family.s_w

    @property
    def delta(self):
        """Well depth Delta = -w(0) of the shape function."""
        return self.family.delta

    @property
    def wpp0(self):
        """Curvature w''(0) of the shape function at the origin."""
        return self.family.wpp0

    @property
    def radius(self):
        """Interaction radius s_w * ell on the torus."""
        return self.family.s_w * self.ell

    def W(self, x):
        """Evaluate the 1-periodic rescaled potential."""
        return self.gamma * self.ell * self.family.w(wrap(x) / self.ell)

    def W_prime(self, x):
        """Evaluate the derivative of the 1-periodic rescaled potential."""
        return self.gamma * self.family.w_prime(wrap(x) / self.ell)


def eval_w(family, x):
    """Evaluate the shape function of a potential family."""
    return family.w(x)


def eval_w_prime(family, x):
    """Evaluate the derivative of the shape function."""
    return family.w_prime(x)


def _fourier_quadrature(spec, k):
    """Cosine transform of W by adaptive Gauss-Kronrod quadrature."""
    r = spec.radius
    gl = spec.gamma * spec.ell

    def f(x):
        return gl * spec.family.w(x / spec.ell)

    if k == 0.0:
        val, _ = integrate.quad(f, 0.0, r, epsabs=5e-13, epsrel=1e-12, limit=500)
    else:
        val, _ = integrate.quad(f, 0.0, r, weight="cos", wvar=k,
                                epsabs=5e-13, epsrel=1e-12, limit=500)
    return 2.0 * val


def fourier_W(spec, k, method="auto"):
    """Fourier cosine coefficient of W at wavenumber ``k``.

    Defined as the integral of W(x) * cos(k x) over one period.  For
    the Hegselmann-Krause family a closed form is used unless
    ``method='quadrature'`` forces the numerical path.
    """
    k = float(k)
    if method == "auto" and isinstance(spec.family, HegselmannKrause):
        if k == 0.0:
            return spec.gamma * spec.ell**2 * spec.family.integral
        kl = k * spec.ell
        return spec.gamma * (2.0 * np.cos(kl) / k**2
                             - 2.0 * np.sin(kl) / (k**3 * spec.ell))
    if k == 0.0:
        return spec.gamma * spec.ell**2 * spec.family.integral
    return _fourier_quadrature(spec, k)
