"""Evolving model manifolds.

Three closed-form families of metrics g(t) with dg/dt = -2 h(t):

* ``ScaledCircle``      g = c(t)^2 dtheta^2 on S^1,
* ``ConformalCircle``   g = exp(2 psi(t, theta)) dtheta^2 on S^1,
* ``ShrinkingSphere2``  g = (1 - 2t) g_round on S^2 (Ricci flow, blow-up at 1/2),

each optionally weighted by a potential phi(t, .) through the measure
mu_t = exp(-phi) vol_t.  All tensors (metric, h, Christoffels, Ricci,
Hessian of phi, the conjugation rate varrho = d_t phi + tr_g h) come from
exact coefficient series, and the scalar envelopes K, K1, K2, kappa,
sup varrho^+/- feeding the inequality constants are extracted here.

Conventions: chart coordinates are ``theta`` in [0, 2 pi) for circles and
``(theta, phi_az)`` polar/azimuth for the sphere; tensors are returned as
matrices over the trailing coordinate axes and all evaluators broadcast
over leading axes of the coordinate array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ChartError, SingularMetric, TimeOutOfRange
from .series import CosSeriesZ, TimePoly, TrigSeries

__all__ = [
    "Point",
    "EvolvingModel",
    "ScaledCircle",
    "ConformalCircle",
    "ShrinkingSphere2",
    "BoundProfile",
    "metric_at",
    "metric_h_at",
    "christoffel",
    "ricci",
    "hess_phi",
    "grad_phi",
    "varrho",
    "distance",
    "measure_mu",
    "ball_volume",
    "bound_profile",
]

TWO_PI = 2.0 * np.pi

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def gauss_panels(fn, a, b, panels=8):
    """Composite 32-point Gauss-Legendre quadrature of a vectorized fn."""
    if b <= a:
        return 0.0
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    v = np.asarray(fn(x.ravel()), dtype=float).reshape(x.shape)
    return float(np.sum(v * (_GL_WEIGHTS[None, :] * half[:, None])))


def golden_min(fn, a, b, tol=1e-6, maxiter=200):
    """Golden-section minimum of a scalar function on [a, b]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    it = 0
    while (b - a) > tol and it < maxiter:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fn(x2)
        it += 1
    xm = 0.5 * (a + b)
    return xm, fn(xm)


@dataclass(frozen=True)
class Point:
    """Chart coordinates of a point: (theta,) on circles, (theta, phi_az) on the sphere."""

    coords: tuple
    chart: str = "default"


def coords_of(x):
    if isinstance(x, Point):
        return np.asarray(x.coords, dtype=float)
    arr = np.asarray(x, dtype=float)
    return arr.reshape(1) if arr.ndim == 0 else arr


def _as_series(spec, cls):
    if spec is None:
        return None
    if isinstance(spec, cls):
        return spec
    if cls is TrigSeries and isinstance(spec, dict):
        return TrigSeries(spec.get("cos"), spec.get("sin"))
    if cls is CosSeriesZ:
        if isinstance(spec, dict):
            return CosSeriesZ(spec.get("cos"))
        return CosSeriesZ(spec)
    raise TypeError(f"cannot build {cls.__name__} from {type(spec).__name__}")


class EvolvingModel:
    """Base class; subclasses supply the tensor evaluators."""

    kind = "base"
    dim = 1

    def __init__(self, T):
        self.T = float(T)
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    # -- validation ---------------------------------------------------
    def check_time(self, t):
        if not (0.0 <= t < self.T):
            raise TimeOutOfRange(f"t={t} outside [0, {self.T})")

    def check_coords(self, coords):
        if np.asarray(coords).shape[-1] != self.dim:
            raise ChartError(f"expected {self.dim} coordinate(s)")

    # -- derived quantities shared by the subclasses -------------------
    def dt_metric(self, t, coords, zrow=None):
        return -2.0 * self.metric_h(t, coords, zrow)

    def mu_density(self, t, coords, zrow=None):
        """Density of mu_t = exp(-phi) vol_t with respect to the chart Lebesgue measure."""
        return np.exp(-self.phi_val(t, coords, zrow)) * self.sqrt_det_g(t, coords)

    def varrho(self, t, coords, zrow=None):
        return self.dt_phi(t, coords, zrow) + self.trace_h(t, coords)

    def grad_phi(self, t, coords, zrow=None):
        dph = self.dphi(t, coords, zrow)
        ginv = self.inv_metric(t, coords)
        return np.einsum("...ij,...j->...i", ginv, dph)

    def grid(self, n):
        """Spatial sample grid used for envelope extremization."""
        raise NotImplementedError


class ScaledCircle(EvolvingModel):
    """g = c(t)^2 dtheta^2 with c a polynomial in t."""

    kind = "scaled_circle"
    dim = 1

    def __init__(self, c=(1.0,), phi=None, T=1.0):
        super().__init__(T)
        self.c = TimePoly(c)
        self.phi = _as_series(phi, TrigSeries)
        ts = np.linspace(0.0, self.T * (1 - 1e-12), 64)
        if np.any(self.c(ts) <= 0.0):
            raise SingularMetric("scale c(t) must stay positive on [0, T)")

    def _G(self, t, coords):
        c = self.c(t)
        if c <= 0.0:
            raise SingularMetric(f"scale c({t}) <= 0")
        th = coords[..., 0]
        return np.broadcast_to(c * c, th.shape).copy()

    def metric(self, t, coords, zrow=None):
        return self._G(t, coords)[..., None, None]

    def inv_metric(self, t, coords):
        return 1.0 / self.metric(t, coords)

    def metric_h(self, t, coords, zrow=None):
        # h = -1/2 d/dt (c^2) = -c c'
        th = coords[..., 0]
        val = -self.c(t) * self.c.dt(t)
        return np.broadcast_to(val, th.shape)[..., None, None].copy()

    def sqrt_det_g(self, t, coords):
        return np.sqrt(self._G(t, coords))

    def christoffel(self, t, coords):
        th = coords[..., 0]
        return np.zeros(th.shape + (1, 1, 1))

    def ricci(self, t, coords):
        th = coords[..., 0]
        return np.zeros(th.shape + (1, 1))

    def trace_h(self, t, coords):
        th = coords[..., 0]
        return np.broadcast_to(-self.c.dt(t) / self.c(t), th.shape).copy()

    # potential -------------------------------------------------------
    def phi_val(self, t, coords, zrow=None):
        th = coords[..., 0]
        return self.phi.val(t, th) if self.phi else np.zeros(th.shape)

    def dt_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        return self.phi.dt(t, th) if self.phi else np.zeros(th.shape)

    def dphi(self, t, coords, zrow=None):
        th = coords[..., 0]
        d = self.phi.dth(t, th) if self.phi else np.zeros(th.shape)
        return d[..., None]

    def hess_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape + (1, 1))
        return self.phi.dthth(t, th)[..., None, None]

    def dvarrho(self, t, coords, zrow=None):
        th = coords[..., 0]
        d = self.phi.dt_dth(t, th) if self.phi else np.zeros(th.shape)
        return d[..., None]

    def distance(self, t, x, y):
        dth = np.abs((coords_of(x)[0] - coords_of(y)[0]) % TWO_PI)
        return self.c(t) * min(dth, TWO_PI - dth)

    def grid(self, n):
        return np.linspace(0.0, TWO_PI, n, endpoint=False)[:, None]


class ConformalCircle(EvolvingModel):
    """g = exp(2 psi(t, theta)) dtheta^2 with psi a trig series in theta, polynomial in t."""

    kind = "conformal_circle"
    dim = 1

    def __init__(self, psi, phi=None, T=1.0):
        super().__init__(T)
        self.psi = _as_series(psi, TrigSeries) or TrigSeries()
        self.phi = _as_series(phi, TrigSeries)

    def _psi(self, t, coords):
        return self.psi.val(t, coords[..., 0])

    def metric(self, t, coords, zrow=None):
        return np.exp(2.0 * self._psi(t, coords))[..., None, None]

    def inv_metric(self, t, coords):
        return np.exp(-2.0 * self._psi(t, coords))[..., None, None]

    def metric_h(self, t, coords, zrow=None):
        # dg/dt = 2 psi_t g, so h = -psi_t g
        th = coords[..., 0]
        return (-self.psi.dt(t, th) * np.exp(2.0 * self.psi.val(t, th)))[..., None, None]

    def sqrt_det_g(self, t, coords):
        return np.exp(self._psi(t, coords))

    def christoffel(self, t, coords):
        return self.psi.dth(t, coords[..., 0])[..., None, None, None]

    def ricci(self, t, coords):
        th = coords[..., 0]
        return np.zeros(th.shape + (1, 1))

    def trace_h(self, t, coords):
        return -self.psi.dt(t, coords[..., 0])

    def phi_val(self, t, coords, zrow=None):
        th = coords[..., 0]
        return self.phi.val(t, th) if self.phi else np.zeros(th.shape)

    def dt_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        return self.phi.dt(t, th) if self.phi else np.zeros(th.shape)

    def dphi(self, t, coords, zrow=None):
        th = coords[..., 0]
        d = self.phi.dth(t, th) if self.phi else np.zeros(th.shape)
        return d[..., None]

    def hess_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape + (1, 1))
        h = self.phi.dthth(t, th) - self.psi.dth(t, th) * self.phi.dth(t, th)
        return h[..., None, None]

    def dvarrho(self, t, coords, zrow=None):
        th = coords[..., 0]
        d = -self.psi.dt_dth(t, th)
        if self.phi:
            d = d + self.phi.dt_dth(t, th)
        return d[..., None]

    def arc_length(self, t, a, b, panels=8):
        """Metric length of the positively oriented arc from angle a to angle b."""
        return gauss_panels(lambda th: np.exp(self.psi.val(t, th)), a, b, panels)

    def circumference(self, t):
        return self.arc_length(t, 0.0, TWO_PI, panels=16)

    def distance(self, t, x, y):
        a, b = coords_of(x)[0], coords_of(y)[0]
        fwd = (b - a) % TWO_PI
        plus = self.arc_length(t, a, a + fwd)
        return min(plus, self.circumference(t) - plus)

    def grid(self, n):
        return np.linspace(0.0, TWO_PI, n, endpoint=False)[:, None]


class ShrinkingSphere2(EvolvingModel):
    """Round 2-sphere under Ricci flow: g_t = (1 - 2t) g_round, blow-up at t = 1/2.

    The optional potential is a cosine series in the polar angle, expressed
    through z = cos(theta) so it stays smooth across the poles.  Tensor
    evaluators accept ``zrow``, the third row of a per-path chart rotation,
    so the path engine can move the chart away from the poles while the
    potential keeps its world-coordinate meaning.
    """

    kind = "shrinking_sphere2"
    dim = 2

    def __init__(self, phi=None, T=0.5, pole_margin=1e-3):
        if T > 0.5:
            raise ValueError("ShrinkingSphere2 blows up at t = 1/2; need T <= 0.5")
        super().__init__(T)
        self.phi = _as_series(phi, CosSeriesZ)
        if self.phi is not None and self.phi.is_zero:
            self.phi = None
        self.pole_margin = float(pole_margin)

    def check_coords(self, coords):
        super().check_coords(coords)
        th = np.asarray(coords)[..., 0]
        if np.any(th < self.pole_margin) or np.any(th > np.pi - self.pole_margin):
            raise ChartError("polar angle within pole-exclusion margin")

    def scale(self, t):
        a = 1.0 - 2.0 * t
        if a <= 0.0:
            raise SingularMetric(f"metric degenerate at t={t}")
        return a

    # -- embedding helpers ---------------------------------------------
    @staticmethod
    def embed(coords):
        th, ph = coords[..., 0], coords[..., 1]
        sth = np.sin(th)
        return np.stack([sth * np.cos(ph), sth * np.sin(ph), np.cos(th)], axis=-1)

    @staticmethod
    def polar_from_embed(e):
        z = np.clip(e[..., 2], -1.0, 1.0)
        return np.stack([np.arccos(z), np.arctan2(e[..., 1], e[..., 0]) % TWO_PI], axis=-1)

    def world_z(self, coords, zrow=None):
        if zrow is None:
            return np.cos(coords[..., 0])
        return np.einsum("...k,...k->...", zrow, self.embed(coords))

    def _z_partials(self, coords, zrow):
        """z and its first/second chart derivatives (dz_th, dz_ph, zthth, zthph, zphph)."""
        th, ph = coords[..., 0], coords[..., 1]
        if zrow is None:
            z = np.cos(th)
            zero = np.zeros_like(th)
            return z, -np.sin(th), zero, -z, zero, zero
        r1, r2, r3 = zrow[..., 0], zrow[..., 1], zrow[..., 2]
        sth, cth = np.sin(th), np.cos(th)
        cph, sph = np.cos(ph), np.sin(ph)
        z = r1 * sth * cph + r2 * sth * sph + r3 * cth
        dz_th = r1 * cth * cph + r2 * cth * sph - r3 * sth
        dz_ph = sth * (-r1 * sph + r2 * cph)
        zthth = -z
        zthph = cth * (-r1 * sph + r2 * cph)
        zphph = -(z - r3 * cth)
        return z, dz_th, dz_ph, zthth, zthph, zphph

    # -- tensors --------------------------------------------------------
    def round_metric(self, coords):
        th = coords[..., 0]
        g = np.zeros(th.shape + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = np.sin(th) ** 2
        return g

    def metric(self, t, coords, zrow=None):
        return self.scale(t) * self.round_metric(coords)

    def inv_metric(self, t, coords):
        th = coords[..., 0]
        gi = np.zeros(th.shape + (2, 2))
        a = self.scale(t)
        gi[..., 0, 0] = 1.0 / a
        gi[..., 1, 1] = 1.0 / (a * np.sin(th) ** 2)
        return gi

    def metric_h(self, t, coords, zrow=None):
        # dg/dt = -2 g_round identically
        return self.round_metric(coords)

    def sqrt_det_g(self, t, coords):
        return self.scale(t) * np.abs(np.sin(coords[..., 0]))

    def christoffel(self, t, coords):
        # scale-invariant: the round-sphere symbols
        th = coords[..., 0]
        sth, cth = np.sin(th), np.cos(th)
        G = np.zeros(th.shape + (2, 2, 2))
        G[..., 0, 1, 1] = -sth * cth
        cot = cth / sth
        G[..., 1, 0, 1] = cot
        G[..., 1, 1, 0] = cot
        return G

    def ricci(self, t, coords):
        return self.round_metric(coords)

    def trace_h(self, t, coords):
        th = coords[..., 0]
        return np.broadcast_to(2.0 / self.scale(t), th.shape).copy()

    def phi_val(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape)
        return self.phi.val(t, self.world_z(coords, zrow))

    def dt_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape)
        return self.phi.dt(t, self.world_z(coords, zrow))

    def dphi(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape + (2,))
        z, dz_th, dz_ph, *_ = self._z_partials(coords, zrow)
        fz = self.phi.dz(t, z)
        return np.stack([fz * dz_th, fz * dz_ph], axis=-1)

    def hess_phi(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape + (2, 2))
        z, dz_th, dz_ph, zthth, zthph, zphph = self._z_partials(coords, zrow)
        fz, fzz = self.phi.dz(t, z), self.phi.dzz(t, z)
        sth, cth = np.sin(th), np.cos(th)
        cot = cth / sth
        h = np.zeros(th.shape + (2, 2))
        h[..., 0, 0] = fzz * dz_th**2 + fz * zthth
        h[..., 0, 1] = fzz * dz_th * dz_ph + fz * zthph - cot * fz * dz_ph
        h[..., 1, 0] = h[..., 0, 1]
        h[..., 1, 1] = fzz * dz_ph**2 + fz * zphph + sth * cth * fz * dz_th
        return h

    def dvarrho(self, t, coords, zrow=None):
        th = coords[..., 0]
        if not self.phi:
            return np.zeros(th.shape + (2,))
        z, dz_th, dz_ph, *_ = self._z_partials(coords, zrow)
        ftz = self.phi.dt_dz(t, z)
        return np.stack([ftz * dz_th, ftz * dz_ph], axis=-1)

    def distance(self, t, x, y):
        e1 = self.embed(coords_of(x))
        e2 = self.embed(coords_of(y))
        gamma = np.arccos(np.clip(np.dot(e1, e2), -1.0, 1.0))
        return np.sqrt(self.scale(t)) * gamma

    def grid(self, n):
        th = np.linspace(self.pole_margin, np.pi - self.pole_margin, n)
        return np.stack([th, np.zeros_like(th)], axis=-1)


# ---------------------------------------------------------------------------
# module-level operations (validated, per-point)
# ---------------------------------------------------------------------------

def _prep(model, t, x):
    model.check_time(t)
    c = coords_of(x)
    model.check_coords(c)
    return c


def metric_at(model, t, x):
    """Matrix of g_t in the chart at x; symmetric positive definite."""
    c = _prep(model, t, x)
    g = model.metric(t, c)
    if np.linalg.det(g) <= 0.0:
        raise SingularMetric(f"metric not positive definite at t={t}")
    return g


def metric_h_at(model, t, x):
    """h_t = -1/2 dg/dt as a matrix in the chart."""
    return model.metric_h(t, _prep(model, t, x))


def christoffel(model, t, x):
    """Christoffel symbols of g_t, index order [upper, lower, lower]."""
    return model.christoffel(t, _prep(model, t, x))


def ricci(model, t, x):
    """Ricci tensor of g_t (zero on circles, the round metric on the sphere)."""
    return model.ricci(t, _prep(model, t, x))


def hess_phi(model, t, x):
    return model.hess_phi(t, _prep(model, t, x))


def grad_phi(model, t, x):
    return model.grad_phi(t, _prep(model, t, x))


def varrho(model, t, x):
    """Conjugation rate varrho = d_t phi + tr_g h at (t, x)."""
    return model.varrho(t, _prep(model, t, x))


def distance(model, t, x, y):
    model.check_time(t)
    return model.distance(t, x, y)


def measure_mu(model, t, region=None):
    """mu_t-measure of a chart region (whole manifold when region is None).

    Circle regions are angle intervals (lo, hi); sphere regions are
    ((theta_lo, theta_hi), (phi_lo, phi_hi)).
    """
    model.check_time(t)
    if model.dim == 1:
        lo, hi = (0.0, TWO_PI) if region is None else region
        hi = min(hi, lo + TWO_PI)
        return gauss_panels(lambda th: model.mu_density(t, th[:, None]), lo, hi, panels=16)
    if region is None:
        th_lo, th_hi, ph_lo, ph_hi = 0.0, np.pi, 0.0, TWO_PI
    else:
        (th_lo, th_hi), (ph_lo, ph_hi) = region
    width = min(ph_hi - ph_lo, TWO_PI)

    def band_density(th):
        c = np.stack([th, np.zeros_like(th)], axis=-1)
        return model.mu_density(t, c)

    return width * gauss_panels(band_density, th_lo, th_hi, panels=16)


def _circle_ball_interval(model, t, center, radius):
    """Angular interval (lo, hi) of the metric ball on a circle model, or None for all."""
    x = coords_of(center)[0]
    if isinstance(model, ScaledCircle):
        c = model.c(t)
        half = radius / c
        if half >= np.pi:
            return None
        return x - half, x + half
    # conformal: invert the monotone arc-length function in both directions
    circ = model.circumference(t)
    if radius >= 0.5 * circ:
        return None

    def arc(u):
        return model.arc_length(t, x, x + u) if u >= 0 else model.arc_length(t, x + u, x)

    def invert(sign):
        lo, hi = 0.0, sign * TWO_PI
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if arc(mid) < radius:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    return x + invert(-1.0), x + invert(1.0)


def ball_volume(model, t, center, radius):
    """mu_t-measure of the metric ball B_t(center, radius); saturates at the total."""
    model.check_time(t)
    if radius <= 0.0:
        return 0.0
    if model.dim == 1:
        iv = _circle_ball_interval(model, t, center, radius)
        if iv is None:
            return measure_mu(model, t)
        return measure_mu(model, t, iv)
    beta = radius / np.sqrt(model.scale(t))
    if beta >= np.pi:
        return measure_mu(model, t)
    c0 = coords_of(center)
    th0 = c0[0]
    if model.phi is None:
        # closed-form spherical cap, location independent
        return model.scale(t) * TWO_PI * (1.0 - np.cos(beta))

    def cap_width(th):
        # azimuthal width of the cap at polar angle th
        num = np.cos(beta) - np.cos(th) * np.cos(th0)
        den = np.sin(th) * np.sin(th0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, num / np.maximum(den, 1e-300),
                             np.where(num >= 0, np.inf, -np.inf))
        return 2.0 * np.arccos(np.clip(ratio, -1.0, 1.0))

    def integrand(th):
        c = np.stack([th, np.zeros_like(th)], axis=-1)
        return model.mu_density(t, c) * cap_width(th)

    lo, hi = max(th0 - beta, 0.0), min(th0 + beta, np.pi)
    return gauss_panels(integrand, lo, hi, panels=24)


# ---------------------------------------------------------------------------
# scalar bound profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundProfile:
    """Time profiles entering the inequality constants.

    K (= K1) is a lower bound for Ric - 1/2 dg/dt + Hess(phi) against g_t,
    K2 the analogue with +1/2 dg/dt, kappa an upper bound for |d varrho|_g,
    and sup_rho_plus/minus the spatial envelopes of varrho^+/-.
    """

    K: Callable
    K1: Callable
    K2: Callable
    kappa: Callable
    sup_rho_plus: Callable
    sup_rho_minus: Callable
    provenance: str
    t_max: float

    def finite_on(self, s, t, n=64):
        ts = np.linspace(s, t, n)
        vals = [self.K1(ts), self.K2(ts), self.kappa(ts), self.sup_rho_plus(ts), self.sup_rho_minus(ts)]
        return all(np.all(np.isfinite(v)) for v in vals)


def _tensor_ratio_min(model, t, coords, sign):
    """Min generalized eigenvalue of Ric - sign*(1/2) dg/dt + Hess(phi) against g.

    sign=+1 gives the K1 tensor, sign=-1 the K2 tensor (dg/dt = -2h).
    """
    tensor = model.ricci(t, coords) + sign * model.metric_h(t, coords) + model.hess_phi(t, coords)
    g = model.metric(t, coords)
    if model.dim == 1:
        return tensor[..., 0, 0] / g[..., 0, 0]
    # sphere tensors are diagonal in the canonical chart
    r0 = tensor[..., 0, 0] / g[..., 0, 0]
    r1 = tensor[..., 1, 1] / g[..., 1, 1]
    return np.minimum(r0, r1)


def _dvarrho_norm(model, t, coords):
    d = model.dvarrho(t, coords)
    gi = model.inv_metric(t, coords)
    return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", d, gi, d), 0.0))


def _extremize(model, t, n_space, fn, mode):
    """Extremum of a scalar field over the model, grid pass plus golden refinement."""
    grid = model.grid(n_space)
    vals = fn(t, grid)
    sgn = 1.0 if mode == "min" else -1.0
    idx = int(np.argmin(sgn * vals))
    th = grid[:, 0]
    span = th[1] - th[0]
    lo, hi = th[idx] - span, th[idx] + span
    if model.dim == 2:
        lo = max(lo, model.pole_margin)
        hi = min(hi, np.pi - model.pole_margin)

    def scalar(u):
        c = np.array([[u]]) if model.dim == 1 else np.array([[u, 0.0]])
        return sgn * float(fn(t, c)[0])

    _, fopt = golden_min(scalar, lo, hi, tol=1e-6)
    return min(sgn * fopt, vals[idx]) if mode == "min" else max(sgn * fopt, vals[idx])


def _closed_form_profile(model):
    if isinstance(model, ShrinkingSphere2) and model.phi is None:
        # Ric -+ 1/2 dg/dt = (1 +- 1) g_round, varrho = H = 2/(1-2t)
        return dict(
            K1=lambda t: 2.0 / (1.0 - 2.0 * np.asarray(t, float)),
            K2=lambda t: np.zeros_like(np.asarray(t, float)),
            kappa=lambda t: np.zeros_like(np.asarray(t, float)),
            sup_rho_plus=lambda t: 2.0 / (1.0 - 2.0 * np.asarray(t, float)),
            sup_rho_minus=lambda t: np.zeros_like(np.asarray(t, float)),
        )
    if isinstance(model, ScaledCircle) and model.phi is None:
        c = model.c

        def ratio(t):
            t = np.asarray(t, float)
            return c.dt(t) / c(t)

        return dict(
            K1=lambda t: -ratio(t),
            K2=lambda t: ratio(t),
            kappa=lambda t: np.zeros_like(np.asarray(t, float)),
            sup_rho_plus=lambda t: np.maximum(-ratio(t), 0.0),
            sup_rho_minus=lambda t: np.maximum(ratio(t), 0.0),
        )
    return None


def bound_profile(model, t_max=None, n_time=512, n_space=2048):
    """Extract the scalar profiles K, K1, K2, kappa, sup varrho^+/- of a model.

    Closed forms are used where the model admits them; otherwise each
    quantity is grid-extremized in space (with golden-section refinement)
    at ``n_time`` cached time nodes and linearly interpolated.
    """
    if t_max is None:
        t_max = model.T * (1.0 - 1e-9)
    closed = _closed_form_profile(model)
    if closed is not None:
        return BoundProfile(
            K=closed["K1"], K1=closed["K1"], K2=closed["K2"], kappa=closed["kappa"],
            sup_rho_plus=closed["sup_rho_plus"], sup_rho_minus=closed["sup_rho_minus"],
            provenance="closed_form", t_max=float(t_max),
        )

    nodes = np.linspace(0.0, t_max, n_time)
    k1 = np.empty(n_time)
    k2 = np.empty(n_time)
    kap = np.empty(n_time)
    rp = np.empty(n_time)
    rm = np.empty(n_time)
    for j, tj in enumerate(nodes):
        k1[j] = _extremize(model, tj, n_space, lambda t, c: _tensor_ratio_min(model, t, c, +1.0), "min")
        k2[j] = _extremize(model, tj, n_space, lambda t, c: _tensor_ratio_min(model, t, c, -1.0), "min")
        kap[j] = _extremize(model, tj, n_space, lambda t, c: _dvarrho_norm(model, t, c), "max")
        rho_max = _extremize(model, tj, n_space, lambda t, c: model.varrho(t, c), "max")
        rho_min = _extremize(model, tj, n_space, lambda t, c: model.varrho(t, c), "min")
        rp[j] = max(rho_max, 0.0)
        rm[j] = max(-rho_min, 0.0)

    def interp(vals):
        return lambda t: np.interp(np.asarray(t, float), nodes, vals)

    kfun = interp(k1)
    return BoundProfile(
        K=kfun, K1=kfun, K2=interp(k2), kappa=interp(kap),
        sup_rho_plus=interp(rp), sup_rho_minus=interp(rm),
        provenance="grid_extremized", t_max=float(t_max),
    )
