"""Coefficient series with exact derivatives.

Models are defined by small coefficient tables: polynomials in time and
trigonometric polynomials in the chart angle.  Keeping every t- and
angle-derivative in closed form removes differentiation noise from the
inequality margins downstream.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from numpy.polynomial import polynomial as _poly

__all__ = ["TimePoly", "TrigSeries", "CosSeriesZ"]


class TimePoly:
    """Polynomial in t, coefficients lowest order first."""

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("need a non-empty 1-D coefficient list")
        self.coeffs = c
        self._dc = _poly.polyder(c) if c.size > 1 else np.zeros(1)

    def __call__(self, t):
        return _poly.polyval(t, self.coeffs)

    def dt(self, t):
        return _poly.polyval(t, self._dc)

    @property
    def is_constant(self):
        return self.coeffs.size == 1 or not np.any(self.coeffs[1:])


class TrigSeries:
    """f(t, theta) = sum_k c_k(t) cos(k theta) + s_k(t) sin(k theta).

    ``cos_rows``/``sin_rows`` are lists of t-polynomial coefficient lists,
    row k belonging to harmonic k.  All partial derivatives up to second
    order (and the mixed one) are exact.
    """

    def __init__(self, cos_rows=None, sin_rows=None):
        self.cos = [TimePoly(r) for r in (cos_rows or [])]
        self.sin = [TimePoly(r) for r in (sin_rows or [])]

    def _sumk(self, t, theta, cos_fac, sin_fac):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(np.broadcast(theta, 0.0).shape)
        for k, p in enumerate(self.cos):
            a, b = cos_fac(k, p, t)
            if a != 0.0:
                out = out + a * np.cos(k * theta)
            if b != 0.0:
                out = out + b * np.sin(k * theta)
        for k, p in enumerate(self.sin):
            a, b = sin_fac(k, p, t)
            if a != 0.0:
                out = out + a * np.cos(k * theta)
            if b != 0.0:
                out = out + b * np.sin(k * theta)
        return out

    def val(self, t, theta):
        return self._sumk(t, theta, lambda k, p, t_: (p(t_), 0.0), lambda k, p, t_: (0.0, p(t_)))

    def dt(self, t, theta):
        return self._sumk(t, theta, lambda k, p, t_: (p.dt(t_), 0.0), lambda k, p, t_: (0.0, p.dt(t_)))

    def dth(self, t, theta):
        # d/dtheta: cos(k.) -> -k sin(k.), sin(k.) -> k cos(k.)
        return self._sumk(t, theta, lambda k, p, t_: (0.0, -k * p(t_)), lambda k, p, t_: (k * p(t_), 0.0))

    def dthth(self, t, theta):
        return self._sumk(
            t, theta,
            lambda k, p, t_: (-k * k * p(t_), 0.0),
            lambda k, p, t_: (0.0, -k * k * p(t_)),
        )

    def dt_dth(self, t, theta):
        return self._sumk(
            t, theta,
            lambda k, p, t_: (0.0, -k * p.dt(t_)),
            lambda k, p, t_: (k * p.dt(t_), 0.0),
        )

    @property
    def is_zero(self):
        return all(not np.any(p.coeffs) for p in self.cos + self.sin)

    @property
    def is_time_constant(self):
        return all(p.is_constant for p in self.cos + self.sin)


class CosSeriesZ:
    """F(t, z) = sum_k c_k(t) T_k(z) with T_k Chebyshev, z = cos(polar angle).

    Cosine series in the polar angle written through z so the function is
    smooth across the sphere poles.  Exposes z-derivatives and the time
    derivative; cross term dt_dz included for d(varrho).
    """

    def __init__(self, cos_rows):
        self.rows = [TimePoly(r) for r in (cos_rows or [])]

    def _coeff(self, t, order=0):
        c = np.array([(p.dt(t) if order else p(t)) for p in self.rows], dtype=float)
        return c if c.size else np.zeros(1)

    def val(self, t, z):
        return _cheb.chebval(z, self._coeff(t))

    def dz(self, t, z):
        c = self._coeff(t)
        return _cheb.chebval(z, _cheb.chebder(c)) if c.size > 1 else np.zeros_like(np.asarray(z, float))

    def dzz(self, t, z):
        c = self._coeff(t)
        return _cheb.chebval(z, _cheb.chebder(c, 2)) if c.size > 2 else np.zeros_like(np.asarray(z, float))

    def dt(self, t, z):
        return _cheb.chebval(z, self._coeff(t, order=1))

    def dt_dz(self, t, z):
        c = self._coeff(t, order=1)
        return _cheb.chebval(z, _cheb.chebder(c)) if c.size > 1 else np.zeros_like(np.asarray(z, float))

    def dt_dzz(self, t, z):
        c = self._coeff(t, order=1)
        return _cheb.chebval(z, _cheb.chebder(c, 2)) if c.size > 2 else np.zeros_like(np.asarray(z, float))

    @property
    def is_zero(self):
        return all(not np.any(p.coeffs) for p in self.rows)
