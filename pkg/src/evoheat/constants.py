"""Explicit constants and right-hand sides of the inequalities.

Everything is driven by a scalar bound profile (K1, K2, kappa, envelopes of
varrho^+/-).  Nested integrals share one cumulative table per profile so
repeated evaluations stay cheap; all quadratures are high-order composite
rules on uniform grids and pass a doubling refinement test.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline

from .geometry import TWO_PI, ScaledCircle, ShrinkingSphere2, coords_of, gauss_panels

__all__ = [
    "ProfileIntegrals",
    "alpha",
    "eta",
    "harnack_rhs_i",
    "harnack_rhs_ii",
    "plain_harnack_rhs",
    "gradient_bound_rhs",
    "kernel_bound_rhs",
    "logsob_semigroup_rhs",
    "LogSobConstants",
    "gamma_value",
    "gamma_inverse",
    "logsob_constants",
    "supercontractive_bound",
    "exp_square_moment",
]


class ProfileIntegrals:
    """Cumulative integral tables of a bound profile, shared by the constants."""

    def __init__(self, profile, t_hi=None, n_table=8192, n_quad=2048):
        self.profile = profile
        self.t_hi = float(profile.t_max if t_hi is None else t_hi)
        self.n_quad = int(n_quad)
        ts = np.linspace(0.0, self.t_hi, n_table + 1)
        self.ts = ts
        self._cum = {}
        self._memo = {}
        for which, fn in (("K1", profile.K1), ("K2", profile.K2)):
            cum = cumulative_simpson(np.asarray(fn(ts), float), x=ts, initial=0.0)
            self._cum[which] = CubicSpline(ts, cum)

    def _memoized(self, name, key, compute):
        full = (name,) + key
        if full not in self._memo:
            self._memo[full] = compute()
        return self._memo[full]

    def cum_K(self, r, which="K1"):
        """Integral of K from 0 to r (vectorized)."""
        return self._cum[which](np.clip(np.asarray(r, float), 0.0, self.t_hi))

    def int_K(self, a, b, which="K1"):
        return self.cum_K(b, which) - self.cum_K(a, which)

    def _grid(self, s, t, n=None):
        n = self.n_quad if n is None else n
        return np.linspace(s, t, n + 1)

    def alpha(self, s, t, which="K1", n=None):
        """alpha(s,t) = int_s^t exp(2 int_s^r K) dr."""
        if t <= s:
            return 0.0

        def compute():
            rs = self._grid(s, t, n)
            integ = np.exp(2.0 * (self.cum_K(rs, which) - self.cum_K(s, which)))
            return float(simpson(integ, x=rs))

        return self._memoized("alpha", (s, t, which, n), compute)

    def eta(self, s, t, which="K1", n=None):
        """eta(s,t) = int_s^t int_s^v kappa(r) exp(2 int_s^v K - int_s^r K) dr dv."""
        if t <= s:
            return 0.0

        def compute():
            vs = self._grid(s, t, n)
            A = self.cum_K(vs, which) - self.cum_K(s, which)
            kap = np.asarray(self.profile.kappa(vs), float)
            inner = cumulative_simpson(kap * np.exp(-A), x=vs, initial=0.0)
            return float(simpson(np.exp(2.0 * A) * inner, x=vs))

        return self._memoized("eta", (s, t, which, n), compute)

    def int_sup_rho(self, s, t, sign, n=None):
        if t <= s:
            return 0.0

        def compute():
            rs = self._grid(s, t, n)
            env = self.profile.sup_rho_plus if sign > 0 else self.profile.sup_rho_minus
            return float(simpson(np.asarray(env(rs), float), x=rs))

        return self._memoized("int_sup_rho", (s, t, sign, n), compute)

    def kappa_decay(self, s, t, which="K1", n=None):
        """int_s^t kappa(r) exp(-int_s^r K) dr (gradient-bound correction)."""
        if t <= s:
            return 0.0

        def compute():
            rs = self._grid(s, t, n)
            A = self.cum_K(rs, which) - self.cum_K(s, which)
            return float(simpson(np.asarray(self.profile.kappa(rs), float) * np.exp(-A), x=rs))

        return self._memoized("kappa_decay", (s, t, which, n), compute)

    def decay_to_t(self, s, t, which="K1", n=None):
        """int_s^t exp(-2 int_r^t K) dr (log-Sobolev gamma integrand)."""
        if t <= s:
            return 0.0

        def compute():
            rs = self._grid(s, t, n)
            A = self.cum_K(t, which) - self.cum_K(rs, which)
            return float(simpson(np.exp(-2.0 * A), x=rs))

        return self._memoized("decay_to_t", (s, t, which, n), compute)

    def logsob_additive(self, s, t, which="K1", n=None):
        """int_s^t [ 2 (int_r^t kappa(u) exp(-int_r^u K) du)^2 + sup varrho_r^+ ] dr."""
        if t <= s:
            return 0.0

        def compute():
            rs = self._grid(s, t, n)
            cum = self.cum_K(rs, which)
            kap = np.asarray(self.profile.kappa(rs), float)
            # C(r) = int_s^r kappa(u) exp(-cumK(u)) du; inner(r) = e^{cumK(r)} (C(t)-C(r))
            C = cumulative_simpson(kap * np.exp(-cum), x=rs, initial=0.0)
            inner = np.exp(cum) * (C[-1] - C)
            env = np.asarray(self.profile.sup_rho_plus(rs), float)
            return float(simpson(2.0 * inner**2 + env, x=rs))

        return self._memoized("logsob_additive", (s, t, which, n), compute)


def _integrals(profile):
    return profile if isinstance(profile, ProfileIntegrals) else ProfileIntegrals(profile)


def alpha(profile, s, t, which="K1"):
    return _integrals(profile).alpha(s, t, which)


def eta(profile, s, t, which="K1"):
    return _integrals(profile).eta(s, t, which)


# ---------------------------------------------------------------------------
# Harnack right-hand sides
# ---------------------------------------------------------------------------

def harnack_rhs_i(model, profile, s, t, x, y, p, Pf_p_at_y):
    """RHS of the first Harnack inequality for the conjugate semigroup.

    (P^rho f)^p(x) <= P^rho f^p(y) * exp( (p-1) int sup rho^- + p rho_s(x,y)^2
    / (4 (p-1) alpha) + p eta rho_s(x,y) / alpha ).
    """
    pi = _integrals(profile)
    rho = model.distance(s, coords_of(x), coords_of(y))
    a = pi.alpha(s, t)
    e = pi.eta(s, t)
    expo = (p - 1.0) * pi.int_sup_rho(s, t, -1) \
        + p * rho**2 / (4.0 * (p - 1.0) * a) + p * e * rho / a
    return Pf_p_at_y * np.exp(expo)


def harnack_rhs_ii(model, profile, s, t, x, y, p, Pf_p_at_y, fk_moment):
    """RHS of the second Harnack inequality; fk_moment = E^y exp(-(p-1) int rho).

    Note the correction term carries 2 p eta / alpha here (versus p eta / alpha
    in the first inequality).
    """
    pi = _integrals(profile)
    rho = model.distance(s, coords_of(x), coords_of(y))
    a = pi.alpha(s, t)
    e = pi.eta(s, t)
    expo = p * rho**2 / (4.0 * (p - 1.0) * a) + 2.0 * p * e * rho / a
    return Pf_p_at_y * fk_moment * np.exp(expo)


def plain_harnack_rhs(model, profile, s, t, x, y, p, Pfp_at_y):
    """RHS of the Harnack inequality for the plain two-parameter semigroup."""
    pi = _integrals(profile)
    rho = model.distance(s, coords_of(x), coords_of(y))
    a = pi.alpha(s, t)
    return Pfp_at_y * np.exp(p * rho**2 / (4.0 * (p - 1.0) * a))


def gradient_bound_rhs(profile, s, t, PconjGradf, PconjF):
    """RHS of the gradient estimate: e^{-int K} P^rho|grad f| + P^rho f * int kappa e^{-int K}."""
    pi = _integrals(profile)
    decay = np.exp(-pi.int_K(s, t))
    return decay * np.asarray(PconjGradf) + np.asarray(PconjF) * pi.kappa_decay(s, t)


def kernel_bound_rhs(model, profile, t, x, y, variant="general"):
    """Heat-kernel upper bound at (0, x; t, y), with sqrt(t)-ball volumes.

    variant "general" uses the full numerator; "cor1" (coupled modified flow,
    varrho = 0) drops the varrho^+ and eta terms; "cor2" (phi = 0 flow) is the
    general formula with varrho = trace h.
    """
    from .geometry import ball_volume
    pi = _integrals(profile)
    a1 = pi.alpha(0.0, 0.5 * t, "K1")
    a2 = pi.alpha(0.5 * t, t, "K2")
    if variant == "cor1":
        expo = t / (4.0 * a1) + t / (4.0 * a2)
    elif variant in ("general", "cor2"):
        e2 = pi.eta(0.5 * t, t, "K2")
        expo = 0.5 * pi.int_sup_rho(0.0, t, +1) + t / (4.0 * a1) \
            + (t + 4.0 * e2 * np.sqrt(t)) / (4.0 * a2)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    vol0 = ball_volume(model, 0.0, x, np.sqrt(t))
    volt = ball_volume(model, t, y, np.sqrt(t))
    return np.exp(expo) / np.sqrt(vol0 * volt)


def logsob_semigroup_rhs(profile, s, t, PconjGrad2, PconjF2):
    """RHS of the semigroup log-Sobolev inequality.

    4 (int_s^t e^{-2 int_r^t K} dr) P^rho |grad f|^2 + P^rho f^2 log P^rho f^2
    + [ int_s^t ( 2 (int_r^t kappa e^{-int K})^2 + sup rho_r^+ ) dr ] P^rho f^2.
    """
    pi = _integrals(profile)
    g2 = np.asarray(PconjGrad2)
    f2 = np.asarray(PconjF2)
    return 4.0 * pi.decay_to_t(s, t) * g2 + f2 * np.log(f2) + pi.logsob_additive(s, t) * f2


# ---------------------------------------------------------------------------
# super log-Sobolev constants
# ---------------------------------------------------------------------------

@dataclass
class LogSobConstants:
    gamma: float          # gamma(s*, t) at the inverted point
    gamma_inv: float      # s* = gamma_t^{-1}(r)
    beta_tilde: float
    beta: float           # beta_t(r) = beta_tilde(s*, t)
    p: float
    q: float
    opnorm_input: float
    r: float
    r_too_large: bool


def gamma_value(profile, p, q, s, t):
    """gamma(s,t) = 4 p (q-1)/(q-p) * int_s^t exp(-2 int_r^t K) dr."""
    if not 1.0 < p < q:
        raise ValueError("need 1 < p < q")
    return 4.0 * p * (q - 1.0) / (q - p) * _integrals(profile).decay_to_t(s, t)


def gamma_inverse(profile, p, q, t, r, tol=1e-8):
    """gamma_t^{-1}(r) = inf{ s in [0,t] : gamma(s,t) <= r }, by bisection."""
    pi = _integrals(profile)
    if gamma_value(pi, p, q, 0.0, t) <= r:
        return 0.0, True
    lo, hi = 0.0, t  # gamma(lo) > r >= gamma(hi) = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gamma_value(pi, p, q, mid, t) <= r:
            hi = mid
        else:
            lo = mid
    return hi, False


def logsob_constants(profile, p, q, t, r, opnorm_upper, proof_factor=True):
    """Constants of the super log-Sobolev inequality at parameter r.

    ``proof_factor`` keeps the p(q-1)/(q-p) weight on the additive integral
    (the derived display); disabling it reproduces the bare-statement form.
    """
    pi = _integrals(profile)
    s_star, too_large = gamma_inverse(pi, p, q, t, r)
    factor = p * (q - 1.0) / (q - p) if proof_factor else 1.0
    beta_tilde = p * q / (q - p) * np.log(opnorm_upper) + factor * pi.logsob_additive(s_star, t)
    return LogSobConstants(
        gamma=gamma_value(pi, p, q, s_star, t),
        gamma_inv=s_star,
        beta_tilde=float(beta_tilde),
        beta=float(beta_tilde),
        p=p, q=q, opnorm_input=float(opnorm_upper), r=float(r),
        r_too_large=too_large,
    )


def supercontractive_bound(profile, beta_fn, p, q, s, t, n_nodes=16):
    """Norm bound ||P^rho_{s,t}||_{(p,t)->(q,s)} from a super log-Sobolev family.

    Uses the exponent with q(u) = e^{4(t-u)/r}(p-1) + 1 and the r that makes
    q(s) = q.  ``beta_fn(u, r)`` supplies beta_u(r).  Returns (bound, r).
    """
    if not 1.0 < p < q:
        raise ValueError("need 1 < p < q")
    r = 4.0 * (t - s) / np.log((q - 1.0) / (p - 1.0))
    us = np.linspace(s, t, n_nodes + 1)
    qu = np.exp(4.0 * (t - us) / r) * (p - 1.0) + 1.0
    dqu = -(4.0 / r) * np.exp(4.0 * (t - us) / r) * (p - 1.0)
    beta_u = np.array([beta_fn(u, r) for u in us], dtype=float)
    pi = _integrals(profile)
    rho_minus = np.asarray(pi.profile.sup_rho_minus(us), float)
    integrand = -beta_u * dqu / qu**2 + (qu - 1.0) * rho_minus / qu
    return float(np.exp(simpson(integrand, x=us))), float(r)


# ---------------------------------------------------------------------------
# squared-distance exponential moments
# ---------------------------------------------------------------------------

def exp_square_moment(model, t, lam, origin=None, n=4096):
    """mu_t( exp( lam * rho_t(o, .)^2 ) ); always finite on the compact models."""
    model.check_time(t)
    if model.dim == 2:
        # base point at the pole axis: rho = sqrt(1-2t) * polar angle
        a = model.scale(t)

        def integrand(th):
            c = np.stack([th, np.zeros_like(th)], axis=-1)
            return np.exp(lam * a * th**2) * model.mu_density(t, c) * TWO_PI

        return gauss_panels(integrand, 0.0, np.pi, panels=24)
    o = 0.0 if origin is None else float(coords_of(origin)[0])
    if isinstance(model, ScaledCircle):
        c = model.c(t)

        def rho(th):
            d = np.abs((th - o) % TWO_PI)
            return c * np.minimum(d, TWO_PI - d)

        def integrand(th):
            return np.exp(lam * rho(th) ** 2) * model.mu_density(t, th[:, None])

        # split at the cut locus (antipode of o)
        return gauss_panels(integrand, o, o + np.pi, panels=16) \
            + gauss_panels(integrand, o + np.pi, o + TWO_PI, panels=16)
    # conformal circle: distances from cumulative arc length on a fine grid
    ths = np.linspace(o, o + TWO_PI, n + 1)
    speed = np.exp(model.psi.val(t, ths))
    arc = cumulative_simpson(speed, x=ths, initial=0.0)
    circ = arc[-1]
    rho = np.minimum(arc, circ - arc)
    dens = model.mu_density(t, ths[:, None])
    return float(simpson(np.exp(lam * rho**2) * dens, x=ths))
