"""Deterministic reference solver for the heat and conjugate-heat equations.

A finite-volume discretization of L_t = Delta_t - grad(phi) in its
mu-weighted divergence form

    L f = (1/m) d/dx ( c df/dx ),   m = e^{-phi} sqrt(det g),  c = m g^{xx},

on the periodic circle chart or on the symmetric sphere reduction (polar
angle with reflecting ends).  This form makes the discrete operator
exactly self-adjoint against the mu_t quadrature weights and kills
constants exactly, so the evolution-system duality mu_s(P^rho f) = mu_t(f)
holds at the discrete level up to time-stepping error only.

Time stepping is Crank-Nicolson with coefficients rebuilt every step
(second order); a few Rannacher implicit-Euler half-steps damp the
high-frequency transients of discrete-delta data when kernels are built.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import SingularMetric
from .geometry import TWO_PI

__all__ = [
    "Grid1D",
    "make_grid",
    "mu_weights",
    "solve_backward_heat",
    "solve_conjugate",
    "conjugate_solution_with_error",
    "conjugate_evaluator",
    "oracle_gradient",
    "gradient_norm_on_grid",
    "KernelMatrix",
    "kernel_matrix",
    "OpNormResult",
    "opnorm_p_to_q",
    "opnorm_1_to_1",
]


@dataclass(frozen=True)
class Grid1D:
    """Spatial grid: periodic circle nodes or sphere polar cell centers."""

    nodes: np.ndarray
    faces: np.ndarray
    h: float
    kind: str  # "circle" | "sphere_polar"

    @property
    def n(self):
        return self.nodes.size


def make_grid(model, n):
    """Natural 1-D grid for the model (circle chart or symmetric sphere reduction)."""
    if model.dim == 1:
        h = TWO_PI / n
        nodes = np.arange(n) * h
        faces = nodes + 0.5 * h  # face i sits between node i and node i+1 (wrapping)
        return Grid1D(nodes=nodes, faces=faces, h=h, kind="circle")
    margin = model.pole_margin
    h = (np.pi - 2 * margin) / n
    nodes = margin + (np.arange(n) + 0.5) * h
    faces = margin + np.arange(1, n) * h  # interior faces; boundary flux is zero
    return Grid1D(nodes=nodes, faces=faces, h=h, kind="sphere_polar")


def _coords(grid, pos):
    if grid.kind == "circle":
        return pos[:, None]
    return np.stack([pos, np.zeros_like(pos)], axis=-1)


def _density_and_flux(model, grid, t):
    """Chart density m of mu_t and the face flux coefficient c = m g^{xx}."""
    m = model.mu_density(t, _coords(grid, grid.nodes))
    cf_coords = _coords(grid, grid.faces)
    if grid.kind == "circle":
        G = model.metric(t, cf_coords)[..., 0, 0]
        c = model.mu_density(t, cf_coords) / G
    else:
        # 2 pi from the azimuthal reduction; (1-2t) cancels between sqrt(det g) and g^{tt}
        m = TWO_PI * m
        G = model.metric(t, cf_coords)[..., 0, 0]
        c = TWO_PI * model.mu_density(t, cf_coords) / G
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise SingularMetric(f"degenerate mu-density at t={t}")
    return m, c


def mu_weights(model, grid, t):
    """Quadrature weights of mu_t on the grid (positive)."""
    m, _ = _density_and_flux(model, grid, t)
    return m * grid.h


class _Tri:
    """Tridiagonal operator with optional periodic corner entries.

    dl[i] = M[i, i-1] (i >= 1), du[i] = M[i, i+1] (i <= n-2); c_ur = M[0, n-1]
    and c_ll = M[n-1, 0] close the periodic circle stencil.
    """

    __slots__ = ("dl", "d", "du", "c_ur", "c_ll")

    def __init__(self, dl, d, du, c_ur=0.0, c_ll=0.0):
        self.dl, self.d, self.du = dl, d, du
        self.c_ur, self.c_ll = c_ur, c_ll

    def apply(self, u):
        flat = u.ndim == 1
        v = u[:, None] if flat else u
        out = self.d[:, None] * v
        out[1:] += self.dl[1:, None] * v[:-1]
        out[:-1] += self.du[:-1, None] * v[1:]
        out[0] += self.c_ur * v[-1]
        out[-1] += self.c_ll * v[0]
        return out[:, 0] if flat else out

    def shifted(self, c):
        """I + c * M."""
        return _Tri(c * self.dl, 1.0 + c * self.d, c * self.du,
                    c * self.c_ur, c * self.c_ll)

    def solve(self, rhs):
        """Solve M x = rhs (banded; Sherman-Morrison for the periodic corners)."""
        flat = rhs.ndim == 1
        b = rhs[:, None] if flat else rhs
        n = self.d.size
        ab = np.zeros((3, n))
        ab[0, 1:] = self.du[:-1]
        ab[1, :] = self.d
        ab[2, :-1] = self.dl[1:]
        if self.c_ur == 0.0 and self.c_ll == 0.0:
            x = solve_banded((1, 1), ab, b)
            return x[:, 0] if flat else x
        # M = B + u v^T with u = (gamma, 0, .., 0, c_ll), v = (1, 0, .., 0, c_ur/gamma)
        gamma = -self.d[0]
        ab_mod = ab.copy()
        ab_mod[1, 0] -= gamma
        ab_mod[1, -1] -= self.c_ur * self.c_ll / gamma
        uvec = np.zeros(n)
        uvec[0], uvec[-1] = gamma, self.c_ll
        y = solve_banded((1, 1), ab_mod, b)
        z = solve_banded((1, 1), ab_mod, uvec)
        vy = y[0] + (self.c_ur / gamma) * y[-1]
        vz = z[0] + (self.c_ur / gamma) * z[-1]
        x = y - z[:, None] * (vy / (1.0 + vz))[None, :]
        return x[:, 0] if flat else x


def _operator(model, grid, t, rho_scale):
    """M = L_t - rho_scale * varrho_t as a (periodic) tridiagonal stencil."""
    n = grid.n
    m, c = _density_and_flux(model, grid, t)
    inv = 1.0 / (m * grid.h**2)
    if grid.kind == "circle":
        c_right = c                      # face i: between node i and i+1 (last wraps)
        c_left = np.roll(c, 1)
        d = -(c_right + c_left) * inv
        du = np.zeros(n)
        du[:-1] = (c_right * inv)[:-1]
        dl = np.zeros(n)
        dl[1:] = (c_left * inv)[1:]
        M = _Tri(dl, d, du, c_ur=float(c_left[0] * inv[0]), c_ll=float(c_right[-1] * inv[-1]))
    else:
        c_right = np.concatenate([c, [0.0]])
        c_left = np.concatenate([[0.0], c])
        d = -(c_right + c_left) * inv
        du = np.zeros(n)
        du[:-1] = c_right[:-1] * inv[:-1]
        dl = np.zeros(n)
        dl[1:] = c_left[1:] * inv[1:]
        M = _Tri(dl, d, du)
    if rho_scale:
        M.d = M.d - rho_scale * np.asarray(model.varrho(t, _coords(grid, grid.nodes)), float)
    return M


def _march(model, grid, s, t, data, *, rho_scale=0.0, n_time=None, rannacher=0,
           store_all=False):
    """March the backward equation d_s u = -(L_s - rho_scale*varrho_s) u from t to s."""
    if not s <= t:
        raise ValueError("need s <= t")
    data = np.asarray(data, dtype=float)
    if n_time is None:
        n_time = max(400, int(np.ceil((t - s) * 4000)))
    if t == s:
        return [data.copy()] if store_all else data.copy()
    times = np.linspace(s, t, n_time + 1)
    ht = times[1] - times[0]
    eye = sp.identity(grid.n, format="csc")
    u = data.copy()
    levels = [u.copy()] if store_all else None
    for j in range(n_time - 1, -1, -1):
        # step from times[j+1] down to times[j]
        if (n_time - 1 - j) < rannacher:
            for frac in (0.5, 1.0):
                target = times[j + 1] - frac * ht
                M = _operator(model, grid, target, rho_scale)
                u = spla.splu(eye - 0.5 * ht * M).solve(u)
        else:
            M_new = _operator(model, grid, times[j + 1], rho_scale)
            M_old = _operator(model, grid, times[j], rho_scale)
            rhs = u + 0.5 * ht * (M_new @ u)
            u = spla.splu(eye - 0.5 * ht * M_old).solve(rhs)
        if store_all:
            levels.append(u.copy())
    if store_all:
        return times, levels[::-1]  # levels[j] is the solution at times[j]
    return u


def solve_backward_heat(model, s, t, f_grid, grid, n_time=None):
    """u(s, .) = P_{s,t} f by Crank-Nicolson with time-dependent coefficients."""
    return _march(model, grid, s, t, f_grid, rho_scale=0.0, n_time=n_time)


def solve_conjugate(model, s, t, f_grid, grid, n_time=None, rho_scale=1.0):
    """u(s, .) = P^rho_{s,t} f; rho_scale p solves for the p*varrho weight."""
    return _march(model, grid, s, t, f_grid, rho_scale=rho_scale, n_time=n_time)


def _eval_field(model, f, t, grid):
    from .fields import field_value
    return np.asarray(field_value(model, f, t, _coords(grid, grid.nodes)), dtype=float)


def conjugate_solution_with_error(model, s, t, f, n_space=512, n_time=None,
                                  rho_scale=1.0, plain=False):
    """Solve on (n, n_t) and (n/2, n_t/2); Richardson error estimate for order 2.

    Returns (grid, u, err) with err a pointwise discretization estimate
    |u_fine - u_coarse| / 3 interpolated to the fine nodes.
    """
    scale = 0.0 if plain else rho_scale
    grid = make_grid(model, n_space)
    grid_c = make_grid(model, n_space // 2)
    if n_time is None:
        n_time = max(400, int(np.ceil((t - s) * 4000)))
    u = _march(model, grid, s, t, _eval_field(model, f, t, grid), rho_scale=scale, n_time=n_time)
    u_c = _march(model, grid_c, s, t, _eval_field(model, f, t, grid_c), rho_scale=scale,
                 n_time=max(n_time // 2, 16))
    if grid.kind == "circle":
        xc = np.concatenate([grid_c.nodes, [TWO_PI]])
        vc = np.concatenate([u_c, [u_c[0]]])
        u_c_on_f = np.interp(grid.nodes, xc, vc)
    else:
        u_c_on_f = np.interp(grid.nodes, grid_c.nodes, u_c)
    err = np.abs(u - u_c_on_f) / 3.0
    return grid, u, err


def conjugate_evaluator(model, s, t, f, n_space=512, n_time=None, rho_scale=1.0):
    """Callable (r, positions) -> u(r, positions) from a stored full march."""
    grid = make_grid(model, n_space)
    times, levels = _march(model, grid, s, t, _eval_field(model, f, t, grid),
                           rho_scale=rho_scale, n_time=n_time, store_all=True)
    levels = np.asarray(levels)

    if grid.kind == "circle":
        xs = np.concatenate([grid.nodes, [TWO_PI]])

        def interp_space(vals, pos):
            return np.interp(np.asarray(pos) % TWO_PI, xs, np.concatenate([vals, [vals[0]]]))
    else:
        def interp_space(vals, pos):
            return np.interp(np.asarray(pos), grid.nodes, vals)

    def u_eval(r, pos):
        j = np.searchsorted(times, r) if r > times[0] else 0
        j = min(max(j, 1), len(times) - 1)
        lam = (r - times[j - 1]) / (times[j] - times[j - 1])
        lam = np.clip(lam, 0.0, 1.0)
        vals = (1.0 - lam) * levels[j - 1] + lam * levels[j]
        return interp_space(vals, pos)

    return u_eval


def gradient_norm_on_grid(model, grid, s, u):
    """|grad u|_{g_s} from grid values by centered differences."""
    if grid.kind == "circle":
        du = (np.roll(u, -1) - np.roll(u, 1)) / (2 * grid.h)
    else:
        du = np.empty_like(u)
        du[1:-1] = (u[2:] - u[:-2]) / (2 * grid.h)
        du[0] = (u[1] - u[0]) / grid.h
        du[-1] = (u[-1] - u[-2]) / grid.h
    G = model.metric(s, _coords(grid, grid.nodes))[..., 0, 0]
    return np.abs(du) / np.sqrt(G)


def oracle_gradient(model, s, t, f_grid, grid, n_time=None, rho_scale=1.0):
    """|grad^s P^rho_{s,t} f|_s on the grid."""
    u = solve_conjugate(model, s, t, f_grid, grid, n_time=n_time, rho_scale=rho_scale)
    return gradient_norm_on_grid(model, grid, s, u)


# ---------------------------------------------------------------------------
# kernels and operator norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelMatrix:
    """values[i, j] ~ p^(rho)(s, x_i; t, y_j), density against mu_t."""

    values: np.ndarray
    grid: Grid1D
    s: float
    t: float
    conjugate: bool
    weights_s: np.ndarray
    weights_t: np.ndarray

    def apply(self, f):
        """P^(rho)_{s,t} f on the grid."""
        return self.values @ (self.weights_t * f)


def kernel_matrix(model, s, t, grid, conjugate=False, n_time=None, rannacher=4):
    """Kernel by marching the identity matrix (all discrete deltas at once)."""
    w_t = mu_weights(model, grid, t)
    w_s = mu_weights(model, grid, s)
    M = _march(model, grid, s, t, np.eye(grid.n), rho_scale=1.0 if conjugate else 0.0,
               n_time=n_time, rannacher=rannacher)
    return KernelMatrix(values=M / w_t[None, :], grid=grid, s=s, t=t,
                        conjugate=conjugate, weights_s=w_s, weights_t=w_t)


@dataclass
class OpNormResult:
    value: float
    converged: bool
    iterations: int
    kind: str = "lower"


def opnorm_p_to_q(kernel, p, q, n_starts=5, max_iter=2000, tol=1e-12, seed=0):
    """Numerical L^p(mu_t) -> L^q(mu_s) norm of the kernel operator.

    Nonlinear power iteration restricted to f >= 0 (the kernel preserves
    positivity), multi-start; the result is a certified lower bound up to
    discretization of the true norm.
    """
    if p <= 1.0 or q < p:
        raise ValueError("need 1 < p <= q")
    A = kernel.values * kernel.weights_t[None, :]
    w_s, w_t = kernel.weights_s, kernel.weights_t

    def norm_p(f):
        return float(np.sum(w_t * np.abs(f) ** p) ** (1.0 / p))

    def norm_q(g):
        return float(np.sum(w_s * np.abs(g) ** q) ** (1.0 / q))

    rng = np.random.Generator(np.random.Philox(key=seed))
    starts = [np.ones(kernel.grid.n)]
    col_mass = kernel.weights_s @ A
    bump = np.zeros(kernel.grid.n)
    bump[int(np.argmax(col_mass))] = 1.0
    starts.append(bump + 1e-6)
    while len(starts) < n_starts:
        starts.append(np.abs(rng.standard_normal(kernel.grid.n)) + 0.1)

    best, best_converged, best_iters = 0.0, False, 0
    for f0 in starts:
        f = f0 / norm_p(f0)
        run_best, val_prev, converged, it = 0.0, -1.0, False, 0
        for it in range(1, max_iter + 1):
            g = A @ f
            val = norm_q(g)
            if val <= 0:
                break
            run_best = max(run_best, val)
            if abs(val - val_prev) <= tol * val:
                converged = True
                break
            val_prev = val
            grad = (A.T @ (w_s * g ** (q - 1.0))) / w_t
            f = np.maximum(grad, 0.0) ** (1.0 / (p - 1.0))
            f = f / norm_p(f)
        if run_best > best:
            best, best_converged, best_iters = run_best, converged, it
    return OpNormResult(value=best, converged=best_converged, iterations=best_iters)


def opnorm_1_to_1(kernel):
    """Exact L^1(mu_t) -> L^1(mu_s) norm of the positive kernel operator."""
    A = kernel.values * kernel.weights_t[None, :]
    return float(np.max((kernel.weights_s @ np.abs(A)) / kernel.weights_t))
