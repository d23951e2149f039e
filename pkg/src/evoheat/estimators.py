"""Monte Carlo engines for the evolving-metric diffusion.

The driving noise follows the speeded-up convention dB^i dB^j = 2 dt
delta_ij, so the generator of the path is Delta_t (no 1/2); this is pinned
by the Fourier-decay test e^{-(t-s)} on the static circle.  Paths carry a
g_t-orthonormal frame (transported each step), the damping matrix Q in the
initial frame, the accumulated Feynman-Kac exponent, and the accumulated
correction integral of the derivative formula.

Reproducibility: path i draws from a counter-based Philox stream keyed by
(master seed, i), and reductions run in path order, so results are
bit-identical for any worker count or block size.

On the sphere the chart is rotated away from the poles per path; tensor
evaluators receive the third row of the accumulated rotation (``zrow``) so
the potential keeps its world meaning.  Scalar fields evaluated on sphere
endpoints must be azimuthally symmetric (functions of world z), matching
the reference solver's symmetric reduction.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import HypothesisViolation, StepTooLarge
from .fields import field_dcov, field_value
from .geometry import TWO_PI, Point, coords_of, measure_mu
from .transport import DampingMatrix, Frame, gram_schmidt, orthonormal_frame

__all__ = [
    "EstimatorResult",
    "PathState",
    "simulate_path",
    "semigroup",
    "feynman_kac",
    "bismut_gradient",
    "kernel_density",
    "martingale_diagnostic",
    "weak_order_regression",
]

DEFAULT_MAX_DT = 0.01
ROTATE_BAND = 0.2

# chart rotation S = R_y(pi/2): swaps the pole axis into the equator
_S_ROT = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
_S_ID = np.eye(3)


@dataclass
class EstimatorResult:
    mean: float
    stderr: float
    n_paths: int
    dt: float
    seed: int

    def within(self, target, sigmas=3.0, extra=0.0):
        return abs(self.mean - target) <= sigmas * self.stderr + extra


@dataclass
class PathState:
    """One recorded point of a simulated path."""

    x: Point
    frame: Frame
    Q: DampingMatrix
    fk_exponent: float
    bismut_accum: float
    t: float
    rng_stream: int


def path_key(seed, index):
    """128-bit Philox key for one path substream."""
    return ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) + int(index)


def _normals(key, shape):
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(shape)


def _steps(s, t, dt):
    span = t - s
    n = max(int(np.ceil(span / dt - 1e-9)), 1) if span > 0 else 0
    dts = np.full(n, dt)
    if n:
        dts[-1] = span - (n - 1) * dt
    return dts


# ---------------------------------------------------------------------------
# sphere chart bookkeeping
# ---------------------------------------------------------------------------

def _sphere_jac(coords):
    th, ph = coords[..., 0], coords[..., 1]
    sth, cth = np.sin(th), np.cos(th)
    cph, sph = np.cos(ph), np.sin(ph)
    J = np.empty(coords.shape[:-1] + (3, 2))
    J[..., 0, 0] = cth * cph
    J[..., 1, 0] = cth * sph
    J[..., 2, 0] = -sth
    J[..., 0, 1] = -sth * sph
    J[..., 1, 1] = sth * cph
    J[..., 2, 1] = 0.0
    return J


def _chart_transform(model, coords, U, zrow, S):
    """Re-express coords/frame/zrow of a batch in the chart rotated by S."""
    e_new = model.embed(coords) @ S
    coords_new = model.polar_from_embed(e_new)
    w = np.einsum("ec,...ek->...ck", S, _sphere_jac(coords) @ U)
    tmp = np.einsum("...ec,...ek->...ck", _sphere_jac(coords_new), w)
    tmp[..., 1, :] /= np.sin(coords_new[..., 0])[..., None] ** 2
    return coords_new, tmp, zrow @ S


def _fix_sphere_chart(model, coords, U, zrow, band):
    th = coords[..., 0]
    bad = (th < 0.0) | (th > np.pi)
    if np.any(bad):
        coords[bad], U[bad], zrow[bad] = _chart_transform(model, coords[bad], U[bad], zrow[bad], _S_ID)
    near = np.abs(np.cos(coords[..., 0])) > np.cos(band)
    if np.any(near):
        coords[near], U[near], zrow[near] = _chart_transform(model, coords[near], U[near], zrow[near], _S_ROT)
    coords[..., 1] %= TWO_PI
    return coords, U, zrow


# ---------------------------------------------------------------------------
# block engine
# ---------------------------------------------------------------------------

def _simulate_block(model, s, dts, x0c, keys, signs, *, probe_a=None, need_q=False,
                    q_method="heun", checkpoints_idx=(), rotate_band=ROTATE_BAND,
                    record=False, increments=None):
    """Advance a block of paths from s over the steps ``dts``; vectorized."""
    d = model.dim
    nb = len(keys)
    n_steps = len(dts)
    sphere = d == 2

    coords = np.tile(np.asarray(x0c, float), (nb, 1))
    zrow = np.tile(np.array([0.0, 0.0, 1.0]), (nb, 1)) if sphere else None
    G0 = model.metric(s, coords, zrow)
    L = np.linalg.cholesky(G0)
    U = np.linalg.inv(np.swapaxes(L, -1, -2))
    q = np.tile(np.eye(d), (nb, 1, 1)) if need_q else None
    fk = np.zeros(nb)
    bis = np.zeros(nb) if probe_a is not None else None

    if increments is None:
        incs = np.stack([_normals(k, (n_steps, d)) for k in keys]) if n_steps else np.zeros((nb, 0, d))
        incs *= signs[:, None, None]
    else:
        incs = increments

    if sphere:
        coords, U, zrow = _fix_sphere_chart(model, coords, U, zrow, rotate_band)

    A_prev = None
    q_prev = None
    q_pred = None
    dt_prev = 0.0
    t_cur = s
    snapshots = {}
    records = [] if record else None

    def heun_complete(A_now):
        nonlocal q
        if q_method == "euler" or A_prev is None:
            return
        q[:] = q_prev - 0.5 * dt_prev * (A_prev @ q_prev + A_now @ q_pred)

    for k in range(n_steps):
        dt_k = dts[k]
        # tensors at the current point
        G = model.metric(t_cur, coords, zrow)
        H = model.metric_h(t_cur, coords, zrow)
        if need_q:
            A = model.ricci(t_cur, coords) + H + model.hess_phi(t_cur, coords, zrow)
            A = np.einsum("...ki,...kl,...lj->...ij", U, A, U)
            heun_complete(A)
        if record:
            records.append((t_cur, coords.copy(), U.copy(),
                            q.copy() if need_q else None, fk.copy(),
                            bis.copy() if bis is not None else None,
                            zrow.copy() if sphere else None))
        if k in checkpoints_idx:
            snapshots[k] = (t_cur, coords.copy(), zrow.copy() if sphere else None, fk.copy())

        t_mid = t_cur + 0.5 * dt_k
        fk += model.varrho(t_mid, coords, zrow) * dt_k
        if bis is not None:
            w = np.einsum("bki,bij,j->bk", U, q, probe_a)
            bis += np.einsum("bk,bk->b", model.dvarrho(t_mid, coords, zrow), w) * dt_k

        # Euler-Maruyama move and first-order frame transport
        dB = incs[:, k, :] * np.sqrt(2.0 * dt_k)
        dx = np.einsum("bki,bi->bk", U, dB) - model.grad_phi(t_cur, coords, zrow) * dt_k
        Gamma = model.christoffel(t_cur, coords)
        GinvH = np.linalg.solve(G, H)
        U = U - np.einsum("bkij,bi,bja->bka", Gamma, dx, U) + dt_k * np.einsum("bkj,bja->bka", GinvH, U)
        coords = coords + dx
        if sphere:
            coords, U, zrow = _fix_sphere_chart(model, coords, U, zrow, rotate_band)
        else:
            coords[..., 0] %= TWO_PI
        t_cur = t_cur + dt_k
        U = gram_schmidt(U, model.metric(t_cur, coords, zrow))

        if need_q:
            pred = q - dt_k * (A @ q)
            if q_method == "euler":
                q = pred
            else:
                q_prev, q_pred, A_prev, dt_prev = q.copy(), pred, A, dt_k

    if need_q and n_steps and q_method != "euler":
        A_end = model.ricci(t_cur, coords) + model.metric_h(t_cur, coords, zrow) \
            + model.hess_phi(t_cur, coords, zrow)
        A_end = np.einsum("...ki,...kl,...lj->...ij", U, A_end, U)
        heun_complete(A_end)

    if record:
        records.append((t_cur, coords.copy(), U.copy(), q.copy() if need_q else None,
                        fk.copy(), bis.copy() if bis is not None else None,
                        zrow.copy() if sphere else None))

    return {
        "coords": coords, "zrow": zrow, "U": U, "q": q, "fk": fk, "bis": bis,
        "snapshots": snapshots, "records": records, "t": t_cur,
    }


def _run_paths(model, s, t, x0, dt, n_paths, seed, *, probe_a=None, need_q=False,
               q_method="heun", checkpoints_idx=(), workers=1, antithetic=False,
               max_dt=DEFAULT_MAX_DT, block_size=None):
    """Run all paths in keyed blocks; outputs are indexed by path."""
    if dt > max_dt:
        raise StepTooLarge(f"dt={dt} exceeds the configured maximum {max_dt}")
    if not (s <= t < model.T):
        raise ValueError(f"need s <= t < T, got s={s}, t={t}, T={model.T}")
    x0c = coords_of(x0)
    model.check_coords(x0c)
    dts = _steps(s, t, dt)
    d = model.dim
    n_steps = len(dts)
    if block_size is None:
        block_size = int(np.clip(8_000_000 // max(n_steps * d, 1), 64, 4096))

    out = {
        "coords": np.empty((n_paths, d)),
        "fk": np.empty(n_paths),
        "U": np.empty((n_paths, d, d)),
        "q": np.empty((n_paths, d, d)) if need_q else None,
        "bis": np.empty(n_paths) if probe_a is not None else None,
        "zrow": np.empty((n_paths, 3)) if d == 2 else None,
        "snapshots": {k: (np.empty((n_paths, d)), np.empty((n_paths, 3)) if d == 2 else None,
                          np.empty(n_paths), [None]) for k in checkpoints_idx},
    }

    def run_range(a, b):
        idx = np.arange(a, b)
        if antithetic:
            keys = [path_key(seed, i // 2) for i in idx]
            signs = np.where(idx % 2 == 0, 1.0, -1.0)
        else:
            keys = [path_key(seed, i) for i in idx]
            signs = np.ones(len(idx))
        res = _simulate_block(model, s, dts, x0c, keys, signs, probe_a=probe_a,
                              need_q=need_q, q_method=q_method,
                              checkpoints_idx=checkpoints_idx)
        out["coords"][a:b] = res["coords"]
        out["fk"][a:b] = res["fk"]
        out["U"][a:b] = res["U"]
        if need_q:
            out["q"][a:b] = res["q"]
        if probe_a is not None:
            out["bis"][a:b] = res["bis"]
        if d == 2:
            out["zrow"][a:b] = res["zrow"]
        for k, (t_k, c_k, z_k, fk_k) in res["snapshots"].items():
            out["snapshots"][k][0][a:b] = c_k
            if d == 2:
                out["snapshots"][k][1][a:b] = z_k
            out["snapshots"][k][2][a:b] = fk_k
            out["snapshots"][k][3][0] = t_k

    ranges = [(a, min(a + block_size, n_paths)) for a in range(0, n_paths, block_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(lambda r: run_range(*r), ranges))
    else:
        for r in ranges:
            run_range(*r)
    return out


def _reduce(values, n_paths, dt, seed):
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return EstimatorResult(mean=mean, stderr=stderr, n_paths=n_paths, dt=dt, seed=seed)


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------

def simulate_path(model, s, t, x0, dt, seed=0, path_index=0, *, probe=None,
                  q_method="heun", max_dt=DEFAULT_MAX_DT):
    """Simulate one path and return its recorded trajectory.

    The trajectory holds position, frame, damping matrix, Feynman-Kac
    exponent and correction integral at every step time.
    """
    if dt > max_dt:
        raise StepTooLarge(f"dt={dt} exceeds the configured maximum {max_dt}")
    x0c = coords_of(x0)
    model.check_coords(x0c)
    probe_a = None
    if probe is not None:
        U0 = orthonormal_frame(model, s, x0c).columns
        probe_a = np.linalg.solve(U0, np.asarray(probe, float))
    dts = _steps(s, t, dt)
    res = _simulate_block(model, s, dts, x0c, [path_key(seed, path_index)], np.ones(1),
                          probe_a=probe_a, need_q=True, q_method=q_method, record=True)
    states = []
    for (tq, c, U, q, fk, bis, zrow) in res["records"]:
        states.append(PathState(
            x=Point(tuple(np.atleast_1d(c[0]))),
            frame=Frame(columns=U[0].copy(), t=tq),
            Q=DampingMatrix(Q=q[0].copy(), s=s),
            fk_exponent=float(fk[0]),
            bismut_accum=float(bis[0]) if bis is not None else 0.0,
            t=tq,
            rng_stream=path_index,
        ))
    return states


def semigroup(model, s, t, x, f, n_paths, dt, *, seed=0, workers=1,
              antithetic=False, max_dt=DEFAULT_MAX_DT):
    """Plain Monte Carlo estimate of P_{s,t} f(x) = E[f(X_t) | X_s = x]."""
    res = _run_paths(model, s, t, x, dt, n_paths, seed, workers=workers,
                     antithetic=antithetic, max_dt=max_dt)
    vals = field_value(model, f, t, res["coords"], res["zrow"])
    return _reduce(vals, n_paths, dt, seed)


def feynman_kac(model, s, t, x, f, n_paths, dt, *, seed=0, workers=1,
                antithetic=False, max_dt=DEFAULT_MAX_DT):
    """Estimate the conjugate semigroup P^rho_{s,t} f(x) by the Feynman-Kac weight."""
    res = _run_paths(model, s, t, x, dt, n_paths, seed, workers=workers,
                     antithetic=antithetic, max_dt=max_dt)
    vals = np.exp(-res["fk"]) * field_value(model, f, t, res["coords"], res["zrow"])
    return _reduce(vals, n_paths, dt, seed)


def _check_derivative_hypotheses(model, s, t):
    grid = model.grid(257)
    for tt in np.linspace(s, max(t - 1e-9, s), 9):
        rho = model.varrho(tt, grid)
        dva = model.dvarrho(tt, grid)
        gi = model.inv_metric(tt, grid)
        norm = np.einsum("...i,...ij,...j->...", dva, gi, dva)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(norm))):
            raise HypothesisViolation("varrho or |d varrho| not finite on the model")


def bismut_gradient(model, s, t, x, v, f, df=None, n_paths=10000, dt=1e-3, *,
                    seed=0, workers=1, antithetic=False, max_dt=DEFAULT_MAX_DT):
    """Derivative estimate (d P^rho_{s,t} f)(v) by the damped-transport formula.

    The estimand is exp(-int rho) [ df(// Q v)(X_t) - f(X_t) * int d rho(// Q v) ].
    ``v`` is a chart tangent vector at x; ``df`` may be omitted when f is a
    field with an analytic differential.
    """
    _check_derivative_hypotheses(model, s, t)
    x0c = coords_of(x)
    U0 = orthonormal_frame(model, s, x0c).columns
    probe_a = np.linalg.solve(U0, np.asarray(v, float))
    res = _run_paths(model, s, t, x, dt, n_paths, seed, probe_a=probe_a, need_q=True,
                     workers=workers, antithetic=antithetic, max_dt=max_dt)
    w = np.einsum("bki,bij,j->bk", res["U"], res["q"], probe_a)
    dcov = field_dcov(model, f, df, t, res["coords"], res["zrow"])
    term1 = np.einsum("bk,bk->b", dcov, w)
    fvals = field_value(model, f, t, res["coords"], res["zrow"])
    vals = np.exp(-res["fk"]) * (term1 - fvals * res["bis"])
    return _reduce(vals, n_paths, dt, seed)


@dataclass
class KernelDensityResult:
    """Histogram estimate of the (conjugate) kernel density against mu_t."""

    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    mu_bins: np.ndarray
    conjugate: bool


def kernel_density(model, s, t, x, n_paths, dt, bins=32, *, conjugate=False,
                   seed=0, workers=1, max_dt=DEFAULT_MAX_DT):
    """Binned endpoint density relative to mu_t; empty bins are NaN."""
    res = _run_paths(model, s, t, x, dt, n_paths, seed, workers=workers, max_dt=max_dt)
    if model.dim == 1:
        pos = res["coords"][:, 0] % TWO_PI
        edges = np.linspace(0.0, TWO_PI, bins + 1)
        mu_bins = np.array([measure_mu(model, t, (edges[i], edges[i + 1])) for i in range(bins)])
    else:
        z = np.einsum("bk,bk->b", res["zrow"], model.embed(res["coords"]))
        pos = np.arccos(np.clip(z, -1.0, 1.0))
        edges = np.linspace(0.0, np.pi, bins + 1)
        mu_bins = np.array([
            measure_mu(model, t, ((edges[i], edges[i + 1]), (0.0, TWO_PI))) for i in range(bins)
        ])
    weights = np.exp(-res["fk"]) if conjugate else np.ones(n_paths)
    idx = np.clip(np.digitize(pos, edges) - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    wsum = np.bincount(idx, weights=weights, minlength=bins)
    w2sum = np.bincount(idx, weights=weights**2, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        density = np.where(counts > 0, wsum / (n_paths * mu_bins), np.nan)
        var = np.maximum(w2sum / n_paths - (wsum / n_paths) ** 2, 0.0)
        stderr = np.where(counts > 0, np.sqrt(var / n_paths) / mu_bins, np.nan)
    return KernelDensityResult(edges=edges, density=density, stderr=stderr,
                               counts=counts, mu_bins=mu_bins, conjugate=conjugate)


def martingale_diagnostic(model, s, t, x, f, checkpoints, n_paths, dt, *,
                          seed=0, workers=1, u_eval=None, max_dt=DEFAULT_MAX_DT,
                          oracle_n_space=512):
    """Means of exp(-int_s^r rho) u(r, X_r) at the checkpoint times.

    u is the conjugate-equation solution with terminal data f; the series
    is constant in r for the exact dynamics.  Checkpoints snap to step
    times.  ``u_eval(r, positions)`` may be supplied; otherwise it is built
    from the reference solver.
    """
    dts = _steps(s, t, dt)
    cum = np.concatenate([[0.0], np.cumsum(dts)])
    ck_idx = {}
    for r in checkpoints:
        k = int(np.argmin(np.abs(cum + s - r)))
        k = min(k, len(dts))
        ck_idx[k] = None
    interior = tuple(k for k in ck_idx if k < len(dts))
    res = _run_paths(model, s, t, x, dt, n_paths, seed, checkpoints_idx=interior,
                     workers=workers, max_dt=max_dt)
    if u_eval is None:
        from . import oracle
        u_eval = oracle.conjugate_evaluator(model, s, t, f, n_space=oracle_n_space)
    out = []
    for k in sorted(ck_idx):
        if k == len(dts):
            r_k = t
            vals = np.exp(-res["fk"]) * field_value(model, f, t, res["coords"], res["zrow"])
        else:
            c_k, z_k, fk_k, t_list = res["snapshots"][k]
            r_k = s + cum[k]
            if model.dim == 1:
                pos = c_k[:, 0] % TWO_PI
            else:
                zz = np.einsum("bk,bk->b", z_k, model.embed(c_k))
                pos = np.arccos(np.clip(zz, -1.0, 1.0))
            vals = np.exp(-fk_k) * u_eval(r_k, pos)
        res_k = _reduce(vals, n_paths, dt, seed)
        out.append((r_k, res_k))
    return out


def weak_order_regression(model, s, t, x, f, dts, n_paths, *, seed=0,
                          conjugate=True, workers=1, max_dt=DEFAULT_MAX_DT):
    """Empirical weak order of the path scheme by coupled dt-halving.

    For each dt the same Brownian paths are integrated at dt and dt/2
    (coarse increments are sums of fine pairs); the mean of the pathwise
    difference of the estimand isolates the weak-error increment
    bias(dt) - bias(dt/2), which scales like dt for a first-order scheme.
    Returns (slope, levels) where levels holds (dt, |mean diff|, stderr).
    """
    span = t - s
    x0c = coords_of(x)
    levels = []
    for dt in dts:
        n_f = int(round(span / (0.5 * dt)))
        if abs(n_f * 0.5 * dt - span) > 1e-12:
            raise ValueError("t - s must be a multiple of dt/2 for the coupled run")
        block = 512
        diffs = np.empty(n_paths)

        def run_range(a, b):
            keys = [path_key(seed, i) for i in range(a, b)]
            fine = np.stack([_normals(k, (n_f, model.dim)) for k in keys])
            coarse = (fine[:, 0::2, :] + fine[:, 1::2, :]) / np.sqrt(2.0)
            ones = np.ones(len(keys))
            res_c = _simulate_block(model, s, np.full(n_f // 2, dt), x0c, keys, ones,
                                    increments=coarse)
            res_f = _simulate_block(model, s, np.full(n_f, 0.5 * dt), x0c, keys, ones,
                                    increments=fine)
            for res, sign in ((res_c, 1.0), (res_f, -1.0)):
                vals = field_value(model, f, t, res["coords"], res["zrow"])
                if conjugate:
                    vals = np.exp(-res["fk"]) * vals
                diffs[a:b] += sign * vals

        diffs[:] = 0.0
        ranges = [(a, min(a + block, n_paths)) for a in range(0, n_paths, block)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(lambda r: run_range(*r), ranges))
        else:
            for r in ranges:
                run_range(*r)
        levels.append((dt, abs(float(np.mean(diffs))),
                       float(np.std(diffs, ddof=1) / np.sqrt(n_paths))))
    logs = np.log([lv[1] for lv in levels])
    logd = np.log([lv[0] for lv in levels])
    slope = float(np.polyfit(logd, logs, 1)[0])
    return slope, levels
