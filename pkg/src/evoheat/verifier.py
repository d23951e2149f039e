"""Experiment harness: assemble models, estimators, oracle and constants
into inequality checks; parse configs; emit machine-readable reports.

Two report conventions:

* inequality checks: margin = rhs - lhs, error_budget = sum of 3*stderr
  (Monte Carlo terms), Richardson extrapolation deltas (PDE terms) and
  quadrature refinement deltas (constants); VIOLATED only when
  margin < -error_budget.
* equality checks (duality, martingale, Chapman-Kolmogorov): margin =
  tolerance - |lhs - rhs| with error_budget = 0, so HOLDS means the
  identity is met within its stated tolerance.

Reports are reproducible: every random ingredient is keyed by the config
seed and reductions are order-fixed, so a rerun is byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import constants as ct
from . import estimators as est
from . import oracle as orc
from .errors import ConfigError
from .fields import FLOOR_DELTA, field_library
from .geometry import (
    ConformalCircle,
    Point,
    ScaledCircle,
    ShrinkingSphere2,
    bound_profile,
    measure_mu,
)

logger = logging.getLogger(__name__)

__all__ = [
    "CheckReport",
    "CHECK_IDS",
    "default_config",
    "validate_config",
    "load_config",
    "run_check",
    "sweep",
    "emit",
    "summarize",
]

CHECK_IDS = (
    "harnack_i",
    "harnack_ii",
    "harnack_plain",
    "gradient",
    "kernel_bound",
    "kernel_bound_cor1",
    "kernel_bound_cor2",
    "logsob_semigroup",
    "logsob_measure",
    "supercontractivity",
    "duality",
    "martingale",
)

VERDICTS = ("HOLDS", "HOLDS_WITHIN_ERROR", "VIOLATED")


@dataclass
class CheckReport:
    check_id: str
    model: str
    f: str = ""
    s: float | None = None
    t: float | None = None
    p: float | None = None
    q: float | None = None
    r: float | None = None
    x: tuple | None = None
    y: tuple | None = None
    lhs: float = math.nan
    rhs: float = math.nan
    margin: float = math.nan
    error_budget: float = 0.0
    verdict: str = "HOLDS"
    extra: dict = field(default_factory=dict)

    @staticmethod
    def judge(margin, budget):
        if margin >= 0.0:
            return "HOLDS"
        if margin >= -budget:
            return "HOLDS_WITHIN_ERROR"
        return "VIOLATED"


def _ineq_report(check_id, model_id, lhs, rhs, budget, **params):
    margin = rhs - lhs
    return CheckReport(check_id=check_id, model=model_id, lhs=float(lhs), rhs=float(rhs),
                       margin=float(margin), error_budget=float(budget),
                       verdict=CheckReport.judge(margin, budget), **params)


def _eq_report(check_id, model_id, lhs, rhs, tol, **params):
    margin = tol - abs(lhs - rhs)
    return CheckReport(check_id=check_id, model=model_id, lhs=float(lhs), rhs=float(rhs),
                       margin=float(margin), error_budget=0.0,
                       verdict=CheckReport.judge(margin, 0.0), **params)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "models": None,
    "checks": None,
    "functions": None,
    "params": {"p": None, "q": None, "r": None, "lambda": None},
    "points": {"n_x": None, "n_y": None},
    "estimator": {"n_paths": None, "dt": None, "seed": None, "workers": None,
                  "antithetic": None, "max_dt": None},
    "oracle": {"n_space": None, "kernel_n_space": None, "steps_per_unit": None,
               "kernel_steps_per_unit": None},
    "budgets": {"mc_sigmas": None, "duality_tol": None, "ck_tol": None,
                "opnorm_inflation": None, "dt_bias_coeff": None,
                "lipschitz_budget": None},
    "mode": None,       # "oracle" | "mc" | "both"
    "workers": None,    # sweep concurrency
    "output": {"dir": None, "format": None},
}

_MODEL_SCHEMA = {
    "id": None, "kind": None, "c": None, "psi": None, "phi": None, "T": None,
    "pole_margin": None, "times": None, "kernel_times": None,
}


def _check_keys(d, schema, path):
    for k, v in d.items():
        if k not in schema:
            raise ConfigError(f"unknown config key {path}{k!r}")
        sub = schema[k]
        if isinstance(sub, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path}{k!r} must be an object")
            _check_keys(v, sub, f"{path}{k}.")


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _CONFIG_SCHEMA, "")
    if not cfg.get("models"):
        raise ConfigError("config needs at least one model")
    for m in cfg["models"]:
        _check_keys(m, _MODEL_SCHEMA, "models[].")
        if "id" not in m or "kind" not in m:
            raise ConfigError("each model needs 'id' and 'kind'")
    for c in cfg.get("checks", []):
        if c not in CHECK_IDS:
            raise ConfigError(f"unknown check id {c!r}; valid: {CHECK_IDS}")
    mode = cfg.get("mode", "oracle")
    if mode not in ("oracle", "mc", "both"):
        raise ConfigError("mode must be 'oracle', 'mc' or 'both'")
    est_cfg = cfg.get("estimator", {})
    if est_cfg.get("n_paths", 1) < 1:
        raise ConfigError("estimator.n_paths must be >= 1")
    return cfg


def default_config():
    """Config exercising every check id on the three bundled models."""
    return {
        "models": [
            {"id": "static_circle", "kind": "scaled_circle", "c": [1.0], "T": 1.0,
             "times": [[0.0, 0.15], [0.0, 0.3]], "kernel_times": [0.05, 0.1, 0.2]},
            {"id": "conformal_circle", "kind": "conformal_circle",
             "psi": {"cos": [[0.0], [0.0, 0.1]]}, "T": 1.0,
             "times": [[0.0, 0.15], [0.0, 0.3]], "kernel_times": [0.05, 0.1, 0.2]},
            {"id": "shrinking_sphere", "kind": "shrinking_sphere2", "T": 0.5,
             "times": [[0.0, 0.1], [0.0, 0.2]], "kernel_times": [0.05, 0.1, 0.2]},
        ],
        "checks": list(CHECK_IDS),
        "functions": ["one", "cos1", "cos2", "mix", "bump"],
        "params": {"p": [1.5, 2.0, 4.0], "q": [4.0], "r": [0.5, 2.0, 8.0], "lambda": [1.0]},
        "points": {"n_x": 5, "n_y": 5},
        "estimator": {"n_paths": 20000, "dt": 1e-3, "seed": 7, "workers": 1,
                      "antithetic": False, "max_dt": 0.01},
        "oracle": {"n_space": 512, "kernel_n_space": 256,
                   "steps_per_unit": 2000, "kernel_steps_per_unit": 2000},
        "budgets": {"mc_sigmas": 3.0, "duality_tol": 1e-6, "ck_tol": 1e-5,
                    "opnorm_inflation": 1.05, "dt_bias_coeff": 1.0,
                    "lipschitz_budget": 0.5},
        "mode": "oracle",
        "workers": 1,
        "output": {"dir": "out", "format": "csv"},
    }


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return validate_config(json.load(fh))


def build_model(entry):
    kind = entry["kind"]
    if kind == "scaled_circle":
        return ScaledCircle(c=entry.get("c", [1.0]), phi=entry.get("phi"),
                            T=entry.get("T", 1.0))
    if kind == "conformal_circle":
        return ConformalCircle(psi=entry.get("psi"), phi=entry.get("phi"),
                               T=entry.get("T", 1.0))
    if kind == "shrinking_sphere2":
        return ShrinkingSphere2(phi=entry.get("phi"), T=entry.get("T", 0.5),
                                pole_margin=entry.get("pole_margin", 1e-3))
    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# per-model workspace with cached oracle solves
# ---------------------------------------------------------------------------

class Workspace:
    """Model + profile + cached oracle artifacts for one config entry."""

    def __init__(self, entry, cfg):
        self.entry = entry
        self.cfg = cfg
        self.model_id = entry["id"]
        self.model = build_model(entry)
        self.profile = bound_profile(self.model)
        self.pi = ct.ProfileIntegrals(self.profile)
        self.pi_coarse = ct.ProfileIntegrals(self.profile, n_quad=1024)
        self.fields = field_library(self.model)
        ocfg = cfg.get("oracle", {})
        self.n_space = ocfg.get("n_space", 512)
        self.kernel_n_space = ocfg.get("kernel_n_space", 256)
        self.spu = ocfg.get("steps_per_unit", 2000)
        self.kernel_spu = ocfg.get("kernel_steps_per_unit", 2000)
        self.grid = orc.make_grid(self.model, self.n_space)
        self.kernel_grid = orc.make_grid(self.model, self.kernel_n_space)
        self._solves = {}
        self._kernels = {}
        self._weights = {}

    # -- config access ------------------------------------------------
    @property
    def times(self):
        return [tuple(st) for st in self.entry.get("times", [[0.0, 0.2]])]

    @property
    def kernel_times(self):
        return list(self.entry.get("kernel_times", [0.05, 0.1, 0.2]))

    def functions(self, limit=None):
        names = [n for n in self.cfg.get("functions", ["one", "cos1"]) if n in self.fields]
        return names[:limit] if limit else names

    def n_time(self, s, t, kernel=False):
        per = self.kernel_spu if kernel else self.spu
        return max(256, int(math.ceil((t - s) * per)))

    def coords(self, grid=None):
        g = grid if grid is not None else self.grid
        if self.model.dim == 1:
            return g.nodes[:, None]
        return np.stack([g.nodes, np.zeros_like(g.nodes)], axis=-1)

    def point(self, node):
        if self.model.dim == 1:
            return Point((float(node),))
        return Point((float(node), 0.0))

    def point_indices(self, n_points, grid=None):
        g = grid if grid is not None else self.grid
        return np.unique(np.linspace(0, g.n - 1, n_points).astype(int))

    def weights(self, tt):
        key = round(float(tt), 12)
        if key not in self._weights:
            self._weights[key] = orc.mu_weights(self.model, self.grid, tt)
        return self._weights[key]

    # -- terminal data ------------------------------------------------
    def terminal(self, fname, transform, tt):
        f = self.fields[fname]
        c = self.coords()
        v = np.asarray(f.value_at(self.model, tt, c), dtype=float)
        if transform == "id":
            return v
        if transform.startswith("pow:"):
            return v ** float(transform[4:])
        if transform == "sq":
            return v**2
        if transform == "sqlog":
            v = np.maximum(v, FLOOR_DELTA)
            return v**2 * np.log(v**2)
        if transform == "grad":
            return np.asarray(f.grad_norm_at(self.model, tt, c), dtype=float)
        if transform == "grad_sq":
            return np.asarray(f.grad_norm_at(self.model, tt, c), dtype=float) ** 2
        if transform == "one":
            return np.ones(self.grid.n)
        raise ValueError(f"unknown transform {transform!r}")

    def solve(self, s, t, fname, transform="id", rho_scale=1.0, plain=False):
        """Cached conjugate/plain solve with a Richardson error estimate."""
        key = (round(s, 12), round(t, 12), fname, transform, rho_scale, plain)
        if key in self._solves:
            return self._solves[key]
        data = self.terminal(fname, transform, t)
        n_time = self.n_time(s, t)
        scale = 0.0 if plain else rho_scale
        u = orc._march(self.model, self.grid, s, t, data, rho_scale=scale, n_time=n_time)
        grid_c = orc.make_grid(self.model, self.n_space // 2)
        if self.model.dim == 1:
            data_c = data[::2]
        else:
            c_c = np.stack([grid_c.nodes, np.zeros_like(grid_c.nodes)], axis=-1)
            f = self.fields[fname]
            data_c = {
                "id": lambda: f.value_at(self.model, t, c_c),
                "grad": lambda: f.grad_norm_at(self.model, t, c_c),
                "grad_sq": lambda: np.asarray(f.grad_norm_at(self.model, t, c_c))**2,
                "one": lambda: np.ones(grid_c.n),
            }.get(transform)
            if data_c is None:
                v = np.asarray(f.value_at(self.model, t, c_c), dtype=float)
                if transform.startswith("pow:"):
                    data_c = v ** float(transform[4:])
                elif transform == "sq":
                    data_c = v**2
                else:
                    v = np.maximum(v, FLOOR_DELTA)
                    data_c = v**2 * np.log(v**2)
            else:
                data_c = np.asarray(data_c(), dtype=float)
        u_c = orc._march(self.model, grid_c, s, t, np.asarray(data_c, float),
                         rho_scale=scale, n_time=max(n_time // 2, 16))
        if self.model.dim == 1:
            from .geometry import TWO_PI
            xc = np.concatenate([grid_c.nodes, [TWO_PI]])
            vc = np.concatenate([u_c, [u_c[0]]])
            u_on_f = np.interp(self.grid.nodes, xc, vc)
        else:
            u_on_f = np.interp(self.grid.nodes, grid_c.nodes, u_c)
        err = np.abs(u - u_on_f) / 3.0
        self._solves[key] = (u, err)
        return self._solves[key]

    def kernel(self, s, t, conjugate):
        key = (round(s, 12), round(t, 12), conjugate)
        if key in self._kernels:
            return self._kernels[key]
        n_time = self.n_time(s, t, kernel=True)
        K = orc.kernel_matrix(self.model, s, t, self.kernel_grid, conjugate=conjugate,
                              n_time=n_time)
        K_c = orc.kernel_matrix(self.model, s, t, orc.make_grid(self.model, self.kernel_n_space // 2),
                                conjugate=conjugate, n_time=max(n_time // 2, 16))
        self._kernels[key] = (K, K_c)
        return self._kernels[key]

    def rhs_budget(self, fn):
        """Quadrature refinement delta of a constants expression."""
        return abs(fn(self.pi) - fn(self.pi_coarse))

    def mc_kwargs(self):
        e = self.cfg.get("estimator", {})
        return dict(n_paths=e.get("n_paths", 20000), dt=e.get("dt", 1e-3),
                    seed=e.get("seed", 7), workers=e.get("workers", 1),
                    antithetic=e.get("antithetic", False),
                    max_dt=e.get("max_dt", est.DEFAULT_MAX_DT))

    def budgets(self):
        return self.cfg.get("budgets", {})

    def mode(self):
        return self.cfg.get("mode", "oracle")


def hypotheses_ok(ws, check_id, s, t):
    """Theorem hypotheses on the model; (ok, reason)."""
    if not ws.profile.finite_on(s, max(t - 1e-9, s)):
        return False, "bound profile not finite on [s, t]"
    if check_id == "kernel_bound_cor1":
        ts = np.linspace(s, max(t - 1e-9, s), 16)
        if np.max(ws.profile.sup_rho_plus(ts)) > 1e-9 or np.max(ws.profile.sup_rho_minus(ts)) > 1e-9:
            return False, "not a coupled modified flow (varrho != 0)"
    if check_id == "kernel_bound_cor2" and getattr(ws.model, "phi", None) is not None:
        return False, "requires phi = 0"
    return True, ""


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def _check_duality(ws):
    rows = []
    tol = ws.budgets().get("duality_tol", 1e-6)
    for (s, t) in ws.times:
        w_s = ws.weights(s)
        w_t = ws.weights(t)
        for fname in ws.functions():
            fv = ws.terminal(fname, "id", t)
            if ws.mode() in ("oracle", "both"):
                u, _ = ws.solve(s, t, fname, "id")
                rows.append(_eq_report("duality", ws.model_id, float(w_s @ u), float(w_t @ fv),
                                       tol, f=fname, s=s, t=t))
            if ws.mode() in ("mc", "both"):
                rows.append(_mc_duality_row(ws, s, t, fname))
    return rows


def _mc_duality_row(ws, s, t, fname):
    """mu_s-quadrature of Feynman-Kac estimates against mu_t(f)."""
    kw = ws.mc_kwargs()
    kw["n_paths"] = max(kw["n_paths"] // 8, 1000)
    sig = ws.budgets().get("mc_sigmas", 3.0)
    nodes_idx = ws.point_indices(16)
    w_full = ws.weights(s)
    total = 0.0
    var = 0.0
    # coarse quadrature: each kept node represents a slab of the grid
    slab = ws.grid.n / len(nodes_idx)
    f = ws.fields[fname]
    for i in nodes_idx:
        r = est.feynman_kac(ws.model, s, t, ws.point(ws.grid.nodes[i]), f, **kw)
        wgt = w_full[i] * slab
        total += wgt * r.mean
        var += (wgt * r.stderr) ** 2
    rhs = float(ws.weights(t) @ ws.terminal(fname, "id", t))
    quad_tol = 0.05 * abs(rhs) + sig * math.sqrt(var) + ws.budgets().get("dt_bias_coeff", 1.0) * kw["dt"]
    return _eq_report("duality", ws.model_id, total, rhs, quad_tol, f=fname, s=s, t=t,
                      extra={"mc": True, "stderr_sum": math.sqrt(var)})


def _check_martingale(ws):
    rows = []
    kw = ws.mc_kwargs()
    sig = ws.budgets().get("mc_sigmas", 3.0)
    for (s, t) in ws.times[:1]:
        checkpoints = [s + u * (t - s) for u in (0.0, 0.25, 0.5, 0.75, 1.0)]
        for fname in ws.functions(limit=2):
            f = ws.fields[fname]
            x = ws.point(ws.grid.nodes[ws.grid.n // 3])
            u_eval = orc.conjugate_evaluator(ws.model, s, t, f, n_space=ws.n_space,
                                             n_time=ws.n_time(s, t))
            series = est.martingale_diagnostic(ws.model, s, t, x, f, checkpoints,
                                               kw["n_paths"], kw["dt"], seed=kw["seed"],
                                               workers=kw["workers"], u_eval=u_eval)
            ref = series[0][1].mean  # r = s gives u(s, x) with zero variance
            for (r_k, res) in series:
                tol = sig * res.stderr + ws.budgets().get("dt_bias_coeff", 1.0) * kw["dt"]
                rows.append(_eq_report("martingale", ws.model_id, res.mean, ref, tol,
                                       f=fname, s=s, t=t, r=r_k, x=tuple(x.coords)))
    return rows


def _lhs_conjugate(ws, s, t, fname, x_idx, power=1.0):
    """(value, budget) of (P^rho f(x))^power, oracle or Monte Carlo."""
    sig = ws.budgets().get("mc_sigmas", 3.0)
    if ws.mode() == "mc":
        kw = ws.mc_kwargs()
        r = est.feynman_kac(ws.model, s, t, ws.point(ws.grid.nodes[x_idx]), ws.fields[fname], **kw)
        base = max(abs(r.mean), 1e-12)
        budget = sig * abs(power) * base ** (power - 1.0) * r.stderr \
            + ws.budgets().get("dt_bias_coeff", 1.0) * kw["dt"]
        return r.mean ** power, budget
    u, err = ws.solve(s, t, fname, "id")
    base = max(abs(u[x_idx]), 1e-12)
    return u[x_idx] ** power, abs(power) * base ** (power - 1.0) * err[x_idx]


def _check_harnack(ws, variant):
    rows = []
    n_x = ws.cfg.get("points", {}).get("n_x", 5)
    n_y = ws.cfg.get("points", {}).get("n_y", 5)
    ps = ws.cfg.get("params", {}).get("p", [2.0])
    xs = ws.point_indices(n_x)
    ys = ws.point_indices(n_y)
    for (s, t) in ws.times:
        ok, reason = hypotheses_ok(ws, variant, s, t)
        if not ok:
            logger.warning("skip %s on %s: %s", variant, ws.model_id, reason)
            continue
        for fname in ws.functions(limit=2):
            lhs_all = {i: _lhs_conjugate(ws, s, t, fname, i) for i in xs} \
                if variant != "harnack_plain" else None
            if variant == "harnack_plain":
                u_pl, err_pl = ws.solve(s, t, fname, "id", plain=True)
            for p in ps:
                if p <= 1.0:
                    continue
                if variant == "harnack_plain":
                    up, errp = ws.solve(s, t, fname, f"pow:{p}", plain=True)
                else:
                    up, errp = ws.solve(s, t, fname, f"pow:{p}")
                if variant == "harnack_ii":
                    moment, err_m = ws.solve(s, t, "one", "one", rho_scale=p - 1.0)
                for i in xs:
                    if variant == "harnack_plain":
                        lhs, lhs_budget = u_pl[i] ** p, p * max(abs(u_pl[i]), 1e-12) ** (p - 1) * err_pl[i]
                    else:
                        base, base_budget = lhs_all[i]
                        lhs = base ** p
                        lhs_budget = p * max(abs(base), 1e-12) ** (p - 1.0) * base_budget
                    for j in ys:
                        xpt = ws.point(ws.grid.nodes[i])
                        ypt = ws.point(ws.grid.nodes[j])
                        if variant == "harnack_i":
                            rhs = ct.harnack_rhs_i(ws.model, ws.pi, s, t, xpt.coords, ypt.coords, p, up[j])
                            quad = ws.rhs_budget(lambda pi: ct.harnack_rhs_i(
                                ws.model, pi, s, t, xpt.coords, ypt.coords, p, up[j]))
                            rhs_budget = quad + errp[j] / max(up[j], 1e-12) * abs(rhs)
                        elif variant == "harnack_ii":
                            rhs = ct.harnack_rhs_ii(ws.model, ws.pi, s, t, xpt.coords, ypt.coords,
                                                    p, up[j], moment[j])
                            quad = ws.rhs_budget(lambda pi: ct.harnack_rhs_ii(
                                ws.model, pi, s, t, xpt.coords, ypt.coords, p, up[j], moment[j]))
                            rhs_budget = quad + (errp[j] / max(up[j], 1e-12)
                                                 + err_m[j] / max(moment[j], 1e-12)) * abs(rhs)
                        else:
                            rhs = ct.plain_harnack_rhs(ws.model, ws.pi, s, t, xpt.coords, ypt.coords,
                                                       p, up[j])
                            quad = ws.rhs_budget(lambda pi: ct.plain_harnack_rhs(
                                ws.model, pi, s, t, xpt.coords, ypt.coords, p, up[j]))
                            rhs_budget = quad + errp[j] / max(up[j], 1e-12) * abs(rhs)
                        rows.append(_ineq_report(variant, ws.model_id, lhs, rhs,
                                                 lhs_budget + rhs_budget, f=fname, s=s, t=t,
                                                 p=p, x=tuple(xpt.coords), y=tuple(ypt.coords)))
    return rows


def _check_gradient(ws):
    rows = []
    n_x = ws.cfg.get("points", {}).get("n_x", 5)
    xs = ws.point_indices(max(n_x, 8))
    for (s, t) in ws.times:
        ok, reason = hypotheses_ok(ws, "gradient", s, t)
        if not ok:
            logger.warning("skip gradient on %s: %s", ws.model_id, reason)
            continue
        for fname in ws.functions():
            u, err_u = ws.solve(s, t, fname, "id")
            pg, err_pg = ws.solve(s, t, fname, "grad")
            lhs_grid = orc.gradient_norm_on_grid(ws.model, ws.grid, s, u)
            rhs_grid = ct.gradient_bound_rhs(ws.pi, s, t, pg, u)
            quad = ws.rhs_budget(lambda pi: float(np.max(ct.gradient_bound_rhs(pi, s, t, pg, u)
                                                         - rhs_grid)))
            grad_err = 2.0 * err_u / ws.grid.h  # centered-difference amplification
            for i in xs:
                budget = abs(quad) + grad_err[i] + err_pg[i] + err_u[i] * ws.pi.kappa_decay(s, t)
                rows.append(_ineq_report("gradient", ws.model_id, lhs_grid[i], rhs_grid[i],
                                         budget, f=fname, s=s, t=t,
                                         x=tuple(ws.point(ws.grid.nodes[i]).coords)))
    return rows


def _check_kernel_bound(ws, variant):
    rows = []
    ck_tol = ws.budgets().get("ck_tol", 1e-5)
    n_pts = ws.cfg.get("points", {}).get("n_x", 5)
    for t in ws.kernel_times:
        ok, reason = hypotheses_ok(ws, variant, 0.0, t)
        if not ok:
            logger.warning("skip %s on %s: %s", variant, ws.model_id, reason)
            continue
        K, K_c = ws.kernel(0.0, t, conjugate=False)
        idx_c = ws.point_indices(n_pts, grid=K_c.grid)
        for ic in idx_c:
            for jc in idx_c:
                node_x, node_y = K_c.grid.nodes[ic], K_c.grid.nodes[jc]
                i = int(np.argmin(np.abs(K.grid.nodes - node_x)))
                j = int(np.argmin(np.abs(K.grid.nodes - node_y)))
                lhs = K.values[i, j]
                lhs_budget = abs(K.values[i, j] - K_c.values[ic, jc]) / 3.0
                xpt, ypt = ws.point(K.grid.nodes[i]), ws.point(K.grid.nodes[j])
                vkey = {"kernel_bound": "general", "kernel_bound_cor1": "cor1",
                        "kernel_bound_cor2": "cor2"}[variant]
                rhs = ct.kernel_bound_rhs(ws.model, ws.pi, t, xpt.coords, ypt.coords, vkey)
                quad = ws.rhs_budget(lambda pi: ct.kernel_bound_rhs(
                    ws.model, pi, t, xpt.coords, ypt.coords, vkey))
                rows.append(_ineq_report(variant, ws.model_id, lhs, rhs, lhs_budget + quad,
                                         f="kernel", s=0.0, t=t,
                                         x=tuple(xpt.coords), y=tuple(ypt.coords)))
        if variant == "kernel_bound":
            # Chapman-Kolmogorov on the shared grid
            K1, _ = ws.kernel(0.0, 0.5 * t, conjugate=False)
            K2, _ = ws.kernel(0.5 * t, t, conjugate=False)
            w_half = orc.mu_weights(ws.model, K.grid, 0.5 * t)
            compose = (K1.values * w_half[None, :]) @ K2.values
            deficit = float(np.max(np.abs(compose - K.values)))
            scale = float(np.max(np.abs(K.values)))
            rows.append(_eq_report("kernel_bound", ws.model_id, deficit, 0.0,
                                   ck_tol * max(scale, 1.0), f="chapman_kolmogorov",
                                   s=0.0, t=t))
    return rows


def _check_logsob_semigroup(ws):
    rows = []
    xs = ws.point_indices(8)
    for (s, t) in ws.times:
        ok, reason = hypotheses_ok(ws, "logsob_semigroup", s, t)
        if not ok:
            logger.warning("skip logsob_semigroup on %s: %s", ws.model_id, reason)
            continue
        for fname in ws.functions():
            ul, err_l = ws.solve(s, t, fname, "sqlog")
            ug2, err_g2 = ws.solve(s, t, fname, "grad_sq")
            uf2, err_f2 = ws.solve(s, t, fname, "sq")
            rhs_grid = ct.logsob_semigroup_rhs(ws.pi, s, t, ug2, uf2)
            quad = abs(ws.rhs_budget(lambda pi: float(np.max(
                ct.logsob_semigroup_rhs(pi, s, t, ug2, uf2) - rhs_grid))))
            for i in xs:
                sens = 4.0 * ws.pi.decay_to_t(s, t) * err_g2[i] \
                    + (abs(np.log(max(uf2[i], 1e-12))) + 1.0 + ws.pi.logsob_additive(s, t)) * err_f2[i]
                budget = err_l[i] + sens + quad
                rows.append(_ineq_report("logsob_semigroup", ws.model_id, ul[i], rhs_grid[i],
                                         budget, f=fname, s=s, t=t,
                                         x=tuple(ws.point(ws.grid.nodes[i]).coords)))
    return rows


def _opnorm_upper(ws, s, t, p, q, inflation):
    """Inflated power-iteration norm of the conjugate kernel on [s, t]."""
    if t - s < 1e-9:
        return math.inf
    K, _ = ws.kernel(s, t, conjugate=True)
    res = orc.opnorm_p_to_q(K, p, q, seed=ws.mc_kwargs()["seed"])
    return res.value * inflation


def _check_logsob_measure(ws):
    rows = []
    params = ws.cfg.get("params", {})
    ps = [p for p in params.get("p", [2.0]) if p > 1.0][:1] or [2.0]
    qs = params.get("q", [4.0])
    rs = params.get("r", [0.5, 2.0, 8.0])
    inflation = ws.budgets().get("opnorm_inflation", 1.05)
    p, q = ps[0], qs[0]
    if q <= p:
        q = 2.0 * p
    for (_, t) in ws.times[-1:]:
        ok, reason = hypotheses_ok(ws, "logsob_measure", 0.0, t)
        if not ok:
            logger.warning("skip logsob_measure on %s: %s", ws.model_id, reason)
            continue
        w_t = ws.weights(t)
        for r in rs:
            s_star, flag = ct.gamma_inverse(ws.pi, p, q, t, r)
            opn = _opnorm_upper(ws, s_star, t, p, q, inflation)
            consts = ct.logsob_constants(ws.pi, p, q, t, r, opn)
            sens = {}
            for fac in (1.0, 1.10):
                c2 = ct.logsob_constants(ws.pi, p, q, t, r, opn / inflation * fac)
                sens[f"beta_at_{fac:.2f}"] = c2.beta
            for fname in ws.functions():
                fv = ws.terminal(fname, "id", t)
                nrm = math.sqrt(float(w_t @ fv**2))
                fh = np.maximum(np.abs(fv / nrm), 1e-150)
                lhs = float(w_t @ (fh**2 * np.log(fh**2)))
                grad = ws.terminal(fname, "grad", t) / nrm
                rhs = r * float(w_t @ grad**2) + consts.beta
                budget = 1e-8 * (abs(lhs) + abs(rhs)) + 1e-10
                rows.append(_ineq_report("logsob_measure", ws.model_id, lhs, rhs, budget,
                                         f=fname, t=t, p=p, q=q, r=r,
                                         extra={"s_star": s_star, "r_too_large": flag,
                                                "opnorm_upper": opn, **sens}))
    return rows


def _check_supercontractivity(ws):
    rows = []
    params = ws.cfg.get("params", {})
    ps = [v for v in params.get("p", [2.0]) if v > 1.0] or [2.0]
    p = ps[0]
    q = params.get("q", [4.0])[0]
    if q <= p:
        q = 2.0 * p
    lam = params.get("lambda", [1.0])[0]
    for (s0, t) in ws.times[-1:]:
        s = max(s0, 0.25 * t)  # keep beta_u finite: the p->q norm blows up as the span vanishes
        ok, reason = hypotheses_ok(ws, "supercontractivity", s, t)
        if not ok:
            logger.warning("skip supercontractivity on %s: %s", ws.model_id, reason)
            continue
        inflation = ws.budgets().get("opnorm_inflation", 1.05)
        small_grid = orc.make_grid(ws.model, max(ws.kernel_n_space // 2, 64))
        seed = ws.mc_kwargs()["seed"]

        def beta_fn(u, r):
            s_star, _ = ct.gamma_inverse(ws.pi, p, q, u, r)
            K = orc.kernel_matrix(ws.model, s_star, u, small_grid, conjugate=True,
                                  n_time=max(128, int((u - s_star) * ws.kernel_spu)))
            opn = orc.opnorm_p_to_q(K, p, q, seed=seed).value * inflation
            return ct.logsob_constants(ws.pi, p, q, u, r, opn).beta

        bound, r_used = ct.supercontractive_bound(ws.pi, beta_fn, p, q, s, t, n_nodes=8)
        K, _ = ws.kernel(s, t, conjugate=True)
        lower = orc.opnorm_p_to_q(K, p, q, seed=ws.mc_kwargs()["seed"]).value
        moment = ct.exp_square_moment(ws.model, t, lam)
        rows.append(_ineq_report("supercontractivity", ws.model_id, lower, bound,
                                 1e-9 * (abs(bound) + abs(lower)), f="opnorm", s=s, t=t,
                                 p=p, q=q, r=r_used,
                                 extra={"exp_square_moment": moment, "lambda": lam}))
    return rows


_CHECK_FNS = {
    "duality": _check_duality,
    "martingale": _check_martingale,
    "harnack_i": lambda ws: _check_harnack(ws, "harnack_i"),
    "harnack_ii": lambda ws: _check_harnack(ws, "harnack_ii"),
    "harnack_plain": lambda ws: _check_harnack(ws, "harnack_plain"),
    "gradient": _check_gradient,
    "kernel_bound": lambda ws: _check_kernel_bound(ws, "kernel_bound"),
    "kernel_bound_cor1": lambda ws: _check_kernel_bound(ws, "kernel_bound_cor1"),
    "kernel_bound_cor2": lambda ws: _check_kernel_bound(ws, "kernel_bound_cor2"),
    "logsob_semigroup": _check_logsob_semigroup,
    "logsob_measure": _check_logsob_measure,
    "supercontractivity": _check_supercontractivity,
}


def run_check(config, check_id, workspaces=None):
    """Run one check id over every configured model."""
    validate_config(config)
    if check_id not in CHECK_IDS:
        raise ConfigError(f"unknown check id {check_id!r}")
    if workspaces is None:
        workspaces = [Workspace(entry, config) for entry in config["models"]]
    rows = []
    for ws in workspaces:
        rows.extend(_CHECK_FNS[check_id](ws))
    return rows


def sweep(config, checks=None):
    """Cartesian sweep over the configured checks; rows ordered by (check, model)."""
    validate_config(config)
    checks = list(checks if checks is not None else config.get("checks", CHECK_IDS))
    workspaces = [Workspace(entry, config) for entry in config["models"]]
    tasks = [(ci, ws) for ci in checks for ws in workspaces]
    workers = config.get("workers", 1)
    results = [None] * len(tasks)

    def run(k):
        ci, ws = tasks[k]
        results[k] = _CHECK_FNS[ci](ws)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, range(len(tasks))))
    else:
        for k in range(len(tasks)):
            run(k)
    rows = []
    for chunk in results:
        rows.extend(chunk)
    return rows


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ("check_id", "model", "f", "s", "t", "p", "q", "r", "x", "y",
                "lhs", "rhs", "margin", "error_budget", "verdict")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        return ";".join(f"{float(c):.17g}" for c in v)
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{float(v):.17g}"


def _report_dict(rep):
    d = {k: getattr(rep, k) for k in _CSV_COLUMNS}
    d["x"] = list(rep.x) if rep.x is not None else None
    d["y"] = list(rep.y) if rep.y is not None else None
    d["extra"] = rep.extra
    return d


def emit(reports, fmt="csv", out_dir="out", name="report", meta=None):
    """Write reports to disk; fixed column order, 17-digit floats, LF endings."""
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "csv":
        path = os.path.join(out_dir, f"{name}.csv")
        lines = [",".join(_CSV_COLUMNS)]
        for rep in reports:
            lines.append(",".join(_fmt(getattr(rep, c)) for c in _CSV_COLUMNS))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        return path
    if fmt == "json":
        path = os.path.join(out_dir, f"{name}.json")
        doc = {"meta": meta or {}, "reports": [_report_dict(r) for r in reports]}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1, default=_json_default)
            fh.write("\n")
        return path
    raise ConfigError(f"unknown output format {fmt!r}")


def summarize(reports):
    """Verdict counts and minimum margin per check id."""
    out = {}
    for rep in reports:
        entry = out.setdefault(rep.check_id, {"n": 0, "min_margin": math.inf,
                                              **{v: 0 for v in VERDICTS}})
        entry["n"] += 1
        entry[rep.verdict] += 1
        if rep.margin < entry["min_margin"]:
            entry["min_margin"] = rep.margin
    return out


def exit_code(reports):
    return 2 if any(r.verdict == "VIOLATED" for r in reports) else 0
