"""Named scalar test functions on the model manifolds.

Circle fields are functions of the angle; sphere fields are functions of
z = cos(polar angle) so they are smooth across the poles and azimuthally
symmetric (the symmetric reduction the PDE reference solver works on).
Each field knows its value, its chart differential, and its metric
gradient norm, which is what the estimators and the bound right-hand
sides consume.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "CircleField",
    "SphereZField",
    "field_library",
    "get_field",
    "field_value",
    "field_dcov",
    "FLOOR_DELTA",
]

FLOOR_DELTA = 1e-3


class CircleField:
    def __init__(self, name, fn, dfn):
        self.name = name
        self.fn = fn
        self.dfn = dfn

    def value_at(self, model, t, coords, zrow=None):
        return self.fn(np.asarray(coords)[..., 0])

    def dcov_at(self, model, t, coords, zrow=None):
        return self.dfn(np.asarray(coords)[..., 0])[..., None]

    def grad_norm_at(self, model, t, coords):
        G = model.metric(t, np.asarray(coords))[..., 0, 0]
        return np.abs(self.dfn(np.asarray(coords)[..., 0])) / np.sqrt(G)


class SphereZField:
    def __init__(self, name, F, dF):
        self.name = name
        self.F = F
        self.dF = dF

    def value_at(self, model, t, coords, zrow=None):
        return self.F(model.world_z(np.asarray(coords), zrow))

    def dcov_at(self, model, t, coords, zrow=None):
        z, dz_th, dz_ph, *_ = model._z_partials(np.asarray(coords), zrow)
        fz = self.dF(z)
        return np.stack([fz * dz_th, fz * dz_ph], axis=-1)

    def grad_norm_at(self, model, t, coords):
        th = np.asarray(coords)[..., 0]
        z = np.cos(th)
        return np.abs(self.dF(z)) * np.abs(np.sin(th)) / np.sqrt(model.scale(t))


def _circle_library():
    d = FLOOR_DELTA
    return {
        "one": CircleField("one", lambda th: np.ones_like(th), lambda th: np.zeros_like(th)),
        "cos1": CircleField("cos1", lambda th: 1.0 + 0.5 * np.cos(th), lambda th: -0.5 * np.sin(th)),
        "cos2": CircleField("cos2", lambda th: 1.0 + 0.25 * np.cos(2 * th), lambda th: -0.5 * np.sin(2 * th)),
        "mix": CircleField(
            "mix",
            lambda th: 1.0 + 0.3 * np.cos(th) + 0.2 * np.sin(2 * th),
            lambda th: -0.3 * np.sin(th) + 0.4 * np.cos(2 * th),
        ),
        "bump": CircleField(
            "bump",
            lambda th: d + np.exp(4.0 * (np.cos(th - np.pi) - 1.0)),
            lambda th: -4.0 * np.sin(th - np.pi) * np.exp(4.0 * (np.cos(th - np.pi) - 1.0)),
        ),
    }


def _sphere_library():
    d = FLOOR_DELTA
    return {
        "one": SphereZField("one", lambda z: np.ones_like(z), lambda z: np.zeros_like(z)),
        "cos1": SphereZField("cos1", lambda z: 1.0 + 0.5 * z, lambda z: 0.5 * np.ones_like(z)),
        "cos2": SphereZField("cos2", lambda z: 1.0 + 0.25 * (2 * z * z - 1.0), lambda z: z),
        "mix": SphereZField(
            "mix",
            lambda z: 1.0 + 0.3 * z + 0.2 * (2 * z * z - 1.0),
            lambda z: 0.3 + 0.8 * z,
        ),
        "bump": SphereZField(
            "bump",
            lambda z: d + np.exp(4.0 * (z - 1.0)),
            lambda z: 4.0 * np.exp(4.0 * (z - 1.0)),
        ),
    }


def field_library(model):
    """Named test functions suitable for the model's family."""
    return _circle_library() if model.dim == 1 else _sphere_library()


def get_field(model, name):
    lib = field_library(model)
    if name not in lib:
        raise KeyError(f"unknown test function {name!r}; have {sorted(lib)}")
    return lib[name]


def field_value(model, f, t, coords, zrow=None):
    """Evaluate a field object or plain callable at chart coords.

    Plain callables act on the angle (circle) or on world z (sphere), so
    sphere callables are azimuthally symmetric by construction.
    """
    if hasattr(f, "value_at"):
        return f.value_at(model, t, coords, zrow)
    if model.dim == 1:
        return f(np.asarray(coords)[..., 0])
    return f(model.world_z(np.asarray(coords), zrow))


def field_dcov(model, f, df, t, coords, zrow=None):
    """Chart differential of a field; df overrides the field's own derivative."""
    coords = np.asarray(coords)
    if df is not None:
        if model.dim == 1:
            return np.asarray(df(coords[..., 0]))[..., None]
        z, dz_th, dz_ph, *_ = model._z_partials(coords, zrow)
        fz = np.asarray(df(z))
        return np.stack([fz * dz_th, fz * dz_ph], axis=-1)
    if hasattr(f, "dcov_at"):
        return f.dcov_at(model, t, coords, zrow)
    raise TypeError("need an analytic differential: pass df or a field with dcov_at")
