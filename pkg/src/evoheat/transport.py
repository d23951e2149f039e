"""Frame transport under the space-time connection, and the damping matrix.

A frame is a g_t-orthonormal basis carried along a path.  Spatial motion
transports it with the Levi-Civita symbols of g_t; motion in time uses the
metric-compatible correction dU = -1/2 g^{-1}(dg/dt) U dt, which keeps
U^T g U = Id to first order.  Per-step Gram-Schmidt against the current
metric removes the remaining drift.

The damping matrix Q solves dQ/dt = -A(t) Q with A the frame representation
of Ric - 1/2 dg/dt + Hess(phi) along the path; Q is kept in the fixed
initial frame, which makes the ODE frame-covariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import coords_of

__all__ = [
    "Frame",
    "DampingMatrix",
    "orthonormal_frame",
    "gram_schmidt",
    "transport_step",
    "q_step",
    "damping_tensor_frame",
]

ORTHO_TOL = 1e-10


@dataclass
class Frame:
    """Columns are chart components of the frame vectors; g_t-orthonormal."""

    columns: np.ndarray
    t: float

    def orthonormality_defect(self, model, x, zrow=None):
        G = model.metric(self.t, coords_of(x), zrow)
        gram = self.columns.T @ G @ self.columns
        return float(np.max(np.abs(gram - np.eye(model.dim))))


@dataclass
class DampingMatrix:
    """Q_{s,.} expressed in the initial frame; Q_{s,s} = Id."""

    Q: np.ndarray
    s: float


def orthonormal_frame(model, t, x):
    """A g_t-orthonormal frame at x from the metric Cholesky factor."""
    model.check_time(t)
    c = coords_of(x)
    model.check_coords(c)
    G = model.metric(t, c)
    L = np.linalg.cholesky(G)
    return Frame(columns=np.linalg.inv(L).T, t=float(t))


def gram_schmidt(U, G):
    """Re-orthonormalize frame columns against the metric G (batched)."""
    U = np.array(U, copy=True)
    d = U.shape[-1]
    for j in range(d):
        v = U[..., :, j]
        for i in range(j):
            u = U[..., :, i]
            proj = np.einsum("...i,...ij,...j->...", v, G, u)
            v = v - proj[..., None] * u
        norm = np.sqrt(np.einsum("...i,...ij,...j->...", v, G, v))
        U[..., :, j] = v / norm[..., None]
    return U


def transport_raw(model, t, coords, U, dx, dt, zrow=None):
    """One explicit transport increment, before re-orthonormalization."""
    Gamma = model.christoffel(t, coords)
    spatial = np.einsum("...kij,...i,...ja->...ka", Gamma, dx, U)
    G = model.metric(t, coords, zrow)
    H = model.metric_h(t, coords, zrow)
    GinvH = np.linalg.solve(G, H)
    # -1/2 g^{-1}(dg/dt) U dt = + g^{-1} h U dt
    return U - spatial + dt * np.einsum("...kj,...ja->...ka", GinvH, U)


def transport_step(model, frame, x, dx, t, dt):
    """Transport a frame along the step (x, t) -> (x + dx, t + dt)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    c = coords_of(x)
    model.check_coords(c)
    model.check_time(t)
    c_new = c + np.asarray(dx, dtype=float)
    if dt > 0:
        model.check_time(t + dt)
    model.check_coords(c_new)
    U = transport_raw(model, t, c, frame.columns, np.asarray(dx, float), dt)
    G_new = model.metric(t + dt, c_new)
    return Frame(columns=gram_schmidt(U, G_new), t=float(t + dt))


def damping_tensor_frame(model, t, coords, U, zrow=None):
    """Frame representation U^T (Ric - 1/2 dg/dt + Hess phi) U of the damping tensor."""
    T = model.ricci(t, coords) + model.metric_h(t, coords, zrow) + model.hess_phi(t, coords, zrow)
    return np.einsum("...ki,...kl,...lj->...ij", U, T, U)


def q_step(model, Q, frame, x, t, dt, *, method="euler", frame_end=None, x_end=None):
    """Advance the damping matrix over [t, t + dt].

    Euler uses the tensor at the step start; Heun additionally needs the
    transported frame and position at the step end.
    """
    c = coords_of(x)
    A0 = damping_tensor_frame(model, t, c, frame.columns)
    if method == "euler":
        Qn = Q.Q - dt * (A0 @ Q.Q)
    elif method == "heun":
        if frame_end is None or x_end is None:
            raise ValueError("heun update needs frame_end and x_end")
        A1 = damping_tensor_frame(model, t + dt, coords_of(x_end), frame_end.columns)
        pred = Q.Q - dt * (A0 @ Q.Q)
        Qn = Q.Q - 0.5 * dt * (A0 @ Q.Q + A1 @ pred)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DampingMatrix(Q=Qn, s=Q.s)
