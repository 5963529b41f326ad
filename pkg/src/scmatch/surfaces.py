"""Tensor-product NURBS surfaces: evaluation, Jacobians, directional refinement.

Direction conventions used throughout the package:
  * u runs along the channel (the parameter of the West and East curves);
  * v runs across it (South/North parameter), West at v=0, East at v=1,
    South at u=0, North at u=1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SchemaError
from .splines import (
    KnotVector,
    NurbsCurve,
    collocation_matrix,
    collocation_matrix_ders,
)


@dataclass(frozen=True)
class NurbsSurface:
    """Rational tensor-product surface over clamped knot vectors."""

    knots_u: KnotVector
    knots_v: KnotVector
    control_net: np.ndarray  # (n_u, n_v, 2)
    weights: np.ndarray  # (n_u, n_v)

    def __post_init__(self):
        net = np.asarray(self.control_net, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_net", net)
        object.__setattr__(self, "weights", w)
        if net.ndim != 3 or net.shape[2] != 2:
            raise SchemaError("control net must have shape (n_u, n_v, 2)")
        if w.shape != net.shape[:2]:
            raise SchemaError("weight grid must match the control net")
        if np.any(w <= 0):
            raise SchemaError("weights must be strictly positive")
        if net.shape[0] != self.knots_u.num_basis or net.shape[1] != self.knots_v.num_basis:
            raise SchemaError("control net dimensions incompatible with knot vectors")

    @property
    def degrees(self):
        return (self.knots_u.degree, self.knots_v.degree)

    @property
    def shape(self):
        return self.control_net.shape[:2]

    def homogeneous(self):
        """(n_u, n_v, 3) array of (w*x, w*y, w)."""
        w = self.weights[..., None]
        return np.concatenate([self.control_net * w, w], axis=2)

    def bbox_diagonal(self):
        pts = self.control_net.reshape(-1, 2)
        return float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))

    def boundary_curve(self, side):
        """Extract a boundary as a NurbsCurve.

        West: v=0 row (function of u); East: v=1; South: u=0 (function of
        v); North: u=1.
        """
        if side == "West":
            return NurbsCurve(self.knots_u, self.control_net[:, 0], self.weights[:, 0])
        if side == "East":
            return NurbsCurve(self.knots_u, self.control_net[:, -1], self.weights[:, -1])
        if side == "South":
            return NurbsCurve(self.knots_v, self.control_net[0, :], self.weights[0, :])
        if side == "North":
            return NurbsCurve(self.knots_v, self.control_net[-1, :], self.weights[-1, :])
        raise SchemaError(f"unknown side {side!r}")


def _from_homogeneous_net(ku, kv, hom):
    w = hom[..., 2]
    if np.any(w <= 0):
        raise NumericalError("operation produced nonpositive surface weights")
    return NurbsSurface(ku, kv, hom[..., :2] / w[..., None], w.copy())


def surface_eval_grid(surface, us, vs, derivs=False):
    """Evaluate on the tensor grid us x vs.

    Returns points of shape (len(us), len(vs), 2); with derivs=True also
    returns (x_u, x_v) arrays of the same shape.
    """
    us = np.atleast_1d(np.asarray(us, dtype=float))
    vs = np.atleast_1d(np.asarray(vs, dtype=float))
    hom = surface.homogeneous()
    if not derivs:
        Bu = collocation_matrix(surface.knots_u, us)
        Bv = collocation_matrix(surface.knots_v, vs)
        A = np.einsum("ui,ijc,vj->uvc", Bu, hom, Bv)
        return A[..., :2] / A[..., 2:3]
    Bu, Du = collocation_matrix_ders(surface.knots_u, us, 1)
    Bv, Dv = collocation_matrix_ders(surface.knots_v, vs, 1)
    A = np.einsum("ui,ijc,vj->uvc", Bu, hom, Bv)
    Au = np.einsum("ui,ijc,vj->uvc", Du, hom, Bv)
    Av = np.einsum("ui,ijc,vj->uvc", Bu, hom, Dv)
    W = A[..., 2:3]
    S = A[..., :2] / W
    Su = (Au[..., :2] - Au[..., 2:3] * S) / W
    Sv = (Av[..., :2] - Av[..., 2:3] * S) / W
    return S, Su, Sv


def surface_eval(surface, u, v):
    return surface_eval_grid(surface, [u], [v])[0, 0]


def surface_jacobian(surface, u, v):
    """2x2 Jacobian [x_u x_v] at a single parameter point."""
    _, Su, Sv = surface_eval_grid(surface, [u], [v], derivs=True)
    return np.column_stack([Su[0, 0], Sv[0, 0]])


# ---------------------------------------------------------------------------
# refinement, direction-wise
# ---------------------------------------------------------------------------

def _project_net(hom, old_kv, new_kv, axis):
    """Exactly re-express the homogeneous net along one axis in a richer space."""
    grev = new_kv.greville()
    B = collocation_matrix(new_kv, grev)
    Bs = collocation_matrix(old_kv, grev)
    if axis == 0:
        flat = hom.reshape(hom.shape[0], -1)
        out = np.linalg.solve(B, Bs @ flat)
        return out.reshape(len(grev), hom.shape[1], 3)
    flat = np.moveaxis(hom, 1, 0).reshape(hom.shape[1], -1)
    out = np.linalg.solve(B, Bs @ flat)
    return np.moveaxis(out.reshape(len(grev), hom.shape[0], 3), 0, 1)


def elevate_u(surface, target_p):
    p = surface.knots_u.degree
    if target_p < p:
        raise NumericalError("target degree below current degree")
    if target_p == p:
        return surface
    vals, mult = surface.knots_u.distinct()
    new_kv = KnotVector(np.repeat(vals, mult + (target_p - p)), target_p)
    hom = _project_net(surface.homogeneous(), surface.knots_u, new_kv, axis=0)
    return _from_homogeneous_net(new_kv, surface.knots_v, hom)


def elevate_v(surface, target_q):
    q = surface.knots_v.degree
    if target_q < q:
        raise NumericalError("target degree below current degree")
    if target_q == q:
        return surface
    vals, mult = surface.knots_v.distinct()
    new_kv = KnotVector(np.repeat(vals, mult + (target_q - q)), target_q)
    hom = _project_net(surface.homogeneous(), surface.knots_v, new_kv, axis=1)
    return _from_homogeneous_net(surface.knots_u, new_kv, hom)


def _insert_sorted(kv, new_knots):
    vals = np.sort(np.concatenate([kv.values, np.asarray(new_knots, dtype=float)]))
    return KnotVector(vals, kv.degree)


def insert_knots_u(surface, new_knots):
    if len(new_knots) == 0:
        return surface
    new_kv = _insert_sorted(surface.knots_u, new_knots)
    hom = _project_net(surface.homogeneous(), surface.knots_u, new_kv, axis=0)
    return _from_homogeneous_net(new_kv, surface.knots_v, hom)


def insert_knots_v(surface, new_knots):
    if len(new_knots) == 0:
        return surface
    new_kv = _insert_sorted(surface.knots_v, new_knots)
    hom = _project_net(surface.homogeneous(), surface.knots_v, new_kv, axis=1)
    return _from_homogeneous_net(surface.knots_u, new_kv, hom)


def refine_dyadic(surface):
    """Insert the midpoint of every nonempty span in both directions."""
    out = surface
    for axis_insert, kv in ((insert_knots_u, surface.knots_u), (insert_knots_v, surface.knots_v)):
        vals, _ = kv.distinct()
        mids = 0.5 * (vals[:-1] + vals[1:])
        out = axis_insert(out, mids)
    return out
