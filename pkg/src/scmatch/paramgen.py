"""Surface generation from a matched B-Rep: Coons, refinement, PDE smoothing.

Direction conventions (see surfaces module): u runs along the channel, v
across it, West at v=0, East at v=1. The Coons net blends the four
boundary control polygons with normalized Greville abscissae, so every
boundary row/column of the result equals the input control data exactly.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import iga
from .errors import NumericalError, SchemaError
from .splines import KnotVector, NurbsCurve, affine_reparam, curve_eval_many, degree_elevate, knot_insert
from .surfaces import (
    NurbsSurface,
    elevate_v,
    insert_knots_u,
    insert_knots_v,
    refine_dyadic,
    surface_eval_grid,
)

log = logging.getLogger(__name__)


@dataclass
class EllipticOptions:
    """Knobs for k-refinement and the quasi-harmonic Picard smoother."""

    target_degree_eta: int = 2
    extra_knots_eta: int = 2
    extra_knots_xi: int = 2
    max_picard_iters: int = 20
    update_tol: float = 1e-8
    jacobian_floor_rel: float = 1e-12
    quad_pts: int = None  # default degree+1 per direction

    def __post_init__(self):
        if self.update_tol <= 0 or self.jacobian_floor_rel <= 0:
            raise SchemaError("tolerances must be positive")


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dofs: int
    l2_error: float
    h1_error: float


# ---------------------------------------------------------------------------
# compatibility and Coons
# ---------------------------------------------------------------------------

def make_compatible(a, b):
    """Bring two curves onto a common degree and knot vector.

    The lower-degree curve is elevated, then each receives the union of the
    knot multisets. Parameter ranges are aligned onto a's range first.
    Geometry of both curves is unchanged.
    """
    if abs(a.start - b.start) > 1e-12 or abs(a.end - b.end) > 1e-12:
        s = (a.end - a.start) / (b.end - b.start)
        b = affine_reparam(b, s, a.start - s * b.start)
    p = max(a.degree, b.degree)
    a2 = degree_elevate(a, p)
    b2 = degree_elevate(b, p)

    tol = max(a2.knots.merge_tol, b2.knots.merge_tol)

    def interior(kv):
        vals, mult = kv.distinct()
        return [(v, m) for v, m in zip(vals, mult)][1:-1]

    def union(ka, kb):
        out = []
        ia, ib = interior(ka), interior(kb)
        merged = {}
        for v, m in ia + ib:
            for known in merged:
                if abs(known - v) <= tol:
                    merged[known] = max(merged[known], m)
                    break
            else:
                merged[v] = m
        return dict(sorted(merged.items()))

    target = union(a2.knots, b2.knots)

    def fill(curve):
        out = curve
        for v, m in target.items():
            have = out.knots.multiplicity(v)
            if m > have:
                out = knot_insert(out, v, m - have)
        return out

    return fill(a2), fill(b2)


def _normalized_greville(kv):
    g = kv.greville()
    return (g - kv.start) / (kv.end - kv.start)


def coons_patch(brep):
    """Bilinearly blended Coons net through the four boundary curves.

    Requires West/East compatible and South/North compatible (this is
    arranged by linear_only_pipeline). Rational data is blended in
    homogeneous coordinates; when corner weights are inconsistent around
    the loop, all weights are projected to 1 with a logged warning.
    """
    curves = {s: brep[s] for s in ("West", "North", "East", "South")}
    west, east = curves["West"], curves["East"]
    south, north = curves["South"], curves["North"]
    if west.degree != east.degree or len(west.control_points) != len(east.control_points):
        raise SchemaError("West/East are not compatible; run make_compatible first")
    if south.degree != north.degree or len(south.control_points) != len(north.control_points):
        raise SchemaError("South/North are not compatible; run make_compatible first")
    if np.abs(west.knots.values - east.knots.values).max() > west.knots.merge_tol:
        raise SchemaError("West/East knot vectors differ")
    if np.abs(south.knots.values - north.knots.values).max() > south.knots.merge_tol:
        raise SchemaError("South/North knot vectors differ")

    scale = max(np.abs(np.vstack([c.control_points for c in curves.values()])).max(), 1.0)
    for a, pa, b, pb in (
        (west, 0, south, 0),
        (west, -1, north, 0),
        (east, 0, south, -1),
        (east, -1, north, -1),
    ):
        if np.linalg.norm(a.control_points[pa] - b.control_points[pb]) > 1e-8 * scale:
            raise SchemaError("corner control points of adjacent sides disagree")

    # weight normalization: scale each curve's weights to share corner
    # weights with West; project to unit weights if the loop is inconsistent
    wW, wE, wS, wN = (c.weights.copy() for c in (west, east, south, north))
    sS = wW[0] / wS[0]
    sN = wW[-1] / wN[0]
    sE = wS[-1] * sS / wE[0]
    ok = abs(wE[-1] * sE - wN[-1] * sN) <= 1e-8 * max(wE[-1] * sE, 1e-300)
    if not ok:
        log.warning("corner weights inconsistent around the loop; projecting weights to 1")
        unit = lambda c: NurbsCurve(c.knots, c.control_points, np.ones(len(c.weights)))
        west, east, south, north = (unit(c) for c in (west, east, south, north))
        wW, wE, wS, wN = (c.weights.copy() for c in (west, east, south, north))
        sS = sN = sE = 1.0
    wS = wS * sS
    wN = wN * sN
    wE = wE * sE

    def hom(curve, w):
        return np.hstack([curve.control_points * w[:, None], w[:, None]])

    HW, HE = hom(west, wW), hom(east, wE)
    HS, HN = hom(south, wS), hom(north, wN)

    au = _normalized_greville(west.knots)[:, None]  # (n_u, 1)
    bv = _normalized_greville(south.knots)[None, :]  # (1, n_v)
    n_u, n_v = len(au), bv.shape[1]

    ruled_v = (1 - bv[..., None]) * HW[:, None, :] + bv[..., None] * HE[:, None, :]
    ruled_u = (1 - au[..., None]) * HS[None, :, :] + au[..., None] * HN[None, :, :]
    C00, C01 = HW[0], HE[0]
    C10, C11 = HW[-1], HE[-1]
    bil = (
        (1 - au[..., None]) * (1 - bv[..., None]) * C00
        + (1 - au[..., None]) * bv[..., None] * C01
        + au[..., None] * (1 - bv[..., None]) * C10
        + au[..., None] * bv[..., None] * C11
    )
    H = ruled_v + ruled_u - bil
    weights = H[..., 2]
    if np.any(weights <= 0):
        log.warning("Coons blend produced nonpositive weights; projecting weights to 1")
        unit = lambda c: NurbsCurve(c.knots, c.control_points, np.ones(len(c.weights)))
        return coons_patch(
            {
                "West": unit(west),
                "East": unit(east),
                "South": unit(south),
                "North": unit(north),
            }
        )
    net = H[..., :2] / weights[..., None]
    # exact boundary recovery: the blend is interpolatory on the edges
    return NurbsSurface(west.knots, south.knots, net, weights)


def linear_only_pipeline(brep):
    """make_compatible on opposite sides, then the Coons patch."""
    curves = brep.curves if hasattr(brep, "curves") else brep
    west, east = make_compatible(curves["West"], curves["East"])
    south, north = make_compatible(curves["South"], curves["North"])
    return coons_patch({"West": west, "East": east, "South": south, "North": north})


# ---------------------------------------------------------------------------
# k-refinement
# ---------------------------------------------------------------------------

def _uniform_new_knots(kv, count):
    """count knots at uniform fractions of the range, skipping existing ones."""
    if count <= 0:
        return []
    lo, hi = kv.start, kv.end
    out = []
    for j in range(1, count + 1):
        t = lo + (hi - lo) * j / (count + 1)
        if kv.multiplicity(t) == 0:
            out.append(t)
    return out


def k_refine(surface, opts=None):
    """Degree-elevate across the channel and insert the extra uniform knots.

    With the default options a ruled cross-channel direction ends with
    degree 2 over knots {0,0,0,1/3,2/3,1,1,1} (normalized range); the
    along-channel knot vector gains extra uniform knots as well. Geometry
    is unchanged.
    """
    opts = opts or EllipticOptions()
    out = surface
    if opts.target_degree_eta > surface.knots_v.degree:
        out = elevate_v(out, opts.target_degree_eta)
    out = insert_knots_v(out, _uniform_new_knots(out.knots_v, opts.extra_knots_eta))
    out = insert_knots_u(out, _uniform_new_knots(out.knots_u, opts.extra_knots_xi))
    return out


# ---------------------------------------------------------------------------
# elliptic (quasi-harmonic) smoothing
# ---------------------------------------------------------------------------

def _interior_residual(surface, floor_rel, quad_pts):
    grid = iga.make_quad_grid(surface, quad_pts)
    _, _, _, det = iga.geometry_tables(surface, grid)
    eps = floor_rel * max(float(np.median(np.abs(det))), 1e-300)
    K, _ = iga.assemble_stiffness(surface, iga.quasi_harmonic_coef(eps), grid=grid)
    bmask = iga.boundary_mask(surface.shape)
    x = surface.control_net[..., 0].reshape(-1)
    y = surface.control_net[..., 1].reshape(-1)
    rx = (K @ x)[~bmask]
    ry = (K @ y)[~bmask]
    return float(np.sqrt(np.sum(rx**2) + np.sum(ry**2)))


def elliptic_improve(surface, opts=None):
    """Quasi-harmonic Picard smoothing of the interior control points.

    Each sweep freezes the coefficient field A = diag(1/max(|J|, eps)) at
    the current geometry, assembles the weighted-gradient Galerkin system,
    and solves the two decoupled linear systems for the interior x and y
    coefficients. Boundary control data is never touched.

    Returns (surface, info) with iteration count and residual history.
    """
    opts = opts or EllipticOptions()
    shape = surface.shape
    if (shape[0] - 2) * (shape[1] - 2) <= 0:
        raise NumericalError(
            "no interior control points to smooth; k-refine the surface first"
        )
    bmask = iga.boundary_mask(shape)
    diag = max(surface.bbox_diagonal(), 1e-300)
    net = surface.control_net.copy()
    weights = surface.weights.copy()
    floored_total = 0
    residual0 = None
    current = surface
    iters = 0
    for it in range(opts.max_picard_iters):
        grid = iga.make_quad_grid(current, opts.quad_pts)
        _, _, _, det = iga.geometry_tables(current, grid)
        eps = opts.jacobian_floor_rel * max(float(np.median(np.abs(det))), 1e-300)
        n_floored = int(np.sum(det < eps))
        floored_total += n_floored
        if n_floored:
            log.warning("elliptic smoothing: %d quadrature points below the Jacobian floor", n_floored)
        K, _ = iga.assemble_stiffness(current, iga.quasi_harmonic_coef(eps), grid=grid)
        x = net[..., 0].reshape(-1)
        y = net[..., 1].reshape(-1)
        if residual0 is None:
            residual0 = float(
                np.sqrt(np.sum((K @ x)[~bmask] ** 2) + np.sum((K @ y)[~bmask] ** 2))
            )
        zeros = np.zeros(len(x))
        x_new = iga.solve_interior(K, zeros, x, bmask)
        y_new = iga.solve_interior(K, zeros, y, bmask)
        move = np.hypot(x_new[~bmask] - x[~bmask], y_new[~bmask] - y[~bmask]).max() / diag
        x, y = x_new, y_new
        net = np.stack([x.reshape(shape), y.reshape(shape)], axis=-1)
        current = NurbsSurface(surface.knots_u, surface.knots_v, net, weights)
        iters = it + 1
        if move <= opts.update_tol:
            break
    residual = _interior_residual(current, opts.jacobian_floor_rel, opts.quad_pts)
    info = {
        "iterations": iters,
        "residual_initial": residual0,
        "residual_final": residual,
        "floored_points": floored_total,
    }
    return current, info


# ---------------------------------------------------------------------------
# Poisson demo
# ---------------------------------------------------------------------------

def _exact_solution():
    two_pi = 2.0 * np.pi

    def u(x, y):
        return np.sin(two_pi * x) * np.sin(two_pi * y)

    def f(x, y):
        return 8.0 * np.pi**2 * np.sin(two_pi * x) * np.sin(two_pi * y)

    def grad(x, y):
        return (
            two_pi * np.cos(two_pi * x) * np.sin(two_pi * y),
            two_pi * np.sin(two_pi * x) * np.cos(two_pi * y),
        )

    return u, f, grad


def solve_poisson(surface, f=None, g=None, quad_pts=None):
    """Galerkin solve of -lap(u) = f with Dirichlet data g on all sides.

    Boundary coefficients come from Greville interpolation of g along each
    edge. Returns the full coefficient grid.
    """
    u_ex, f_ex, _ = _exact_solution()
    f = f or f_ex
    g = g or u_ex
    grid = iga.make_quad_grid(surface, quad_pts)
    K, _ = iga.assemble_stiffness(surface, iga.laplace_coef(), grid=grid)
    F = iga.assemble_load(surface, grid, f)
    gcoef = iga.boundary_coefficients_from_function(surface, g)
    bmask = iga.boundary_mask(surface.shape)
    fixed = np.zeros(surface.weights.size)
    fixed[bmask] = gcoef.reshape(-1)[bmask]
    coeffs = iga.solve_interior(K, F, fixed, bmask)
    return coeffs.reshape(surface.shape)


def _max_element_diameter(surface):
    uvals, _ = surface.knots_u.distinct()
    vvals, _ = surface.knots_v.distinct()
    pts = surface_eval_grid(surface, uvals, vvals)
    h = 0.0
    for i in range(len(uvals) - 1):
        for j in range(len(vvals) - 1):
            diag1 = np.linalg.norm(pts[i + 1, j + 1] - pts[i, j])
            diag2 = np.linalg.norm(pts[i + 1, j] - pts[i, j + 1])
            h = max(h, diag1, diag2)
    return float(h)


def poisson_demo(surface, levels):
    """h-refinement convergence table for the manufactured Poisson problem.

    Refuses folded surfaces (min sampled scaled Jacobian <= 0).
    """
    from .quality import quality_report

    if levels < 1:
        raise SchemaError("need at least one refinement level")
    report = quality_report(surface, 101, 101)
    if report.fold:
        raise NumericalError("surface is folded; refusing the Poisson solve")

    u_ex, f_ex, grad_ex = _exact_solution()
    rows = []
    current = surface
    for level in range(levels):
        if level > 0:
            current = refine_dyadic(current)
        coeffs = solve_poisson(current, f_ex, u_ex)
        l2, h1 = iga.l2_h1_errors(current, coeffs, u_ex, grad_ex)
        rows.append(
            ConvergenceRow(
                level=level,
                h=_max_element_diameter(current),
                dofs=int(current.weights.size),
                l2_error=l2,
                h1_error=h1,
            )
        )
    return rows


def convergence_rates(rows):
    """Observed (l2_rate, h1_rate) between the two finest levels."""
    if len(rows) < 2:
        return None, None
    a, b = rows[-2], rows[-1]
    den = np.log(a.h / b.h)
    return (
        float(np.log(a.l2_error / b.l2_error) / den),
        float(np.log(a.h1_error / b.h1_error) / den),
    )
