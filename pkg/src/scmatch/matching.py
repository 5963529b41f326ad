"""Boundary parameter matching: project conformal markers, reparameterize.

The driver pipeline runs: polygonize -> split_long_edges -> delaunay_quads
-> solve_parameter_problem -> disk_to_rectangle -> boundary_markers ->
marker_params on both long sides -> reparameterize one side. The fixed
side's parameterization is untouched; the other side is re-described by
piecewise-affine knot transformations, which leaves its geometry exactly
unchanged.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import conformal
from .errors import NumericalError, SchemaError, StageError
from .splines import (
    NurbsCurve,
    affine_reparam,
    closest_point,
    curve_eval_many,
    merge_curves,
    split_curve,
)

log = logging.getLogger(__name__)

SIDES = ("West", "North", "East", "South")


@dataclass
class MarkerCorrespondence:
    """Paired markers on the two long sides with their curve parameters."""

    west_params: np.ndarray
    east_params: np.ndarray
    west_points: np.ndarray
    east_points: np.ndarray

    def __post_init__(self):
        wp = np.asarray(self.west_params, dtype=float)
        ep = np.asarray(self.east_params, dtype=float)
        object.__setattr__(self, "west_params", wp)
        object.__setattr__(self, "east_params", ep)
        if len(wp) != len(ep) or len(wp) < 2:
            raise SchemaError("marker parameter lists must have equal length >= 2")
        if np.any(np.diff(wp) <= 0) or np.any(np.diff(ep) <= 0):
            raise SchemaError("marker parameters must be strictly increasing")

    @property
    def m(self):
        return len(self.west_params)


@dataclass
class MatchedBrep:
    """Four labeled curves with one long side reparameterized."""

    curves: dict
    provenance: dict = field(default_factory=dict)

    def __getitem__(self, side):
        return self.curves[side]


@dataclass
class MatchOptions:
    markers: int = None  # default: max(8, control count of the longer side)
    chord_tol: float = None  # default: 2e-3 * bbox diagonal
    fixed_side: str = "West"
    kappa: float = 1.5
    nq: int = 8
    ftol: float = 1e-8
    max_iter: int = 100


def marker_params(curve, markers, chord_tol=None):
    """Closest-point parameters of ordered markers along a curve.

    Each projection is seeded from the nearest of 512 uniform samples. The
    result must be strictly increasing; when chord_tol is given, every
    projection distance must stay below 10x of it.
    """
    markers = np.asarray(markers, dtype=float)
    ts = np.linspace(curve.start, curve.end, 512)
    samples = curve_eval_many(curve, ts)
    params = []
    for P in markers:
        d2 = np.sum((samples - P) ** 2, axis=1)
        seed = ts[int(np.argmin(d2))]
        t = closest_point(curve, P, seed)
        dist = float(np.linalg.norm(np.asarray(curve_eval_many(curve, [t])[0]) - P))
        if chord_tol is not None and dist > 10.0 * chord_tol:
            raise NumericalError(
                f"marker {P} projects {dist:g} away from the curve "
                f"(> 10 x chord tolerance {chord_tol:g}); check side labels"
            )
        params.append(t)
    params = np.array(params)
    if np.any(np.diff(params) <= 0):
        raise NumericalError(
            "projected marker parameters are not strictly increasing; "
            "marker/curve orientation mismatch"
        )
    return params


def reparameterize_east(curve, own_params, target_params):
    """Re-describe a curve so own_params become target_params exactly.

    Split at every interior own parameter (knot insertion to full
    multiplicity), affinely shift each segment's knot interval onto the
    target interval, and merge. The curve as a point set is untouched.
    """
    own = np.asarray(own_params, dtype=float)
    tgt = np.asarray(target_params, dtype=float)
    if len(own) != len(tgt) or len(own) < 2:
        raise SchemaError("parameter lists must have equal length >= 2")
    if np.any(np.diff(own) <= 0) or np.any(np.diff(tgt) <= 0):
        raise SchemaError("parameter lists must be strictly increasing")
    rng_tol = 1e-10 * max(curve.end - curve.start, 1.0)
    if abs(own[0] - curve.start) > rng_tol or abs(own[-1] - curve.end) > rng_tol:
        raise SchemaError("own parameters must span the knot range")

    segments = []
    rest = curve
    for t in own[1:-1]:
        left, rest = split_curve(rest, t)
        segments.append(left)
    segments.append(rest)

    mapped = []
    for seg, a, b in zip(segments, tgt[:-1], tgt[1:]):
        s = (b - a) / (seg.end - seg.start)
        mapped.append(affine_reparam(seg, s, a - s * seg.start))
    return merge_curves(mapped)


def _arc_length_estimate(curve, n=256):
    pts = curve_eval_many(curve, np.linspace(curve.start, curve.end, n))
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def _bbox_diagonal(brep):
    pts = np.vstack([brep[s].control_points for s in SIDES])
    return float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))


def match_boundaries(brep, options=None):
    """Full matching pipeline; returns the B-Rep with one side recalibrated.

    West stays fixed and East is reparameterized by default; set
    options.fixed_side = "East" to swap the roles. South and North are
    returned untouched.
    """
    opts = options or MatchOptions()
    if opts.fixed_side not in ("West", "East"):
        raise SchemaError("fixed_side must be West or East")
    missing = [s for s in SIDES if s not in brep]
    if missing:
        raise SchemaError(f"missing boundary curve label(s): {missing}")

    diag = _bbox_diagonal(brep)
    chord_tol = opts.chord_tol if opts.chord_tol is not None else 2e-3 * diag
    if opts.markers is None:
        long_side = max(("West", "East"), key=lambda s: _arc_length_estimate(brep[s]))
        m_count = max(8, len(brep[long_side].control_points))
    else:
        m_count = int(opts.markers)
        if m_count < 2:
            raise SchemaError("need at least two markers")

    prov = {"options": {"markers": m_count, "chord_tol": chord_tol,
                        "fixed_side": opts.fixed_side, "kappa": opts.kappa,
                        "nq": opts.nq, "ftol": opts.ftol},
            "stages": []}

    def stage(name, fun, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fun(*args, **kwargs)
        except (NumericalError, SchemaError) as exc:
            raise StageError(name, exc) from exc
        prov["stages"].append({"name": name, "time_s": time.perf_counter() - t0})
        return out

    poly = stage("polygonize", conformal.polygonize, brep, chord_tol)
    poly = stage("split_long_edges", conformal.split_long_edges, poly, opts.kappa)
    quads = stage("delaunay_quads", conformal.delaunay_quads, poly)
    sc_map = stage(
        "solve_parameter_problem",
        conformal.solve_parameter_problem,
        poly,
        nq=opts.nq,
        ftol=opts.ftol,
        max_iter=opts.max_iter,
        quads=quads,
    )
    rect = stage("disk_to_rectangle", conformal.disk_to_rectangle, sc_map, poly.corner_flags)
    west_pts, east_pts = stage("boundary_markers", conformal.boundary_markers, sc_map, rect, m_count)

    west_par = stage("marker_params_west", marker_params, brep["West"], west_pts, chord_tol)
    east_par = stage("marker_params_east", marker_params, brep["East"], east_pts, chord_tol)

    # first/last markers are the domain corners: snap to the exact ends
    for par, side in ((west_par, "West"), (east_par, "East")):
        c = brep[side]
        rng = c.end - c.start
        if abs(par[0] - c.start) > 1e-6 * rng or abs(par[-1] - c.end) > 1e-6 * rng:
            raise StageError(
                "marker_params", NumericalError("corner markers far from curve ends")
            )
        par[0], par[-1] = c.start, c.end

    # drop marker pairs that collapse on either side (keep the corners)
    keep = [0]
    for i in range(1, m_count - 1):
        w_gap = west_par[i] - west_par[keep[-1]]
        e_gap = east_par[i] - east_par[keep[-1]]
        tol_w = 1e-8 * (brep["West"].end - brep["West"].start)
        tol_e = 1e-8 * (brep["East"].end - brep["East"].start)
        if w_gap < tol_w or e_gap < tol_e:
            log.warning("dropping near-coincident marker pair %d", i)
            continue
        keep.append(i)
    keep.append(m_count - 1)
    west_par, east_par = west_par[keep], east_par[keep]
    west_pts, east_pts = west_pts[keep], east_pts[keep]

    corr = MarkerCorrespondence(west_par, east_par, west_pts, east_pts)

    curves = {s: brep[s] for s in SIDES}
    if opts.fixed_side == "West":
        curves["East"] = stage(
            "reparameterize", reparameterize_east, brep["East"], east_par, west_par
        )
        moved = "East"
    else:
        curves["West"] = stage(
            "reparameterize", reparameterize_east, brep["West"], west_par, east_par
        )
        moved = "West"

    prov["markers"] = {
        "west_params": west_par.tolist(),
        "east_params": east_par.tolist(),
        "west_points": west_pts.tolist(),
        "east_points": east_pts.tolist(),
    }
    prov["sc_residual"] = sc_map.residual
    prov["alignment_residual"] = sc_map.alignment_residual
    prov["conformal_modulus"] = rect.modulus
    prov["reparameterized_side"] = moved
    return MatchedBrep(curves=curves, provenance=prov)
