"""Matching tests: marker projection, exact reparameterization, pipeline."""

import numpy as np
import pytest

from scmatch import matching as mt
from scmatch.errors import NumericalError, SchemaError
from scmatch.splines import (
    KnotVector,
    NurbsCurve,
    closest_point,
    curve_eval_many,
)

RNG = np.random.default_rng(90125)


def line(p0, p1):
    return NurbsCurve(KnotVector([0, 0, 1, 1], 1), [p0, p1], [1.0, 1.0])


def quarter_circle():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    return NurbsCurve(kv, [[1, 0], [1, 1], [0, 1]], [1.0, np.sqrt(2) / 2, 1.0])


def distorted_straight_east(L, H=1.0, n=8, power=2.0, degree=3):
    """Exactly straight segment with strongly non-uniform parameter speed."""
    xs = L * np.linspace(0, 1, n) ** power
    pts = np.column_stack([xs, np.full(n, H)])
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0], np.cumsum(d)]) / d.sum()
    interior = [np.mean(u[j + 1 : j + degree + 1]) for j in range(1, n - degree)]
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return NurbsCurve(KnotVector(knots, degree), pts, np.ones(n))


def rect_brep(L, distorted=True):
    east = distorted_straight_east(L) if distorted else line([0, 1], [L, 1])
    return {
        "West": line([0, 0], [L, 0]),
        "East": east,
        "South": line([0, 0], [0, 1]),
        "North": line([L, 0], [L, 1]),
    }


def hausdorff_upper(a, b, n=2000):
    """Upper bound on the symmetric Hausdorff distance between two curves.

    Projects samples of each curve onto the other; any projection bounds
    the true point-to-curve distance from above.
    """
    out = 0.0
    for src, dst in ((a, b), (b, a)):
        ts = np.linspace(src.start, src.end, n)
        pts = curve_eval_many(src, ts)
        scan_t = np.linspace(dst.start, dst.end, 4 * n)
        scan_p = curve_eval_many(dst, scan_t)
        for P in pts:
            seed = scan_t[np.argmin(np.sum((scan_p - P) ** 2, axis=1))]
            t = closest_point(dst, P, seed)
            out = max(out, float(np.linalg.norm(curve_eval_many(dst, [t])[0] - P)))
    return out


# -- marker_params ------------------------------------------------------------

def test_marker_params_on_straight_line():
    c = line([0, 0], [10, 0])
    params = mt.marker_params(c, [[0, 0], [5, 0], [10, 0]])
    assert params == pytest.approx([0.0, 0.5, 1.0], abs=1e-12)


def test_marker_params_endpoint():
    c = quarter_circle()
    params = mt.marker_params(c, [[1, 0], [0, 1]])
    assert params[0] == pytest.approx(0.0, abs=1e-12)
    assert params[-1] == pytest.approx(1.0, abs=1e-12)


def test_marker_params_matches_brute_force():
    c = quarter_circle()
    angles = [0.0, np.pi / 4, np.pi / 2]
    markers = [[np.cos(a), np.sin(a)] for a in angles]
    params = mt.marker_params(c, markers)
    ts = np.linspace(0, 1, 100001)
    pts = curve_eval_many(c, ts)
    for P, t in zip(markers, params):
        brute = ts[np.argmin(np.sum((pts - P) ** 2, axis=1))]
        assert abs(t - brute) < 1e-6


def test_marker_params_non_monotone_raises():
    c = line([0, 0], [10, 0])
    with pytest.raises(NumericalError, match="increasing"):
        mt.marker_params(c, [[5, 0], [1, 0]])


def test_marker_params_distance_bound():
    c = line([0, 0], [10, 0])
    with pytest.raises(NumericalError, match="side labels"):
        mt.marker_params(c, [[5, 9.0]], chord_tol=0.01)


# -- reparameterize -----------------------------------------------------------

def test_reparameterize_corners_only_identity():
    c = quarter_circle()
    out = mt.reparameterize_east(c, [0.0, 1.0], [0.0, 1.0])
    ts = np.linspace(0, 1, 101)
    assert np.abs(curve_eval_many(out, ts) - curve_eval_many(c, ts)).max() <= 1e-13


def test_reparameterize_pure_affine():
    c = quarter_circle()
    out = mt.reparameterize_east(c, [0.0, 1.0], [0.0, 2.0])
    for t in np.linspace(0, 1, 50):
        assert curve_eval_many(out, [2 * t])[0] == pytest.approx(
            curve_eval_many(c, [t])[0], abs=1e-13
        )


def test_reparameterize_three_markers():
    c = quarter_circle()
    out = mt.reparameterize_east(c, [0.0, 0.3, 1.0], [0.0, 0.6, 1.0])
    assert curve_eval_many(out, [0.6])[0] == pytest.approx(
        curve_eval_many(c, [0.3])[0], abs=1e-12
    )
    for (a0, a1), (b0, b1) in [((0, 0.3), (0, 0.6)), ((0.3, 1), (0.6, 1))]:
        tt = np.linspace(a0, a1, 100)
        phi = b0 + (tt - a0) * (b1 - b0) / (a1 - a0)
        err = np.abs(curve_eval_many(out, phi) - curve_eval_many(c, tt)).max()
        assert err <= 1e-12


def test_reparameterize_validation():
    c = quarter_circle()
    with pytest.raises(SchemaError):
        mt.reparameterize_east(c, [0.0, 0.5], [0.0, 0.4, 1.0])
    with pytest.raises(SchemaError):
        mt.reparameterize_east(c, [0.1, 1.0], [0.0, 1.0])  # does not span range


# -- match_boundaries ---------------------------------------------------------

def test_match_rectangle_repairs_distortion():
    brep = rect_brep(5.0)
    matched = mt.match_boundaries(brep)
    wpar = np.array(matched.provenance["markers"]["west_params"])
    epts = curve_eval_many(matched["East"], wpar)
    wpts = curve_eval_many(brep["West"], wpar)
    assert np.abs(epts[:, 0] - wpts[:, 0]).max() < 1e-3


def test_match_geometry_preserved():
    brep = rect_brep(5.0)
    matched = mt.match_boundaries(brep)
    diag = np.hypot(5.0, 1.0)
    assert hausdorff_upper(brep["East"], matched["East"], n=500) <= 1e-9 * diag


def test_match_leaves_other_sides_untouched():
    brep = rect_brep(5.0)
    matched = mt.match_boundaries(brep)
    for side in ("West", "South", "North"):
        assert matched[side] is brep[side]


def test_match_corner_control_points_fixed():
    brep = rect_brep(5.0)
    matched = mt.match_boundaries(brep)
    e0, e1 = brep["East"].control_points[0], brep["East"].control_points[-1]
    m0, m1 = matched["East"].control_points[0], matched["East"].control_points[-1]
    assert np.linalg.norm(m0 - e0) <= 1e-10
    assert np.linalg.norm(m1 - e1) <= 1e-10


def test_match_already_matched_fixed_point():
    brep = rect_brep(5.0, distorted=False)
    matched = mt.match_boundaries(brep)
    ts = np.linspace(0, 1, 500)
    err = np.abs(
        curve_eval_many(matched["East"], ts) - curve_eval_many(brep["East"], ts)
    ).max()
    assert err <= 1e-9


def test_match_idempotent():
    brep = rect_brep(5.0)
    once = mt.match_boundaries(brep)
    twice = mt.match_boundaries(once.curves)
    e2 = np.array(twice.provenance["markers"]["east_params"])
    w2 = np.array(twice.provenance["markers"]["west_params"])
    assert np.abs(e2 - w2).max() <= 1e-6


def test_match_fixed_side_east():
    brep = rect_brep(5.0)
    matched = mt.match_boundaries(brep, mt.MatchOptions(fixed_side="East"))
    assert matched["East"] is brep["East"]
    assert matched.provenance["reparameterized_side"] == "West"


def test_match_missing_label():
    brep = rect_brep(5.0)
    del brep["North"]
    with pytest.raises(SchemaError, match="North"):
        mt.match_boundaries(brep)


def test_match_stage_annotation():
    brep = rect_brep(5.0)
    brep["North"] = line([5, 0.5], [5, 1])  # open loop
    with pytest.raises(Exception) as exc:
        mt.match_boundaries(brep)
    assert "polygonize" in str(exc.value)
