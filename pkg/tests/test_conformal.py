"""Conformal module tests: cross-ratio, polygon pipeline, disk map, markers."""

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import ellipk

from scmatch import conformal as cf
from scmatch.errors import NumericalError, SchemaError
from scmatch.splines import KnotVector, NurbsCurve

RNG = np.random.default_rng(552201)


def line(p0, p1):
    return NurbsCurve(KnotVector([0, 0, 1, 1], 1), [p0, p1], [1.0, 1.0])


def rect_brep(L, H=1.0):
    return {
        "West": line([0, 0], [L, 0]),
        "East": line([0, H], [L, H]),
        "South": line([0, 0], [0, H]),
        "North": line([L, 0], [L, H]),
    }


def square_map():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(1.0), 1e-3))
    return poly, cf.solve_parameter_problem(poly)


def rectangle_cross_ratio(aspect):
    """|rho| of the corner prevertices from the elliptic-integral modulus."""
    mm = brentq(lambda x: 2 * ellipk(x) / ellipk(1 - x) - aspect, 1e-12, 1 - 1e-12, xtol=5e-16)
    k = np.sqrt(mm)
    return abs(cf.cross_ratio(-1.0, 1.0, 1.0 / k, -1.0 / k))


# -- cross-ratio --------------------------------------------------------------

def test_cross_ratio_unit_circle_points():
    assert cf.cross_ratio(1, 1j, -1, -1j) == pytest.approx(-1.0, abs=1e-14)


def test_cross_ratio_moebius_invariance():
    for _ in range(100):
        pts = RNG.normal(size=4) + 1j * RNG.normal(size=4)
        a, b, c, d = RNG.normal(size=4) + 1j * RNG.normal(size=4)
        if abs(a * d - b * c) < 1e-3:
            continue
        moeb = (a * pts + b) / (c * pts + d)
        r0 = cf.cross_ratio(*pts)
        r1 = cf.cross_ratio(*moeb)
        assert abs(r1 - r0) <= 1e-10 * (1 + abs(r0))


def test_cross_ratio_degenerate():
    with pytest.raises(NumericalError):
        cf.cross_ratio(1.0, 1.0, 2.0, 3.0)


# -- polygonize ---------------------------------------------------------------

def test_polygonize_unit_square():
    poly = cf.polygonize(rect_brep(1.0), 1e-3)
    assert poly.n == 4
    assert np.allclose(poly.betas, -0.5, atol=1e-12)
    assert poly.corner_flags == (0, 1, 2, 3)
    assert abs(poly.betas.sum() + 2) < 1e-12


def test_polygonize_rectangle():
    poly = cf.polygonize(rect_brep(5.0), 1e-3)
    assert poly.n == 4
    assert np.allclose(poly.betas, -0.5, atol=1e-12)


def test_polygonize_quarter_annulus():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    w2 = np.sqrt(2) / 2
    brep = {
        "West": NurbsCurve(kv, [[2, 0], [2, 2], [0, 2]], [1, w2, 1]),
        "East": NurbsCurve(kv, [[1, 0], [1, 1], [0, 1]], [1, w2, 1]),
        "South": line([2, 0], [1, 0]),
        "North": line([0, 2], [0, 1]),
    }
    poly = cf.polygonize(brep, 1e-3)
    c0, c1, c2, c3 = poly.corner_flags
    radii = np.abs(poly.vertices[c0 : c1 + 1])
    assert np.abs(radii - 2.0).max() < 1e-3  # sagitta bound
    smooth = [b for i, b in enumerate(poly.betas) if i not in poly.corner_flags]
    assert np.abs(smooth).max() < 0.05
    assert abs(poly.betas.sum() + 2) < 1e-10


def test_polygonize_open_loop_raises():
    brep = rect_brep(1.0)
    brep["North"] = line([1, 0.2], [1, 1])
    with pytest.raises(SchemaError, match="open"):
        cf.polygonize(brep, 1e-3)


def test_polygonize_clockwise_raises():
    brep = {
        "West": line([0, 0], [0, 1]),  # swapped roles make the loop clockwise
        "East": line([1, 0], [1, 1]),
        "South": line([0, 0], [1, 0]),
        "North": line([0, 1], [1, 1]),
    }
    with pytest.raises(SchemaError, match="clockwise"):
        cf.polygonize(brep, 1e-3)


# -- split_long_edges ---------------------------------------------------------

def _edge_violations(poly, kappa=1.5):
    v = poly.vertices
    n = len(v)
    bad = []
    for e in range(n):
        a, b = v[e], v[(e + 1) % n]
        mid = 0.5 * (a + b)
        dmin = np.inf
        for j in range(n):
            if j not in (e, (e + 1) % n):
                dmin = min(dmin, abs(v[j] - mid))
        for j in range(n):
            if j in (e, (e - 1) % n, (e + 1) % n):
                continue
            p0, p1 = v[j], v[(j + 1) % n]
            ab = p1 - p0
            t = np.clip(((mid - p0) * np.conj(ab)).real / max(abs(ab) ** 2, 1e-300), 0, 1)
            dmin = min(dmin, abs(mid - (p0 + t * ab)))
        if abs(b - a) > kappa * dmin:
            bad.append(e)
    return bad


def test_split_long_edges_square_unchanged():
    poly = cf.polygonize(rect_brep(1.0), 1e-3)
    out = cf.split_long_edges(poly)
    assert out.n == 4
    assert not _edge_violations(out)


def test_split_long_edges_10to1():
    poly = cf.polygonize(rect_brep(10.0), 1e-3)
    out = cf.split_long_edges(poly)
    assert out.n > 4
    assert not _edge_violations(out)
    inserted = [b for i, b in enumerate(out.betas) if i not in out.corner_flags]
    assert np.abs(inserted).max() == 0.0  # collinear insertions


def test_split_preserves_corners_and_sum():
    poly = cf.polygonize(rect_brep(10.0), 1e-3)
    out = cf.split_long_edges(poly)
    for c in out.corner_flags:
        assert any(abs(out.vertices[c] - poly.vertices[k]) < 1e-14 for k in poly.corner_flags)
    assert abs(out.betas.sum() + 2) < 1e-10


# -- delaunay quads -----------------------------------------------------------

def test_delaunay_square():
    poly = cf.polygonize(rect_brep(1.0), 1e-3)
    qs = cf.delaunay_quads(poly)
    assert len(qs.diagonals) == 1
    assert qs.target_logs[0] == pytest.approx(0.0, abs=1e-12)


def test_delaunay_pentagon_count():
    th = np.linspace(0, 2 * np.pi, 6)[:-1] - np.pi / 2
    verts = np.exp(1j * th)
    poly = cf.Polygon(
        verts,
        cf._turning_exponents(verts),
        (0, 1, 2, 3),
        ["West"] * 5,
    )
    qs = cf.delaunay_quads(poly)
    assert len(qs.diagonals) == 2
    assert len(qs.quads) == 2


def test_delaunay_quads_structure():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(7.0), 1e-3))
    qs = cf.delaunay_quads(poly)
    n = poly.n
    assert len(qs.diagonals) == n - 3
    v = poly.vertices
    for (i, k), quad in zip(qs.diagonals, qs.quads):
        assert len(set(quad)) == 4
        assert quad[0] == i and quad[2] == k
        # counterclockwise simple quad
        pts = v[list(quad)]
        area = 0.5 * np.sum(
            pts.real * np.roll(pts, -1).imag - np.roll(pts, -1).real * pts.imag
        )
        assert area > 0


# -- parameter problem --------------------------------------------------------

def test_square_solve_equal_gaps():
    _, m = square_map()
    gaps = m.geom.gaps
    assert np.abs(gaps - np.pi / 2).max() < 1e-6
    assert m.residual <= 1e-8


def test_rectangle_corner_cross_ratio_elliptic_oracle():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(5.0), 1e-3))
    m = cf.solve_parameter_problem(poly)
    zc = m.prevertices[list(poly.corner_flags)]
    rho = abs(cf.cross_ratio(*zc))
    assert rho == pytest.approx(rectangle_cross_ratio(5.0), abs=1e-6)


def test_solved_map_vertex_images():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(5.0), 1e-3))
    m = cf.solve_parameter_problem(poly)
    zeta = m.offset + m.scale * m.ray().prevertex_images()
    assert np.abs(zeta - poly.vertices).max() <= 1e-6 * poly.diameter()


# -- sc_eval ------------------------------------------------------------------

def test_sc_eval_zero_length_path():
    poly, m = square_map()
    assert cf.sc_eval(m, poly.betas, 0j) == pytest.approx(m.offset, abs=1e-14)


def test_sc_eval_path_independence():
    poly, m = square_map()
    for _ in range(20):
        z = RNG.uniform(-0.6, 0.6) + 1j * RNG.uniform(-0.6, 0.6)
        w = RNG.uniform(-0.6, 0.6) + 1j * RNG.uniform(-0.6, 0.6)
        assert abs(
            cf.sc_eval(m, poly.betas, z) - cf.sc_eval(m, poly.betas, z, path_from=w)
        ) < 1e-9


def test_sc_eval_prevertex_images():
    poly, m = square_map()
    for k in range(poly.n):
        img = cf.sc_eval(m, poly.betas, m.prevertices[k])
        assert abs(img - poly.vertices[k]) < 1e-6 * poly.diameter()


def test_sc_eval_cauchy_riemann():
    poly, m = square_map()
    h = 1e-5
    for _ in range(50):
        z = RNG.uniform(-0.5, 0.5) + 1j * RNG.uniform(-0.5, 0.5)
        fx = (cf.sc_eval(m, poly.betas, z + h) - cf.sc_eval(m, poly.betas, z - h)) / (2 * h)
        fy = (cf.sc_eval(m, poly.betas, z + 1j * h) - cf.sc_eval(m, poly.betas, z - 1j * h)) / (2 * h)
        scale = max(abs(fx.real), abs(fy.imag), 1e-10)
        assert abs(fx.real - fy.imag) / scale < 1e-4
        assert abs(fx.imag + fy.real) / scale < 1e-4


def test_sc_eval_boundary_containment():
    import shapely

    poly, m = square_map()
    ring = shapely.Polygon(np.column_stack([poly.vertices.real, poly.vertices.imag])).exterior
    for _ in range(200):
        phi = RNG.uniform(0, 2 * np.pi)
        w = cf.sc_eval(m, poly.betas, np.exp(1j * phi))
        assert ring.distance(shapely.Point(w.real, w.imag)) < 1e-5 * poly.diameter()


# -- rectangle map and markers ------------------------------------------------

def test_square_modulus_one():
    poly, m = square_map()
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    assert rect.modulus == pytest.approx(1.0, abs=1e-6)


def test_rect5_modulus_five():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(5.0), 1e-3))
    m = cf.solve_parameter_problem(poly)
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    assert rect.modulus == pytest.approx(5.0, abs=1e-3)


def test_modulus_reciprocal_under_side_swap():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(5.0), 1e-3))
    m = cf.solve_parameter_problem(poly)
    c = poly.corner_flags
    rect = cf.disk_to_rectangle(m, c)
    rolled = cf.disk_to_rectangle(m, (c[1], c[2], c[3], c[0]))
    # rolling the corner cycle swaps the side roles
    assert rect.modulus * rolled.modulus == pytest.approx(1.0, abs=1e-6)


def test_markers_equally_spaced_on_rectangle():
    poly = cf.split_long_edges(cf.polygonize(rect_brep(5.0), 1e-3))
    m = cf.solve_parameter_problem(poly)
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    west, east = cf.boundary_markers(m, rect, 11)
    exact = np.linspace(0, 5, 11)
    assert np.abs(west[:, 0] - exact).max() < 1e-4
    assert np.abs(east[:, 0] - exact).max() < 1e-4
    assert np.abs(west[:, 1]).max() < 1e-6
    assert np.abs(east[:, 1] - 1).max() < 1e-6
    assert np.all(np.diff(west[:, 0]) > 0)
    assert np.all(np.diff(east[:, 0]) > 0)


def test_markers_two_are_corners():
    poly, m = square_map()
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    west, east = cf.boundary_markers(m, rect, 2)
    c0, c1, c2, c3 = poly.corner_flags
    assert np.allclose(west[0], [poly.vertices[c0].real, poly.vertices[c0].imag], atol=1e-9)
    assert np.allclose(west[1], [poly.vertices[c1].real, poly.vertices[c1].imag], atol=1e-9)
    assert np.allclose(east[0], [poly.vertices[c3].real, poly.vertices[c3].imag], atol=1e-9)
    assert np.allclose(east[1], [poly.vertices[c2].real, poly.vertices[c2].imag], atol=1e-9)


def test_markers_square_midpoint():
    poly, m = square_map()
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    west, east = cf.boundary_markers(m, rect, 3)
    assert np.allclose(west[1], [0.5, 0.0], atol=1e-6)
    assert np.allclose(east[1], [0.5, 1.0], atol=1e-6)


def test_markers_count_validation():
    poly, m = square_map()
    rect = cf.disk_to_rectangle(m, poly.corner_flags)
    with pytest.raises(SchemaError):
        cf.boundary_markers(m, rect, 1)


# -- crowding stress ----------------------------------------------------------

def test_20to1_rectangle_solves():
    import warnings

    poly = cf.split_long_edges(cf.polygonize(rect_brep(20.0), 1e-3))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = cf.solve_parameter_problem(poly)
        rect = cf.disk_to_rectangle(m, poly.corner_flags)
    assert m.residual <= 1e-8
    assert rect.modulus == pytest.approx(20.0, rel=1e-4)
