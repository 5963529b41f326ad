"""Deterministic synthetic geometry corpus.

Six channel-like domains exercising the pipeline: a unit square, 5:1 and
20:1 rectangles whose East sides carry a strongly non-uniform parameter
speed (collinear control points, uneven spacing, chord-length knots), a
rational quarter annulus, an S-channel of aspect about 10:1 whose
parameter mismatch folds the unmatched Coons patch, and an L-channel with
one sharp interior turn.
"""

import os

import numpy as np

from .io import write_brep
from .splines import KnotVector, NurbsCurve

GEOMETRIES = (
    "square",
    "rect_5to1",
    "rect_20to1",
    "quarter_annulus",
    "s_channel",
    "l_channel",
)


def _line(p0, p1):
    return NurbsCurve(
        KnotVector([0.0, 0.0, 1.0, 1.0], 1), np.array([p0, p1], dtype=float), np.ones(2)
    )


def _chord_length_knots(points, degree):
    """Clamped knots by chord-length parameters with knot averaging."""
    pts = np.asarray(points, dtype=float)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(d)]) / d.sum()
    interior = [np.mean(u[j : j + degree]) for j in range(1, len(pts) - degree)]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def _uneven_straight(length, height, n=8, power=2.0, degree=3):
    """Exactly straight curve with chord-length knots over clustered points."""
    xs = length * np.linspace(0.0, 1.0, n) ** power
    pts = np.column_stack([xs, np.full(n, float(height))])
    return NurbsCurve(KnotVector(_chord_length_knots(pts, degree), degree), pts, np.ones(n))


def square():
    return {
        "West": _line([0, 0], [1, 0]),
        "East": _line([0, 1], [1, 1]),
        "South": _line([0, 0], [0, 1]),
        "North": _line([1, 0], [1, 1]),
    }


def rectangle(length):
    return {
        "West": _line([0, 0], [length, 0]),
        "East": _uneven_straight(length, 1.0),
        "South": _line([0, 0], [0, 1]),
        "North": _line([length, 0], [length, 1]),
    }


def quarter_annulus():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    w = np.array([1.0, np.sqrt(2) / 2, 1.0])
    outer = NurbsCurve(kv, np.array([[2, 0], [2, 2], [0, 2]], float), w)
    inner = NurbsCurve(kv, np.array([[1, 0], [1, 1], [0, 1]], float), w)
    return {
        "West": outer,
        "East": inner,
        "South": _line([2, 0], [1, 0]),
        "North": _line([0, 2], [0, 1]),
    }


def _s_channel_centerline(x):
    return 1.6 * np.sin(np.pi * np.asarray(x) / 5.0)


def s_channel():
    """Two roughly parallel cubic S-curves, East badly parameterized.

    West control points sit at even stations of the S; East control points
    sample the offset S at strongly clustered stations with chord-length
    knots, so its parameter speed disagrees with West enough that the
    unmatched Coons patch folds.
    """
    length, width, degree = 10.0, 1.0, 3
    xw = np.linspace(0.0, length, 11)
    west_pts = np.column_stack([xw, _s_channel_centerline(xw) - width / 2])
    west = NurbsCurve(
        KnotVector(_chord_length_knots(west_pts, degree), degree), west_pts, np.ones(len(xw))
    )
    xe = length * np.linspace(0.0, 1.0, 11) ** 2.4
    east_pts = np.column_stack([xe, _s_channel_centerline(xe) + width / 2])
    east = NurbsCurve(
        KnotVector(_chord_length_knots(east_pts, degree), degree), east_pts, np.ones(len(xe))
    )
    south = _line(west_pts[0], east_pts[0])
    north = _line(west_pts[-1], east_pts[-1])
    return {"West": west, "East": east, "South": south, "North": north}


def l_channel():
    """L-shaped channel: outer boundary with a sharp convex corner, inner
    boundary with the matching reflex corner."""
    w = 0.8
    outer_pts = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]])
    inner_pts = np.array([[0.0, w], [4.0 - w, w], [4.0 - w, 4.0]])
    west = NurbsCurve(
        KnotVector(_chord_length_knots(outer_pts, 1), 1), outer_pts, np.ones(3)
    )
    east = NurbsCurve(
        KnotVector(_chord_length_knots(inner_pts, 1), 1), inner_pts, np.ones(3)
    )
    return {
        "West": west,
        "East": east,
        "South": _line(outer_pts[0], inner_pts[0]),
        "North": _line(outer_pts[-1], inner_pts[-1]),
    }


def make(name):
    builders = {
        "square": square,
        "rect_5to1": lambda: rectangle(5.0),
        "rect_20to1": lambda: rectangle(20.0),
        "quarter_annulus": quarter_annulus,
        "s_channel": s_channel,
        "l_channel": l_channel,
    }
    if name not in builders:
        raise KeyError(f"unknown corpus geometry {name!r}")
    return builders[name]()


def generate_corpus(outdir):
    """Write every corpus geometry as a B-Rep file; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for name in GEOMETRIES:
        path = os.path.join(outdir, f"{name}.json")
        write_brep(path, make(name))
        paths.append(path)
    return paths
