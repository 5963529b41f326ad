"""File formats: B-Rep and surface JSON schemas, CSV tables.

Schema (version scmatch-brep/1): a JSON object with a `curves` map holding
exactly the labels West/East/South/North; each curve record carries
degree, knots, control_points ([x, y] pairs) and weights. Orientation
convention (fixed here, used everywhere): the four curves close up as
West(0)=South(0), South(1)=East(0), East(1)=North(1), North(0)=West(1),
and the loop West forward, North forward, East backward, South backward
runs counterclockwise. West/East are the long sides; the surface parameter
u runs along them (West at v=0).

Numbers are serialized with 17 significant digits, which round-trips IEEE
doubles exactly; writing is deterministic byte-for-byte for equal inputs.
"""

import json

import numpy as np

from .errors import SchemaError
from .splines import KnotVector, NurbsCurve
from .surfaces import NurbsSurface

BREP_FORMAT = "scmatch-brep/1"
SURFACE_FORMAT = "scmatch-surface/1"
ORIENTATION_NOTE = (
    "counterclockwise loop: West fwd, North fwd, East bwd, South bwd; "
    "West(0)=South(0), South(1)=East(0), East(1)=North(1), North(0)=West(1)"
)
SIDES = ("West", "East", "South", "North")


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if v != v or v in (float("inf"), float("-inf")):
            raise SchemaError("non-finite number in output")
        return "%.17g" % v
    raise TypeError(f"unsupported scalar {type(x)}")


def _emit(obj, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f'{pad}  "{k}": {_emit(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            return "[]"
        flat = all(
            isinstance(x, (bool, int, float, np.integer, np.floating)) for x in items
        )
        if flat:
            return "[" + ", ".join(_fmt(x) for x in items) + "]"
        inner = ",\n".join(f"{pad}  {_emit(v, indent + 1)}" for v in items)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    return _fmt(obj)


def dumps(obj):
    """Deterministic JSON text with 17-significant-digit floats."""
    return _emit(obj) + "\n"


def _curve_record(curve):
    return {
        "degree": int(curve.degree),
        "knots": curve.knots.values.tolist(),
        "control_points": [p.tolist() for p in curve.control_points],
        "weights": curve.weights.tolist(),
    }


def _curve_from_record(rec, label):
    try:
        degree = int(rec["degree"])
        knots = [float(x) for x in rec["knots"]]
        pts = [[float(a), float(b)] for a, b in rec["control_points"]]
        weights = [float(x) for x in rec["weights"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed curve record for {label}: {exc}") from exc
    return NurbsCurve(KnotVector(np.array(knots), degree), np.array(pts), np.array(weights))


def write_brep(path, curves, provenance=None):
    missing = [s for s in SIDES if s not in curves]
    if missing:
        raise SchemaError(f"missing boundary curve label(s): {missing}")
    doc = {
        "format": BREP_FORMAT,
        "orientation": ORIENTATION_NOTE,
        "curves": {s: _curve_record(curves[s]) for s in SIDES},
    }
    if provenance is not None:
        doc["provenance"] = provenance
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def validate_brep(curves):
    """Loop closure and label checks beyond per-curve invariants."""
    scale = max(
        float(np.abs(np.vstack([curves[s].control_points for s in SIDES])).max()), 1.0
    )
    tol = 1e-8 * scale

    def endpoint(side, which):
        pts = curves[side].control_points
        return pts[0] if which == 0 else pts[-1]

    pairs = [
        (("West", 0), ("South", 0)),
        (("South", 1), ("East", 0)),
        (("East", 1), ("North", 1)),
        (("North", 0), ("West", 1)),
    ]
    for (sa, ia), (sb, ib) in pairs:
        if np.linalg.norm(endpoint(sa, ia) - endpoint(sb, ib)) > tol:
            raise SchemaError(
                f"boundary loop is open: {sa}({ia}) and {sb}({ib}) do not coincide"
            )


def read_brep(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read B-Rep file {path}: {exc}") from exc
    if doc.get("format") != BREP_FORMAT:
        raise SchemaError(f"unsupported format {doc.get('format')!r}")
    recs = doc.get("curves")
    if not isinstance(recs, dict):
        raise SchemaError("missing curves map")
    missing = [s for s in SIDES if s not in recs]
    if missing:
        raise SchemaError(f"missing boundary curve label(s): {missing}")
    extra = [k for k in recs if k not in SIDES]
    if extra:
        raise SchemaError(f"unknown curve label(s): {extra}")
    curves = {s: _curve_from_record(recs[s], s) for s in SIDES}
    validate_brep(curves)
    return curves


def write_surface(path, surface, provenance=None):
    doc = {
        "format": SURFACE_FORMAT,
        "degrees": list(surface.degrees),
        "knots_u": surface.knots_u.values.tolist(),
        "knots_v": surface.knots_v.values.tolist(),
        "shape": list(surface.shape),
        # row-major with u fastest: entry (i + j*n_u) is control point (i, j)
        "control_points": [
            surface.control_net[i, j].tolist()
            for j in range(surface.shape[1])
            for i in range(surface.shape[0])
        ],
        "weights": [
            float(surface.weights[i, j])
            for j in range(surface.shape[1])
            for i in range(surface.shape[0])
        ],
    }
    if provenance is not None:
        doc["provenance"] = provenance
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def read_surface(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read surface file {path}: {exc}") from exc
    if doc.get("format") != SURFACE_FORMAT:
        raise SchemaError(f"unsupported format {doc.get('format')!r}")
    try:
        pu, pv = (int(d) for d in doc["degrees"])
        n_u, n_v = (int(d) for d in doc["shape"])
        ku = KnotVector(np.array([float(x) for x in doc["knots_u"]]), pu)
        kv = KnotVector(np.array([float(x) for x in doc["knots_v"]]), pv)
        pts = np.array(doc["control_points"], dtype=float)
        w = np.array(doc["weights"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed surface file: {exc}") from exc
    if pts.shape != (n_u * n_v, 2) or w.shape != (n_u * n_v,):
        raise SchemaError("control data inconsistent with declared shape")
    net = np.empty((n_u, n_v, 2))
    wgrid = np.empty((n_u, n_v))
    for j in range(n_v):
        for i in range(n_u):
            net[i, j] = pts[i + j * n_u]
            wgrid[i, j] = w[i + j * n_u]
    surface = NurbsSurface(ku, kv, net, wgrid)
    return surface, doc.get("provenance")


def convergence_csv(rows):
    out = ["level,h,dofs,l2_error,h1_error"]
    for r in rows:
        out.append(
            "%d,%s,%d,%s,%s"
            % (r.level, "%.10g" % r.h, r.dofs, "%.10g" % r.l2_error, "%.10g" % r.h1_error)
        )
    return "\n".join(out) + "\n"
