"""Parameterization quality: scaled Jacobian, uniformity, fold detection.

Metrics are sampled on an inclusive uniform grid (boundaries included).
Following the reporting convention for these metrics, only the minimum and
average of the scaled Jacobian and the maximum and average of the
uniformity measure are kept; a fold (min scaled Jacobian <= 0) suppresses
the uniformity statistics entirely.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .errors import NumericalError, SchemaError
from .surfaces import surface_eval_grid

DEGENERATE_TANGENT = 1e-14


@dataclass
class QualityReport:
    grid: tuple
    min_scaled_jacobian: float
    avg_scaled_jacobian: float
    max_uniformity: float  # None when folded
    avg_uniformity: float  # None when folded
    fold: bool
    area_ratio: float


def _scaled_jacobian_field(surface, us, vs):
    _, Su, Sv = surface_eval_grid(surface, us, vs, derivs=True)
    det = Su[..., 0] * Sv[..., 1] - Su[..., 1] * Sv[..., 0]
    nu = np.linalg.norm(Su, axis=-1)
    nv = np.linalg.norm(Sv, axis=-1)
    denom = nu * nv
    ok = denom > DEGENERATE_TANGENT
    out = np.zeros_like(det)
    np.divide(det, denom, out=out, where=ok)
    return out, det


def scaled_jacobian(surface, u, v):
    """det J / (|x_u| |x_v|) at one parameter point; 0 at degenerate tangents."""
    kv_u, kv_v = surface.knots_u, surface.knots_v
    if not (kv_u.start - 1e-12 <= u <= kv_u.end + 1e-12):
        raise NumericalError("u outside the parameter rectangle")
    if not (kv_v.start - 1e-12 <= v <= kv_v.end + 1e-12):
        raise NumericalError("v outside the parameter rectangle")
    field, _ = _scaled_jacobian_field(surface, [u], [v])
    return float(field[0, 0])


def area_ratio(surface, quad_pts=None):
    """Physical area over parameter-rectangle area, by Gauss quadrature."""
    pu, pv = surface.degrees
    nqu = quad_pts or (pu + 1)
    nqv = quad_pts or (pv + 1)

    def span_nodes(kv, n):
        vals, _ = kv.distinct()
        xg, wg = roots_legendre(n)
        nodes, weights = [], []
        for a, b in zip(vals[:-1], vals[1:]):
            nodes.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
            weights.append(0.5 * (b - a) * wg)
        return np.concatenate(nodes), np.concatenate(weights)

    us, wu = span_nodes(surface.knots_u, nqu)
    vs, wv = span_nodes(surface.knots_v, nqv)
    _, Su, Sv = surface_eval_grid(surface, us, vs, derivs=True)
    det = Su[..., 0] * Sv[..., 1] - Su[..., 1] * Sv[..., 0]
    area = float(wu @ det @ wv)
    ku, kv = surface.knots_u, surface.knots_v
    param_area = (ku.end - ku.start) * (kv.end - kv.start)
    return area / param_area


def uniformity(surface, u, v, r_area):
    """| det J / r_area - 1 | at one parameter point."""
    if r_area <= 0:
        raise SchemaError("area ratio must be positive")
    _, Su, Sv = surface_eval_grid(surface, [u], [v], derivs=True)
    det = float(Su[0, 0, 0] * Sv[0, 0, 1] - Su[0, 0, 1] * Sv[0, 0, 0])
    return abs(det / r_area - 1.0)


def quality_report(surface, n_u=1001, n_v=1001):
    """Grid statistics of both metrics; uniformity omitted when folded."""
    if n_u < 2 or n_v < 2:
        raise SchemaError("grid must be at least 2x2")
    ku, kv = surface.knots_u, surface.knots_v
    us = np.linspace(ku.start, ku.end, n_u)
    vs = np.linspace(kv.start, kv.end, n_v)
    sj, det = _scaled_jacobian_field(surface, us, vs)
    r_area = area_ratio(surface)
    fold = bool(sj.min() <= 0.0)
    if fold:
        max_unif = avg_unif = None
    else:
        unif = np.abs(det / r_area - 1.0)
        max_unif = float(unif.max())
        avg_unif = float(unif.mean())
    return QualityReport(
        grid=(n_u, n_v),
        min_scaled_jacobian=float(sj.min()),
        avg_scaled_jacobian=float(sj.mean()),
        max_uniformity=max_unif,
        avg_uniformity=avg_unif,
        fold=fold,
        area_ratio=float(r_area),
    )


def quality_csv_row(report, geometry="", method=""):
    """CSV row `geometry,method,grid,min_sj,avg_sj,max_unif,avg_unif,fold`."""
    unif_cols = (
        ("%.10g" % report.max_uniformity, "%.10g" % report.avg_uniformity)
        if not report.fold
        else ("", "")
    )
    return ",".join(
        [
            geometry,
            method,
            "%dx%d" % report.grid,
            "%.10g" % report.min_scaled_jacobian,
            "%.10g" % report.avg_scaled_jacobian,
            unif_cols[0],
            unif_cols[1],
            "true" if report.fold else "false",
        ]
    )


QUALITY_CSV_HEADER = "geometry,method,grid,min_sj,avg_sj,max_unif,avg_unif,fold"
