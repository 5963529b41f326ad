"""Conformal disk map of the boundary polygon and marker generation.

The pipeline here: polygonize the four boundary curves, split long edges,
take the constrained Delaunay quadrilaterals, and solve the cross-ratio
form of the disk-map parameter problem. A second map onto a rectangle,
built from the four corner prevertices, pairs points on the two long sides
through equal rectangle ordinates.

Numerical core: all boundary-target integrals run along rays from the disk
center with the integrand factors computed from prevertex *gap* sums, never
from absolute angle differences. That keeps full relative precision even
when prevertices crowd to within 1e-14 of each other (20:1 aspect
channels), which plain complex arithmetic cannot do.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.special import roots_jacobi, roots_legendre

from .errors import ConvergenceError, NumericalError, SchemaError
from .splines import sample_adaptive

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SIDES = ("West", "North", "East", "South")


# ---------------------------------------------------------------------------
# cross-ratio
# ---------------------------------------------------------------------------

def cross_ratio(a, b, c, d):
    """(d-a)(b-c) / ((c-d)(a-b)) for complex points."""
    a, b, c, d = complex(a), complex(b), complex(c), complex(d)
    scale = max(abs(a - b), abs(c - d), abs(d - a), abs(b - c), 1e-300)
    if abs(a - b) < 1e-14 * scale or abs(c - d) < 1e-14 * scale:
        raise NumericalError("degenerate cross-ratio: coincident denominator pair")
    return (d - a) * (b - c) / ((c - d) * (a - b))


# ---------------------------------------------------------------------------
# boundary polygon
# ---------------------------------------------------------------------------

@dataclass
class Polygon:
    """Simplified boundary polygon with turning exponents.

    vertices: complex points, counterclockwise;
    betas: turning exponents, beta_j = alpha_j/pi - 1, each in (-1, 1];
    corner_flags: indices of the four domain corners in cyclic order
        (West-start, West-end, East-end, East-start);
    side_labels: for each edge (v_j, v_{j+1}), which boundary curve it
        samples.
    """

    vertices: np.ndarray
    betas: np.ndarray
    corner_flags: tuple
    side_labels: list

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=complex)
        b = np.asarray(self.betas, dtype=float)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "betas", b)
        n = len(v)
        if n < 4:
            raise SchemaError("polygon needs at least 4 vertices")
        if len(b) != n or len(self.side_labels) != n:
            raise SchemaError("betas/side_labels must match vertex count")
        if len(self.corner_flags) != 4:
            raise SchemaError("exactly four corner flags required")
        cf = list(self.corner_flags)
        if sorted(cf) != cf or len(set(cf)) != 4:
            raise SchemaError("corner flags must be distinct and in cyclic order")
        if np.any(b <= -1) or np.any(b > 1):
            raise SchemaError("turning exponents must lie in (-1, 1]")
        if abs(b.sum() + 2.0) > 1e-10:
            raise SchemaError(f"turning exponents sum to {b.sum()}, expected -2")

    @property
    def n(self):
        return len(self.vertices)

    def diameter(self):
        v = self.vertices
        return float(
            np.hypot(v.real.max() - v.real.min(), v.imag.max() - v.imag.min())
        )

    def signed_area(self):
        v = self.vertices
        w = np.roll(v, -1)
        return 0.5 * float(np.sum(v.real * w.imag - w.real * v.imag))


def _turning_exponents(vertices):
    v = np.asarray(vertices, dtype=complex)
    prev = v - np.roll(v, 1)
    nxt = np.roll(v, -1) - v
    turn = np.angle(nxt / prev)
    return -turn / np.pi


def polygonize(brep, chord_tol):
    """Sample the four labeled curves into a counterclockwise Polygon.

    The loop runs West forward, North forward, East backward, South
    backward; the four junctions become the corner flags. Raises on open
    loops and self-intersections; a clockwise loop is reversed with a
    logged warning.
    """
    missing = [s for s in SIDES if s not in brep]
    if missing:
        raise SchemaError(f"missing boundary curve label(s): {missing}")
    samples = {s: sample_adaptive(brep[s], chord_tol) for s in SIDES}

    def pts_of(side, reverse):
        p = samples[side].points
        return p[::-1] if reverse else p

    west = pts_of("West", False)
    north = pts_of("North", False)
    east = pts_of("East", True)
    south = pts_of("South", True)

    scale = max(
        np.abs(np.concatenate([west, north, east, south])).max(), 1e-12
    )
    for a, b, names in (
        (west[-1], north[0], ("West(1)", "North(0)")),
        (north[-1], east[0], ("North(1)", "East(1)")),
        (east[-1], south[0], ("East(0)", "South(1)")),
        (south[-1], west[0], ("South(0)", "West(0)")),
    ):
        if np.linalg.norm(a - b) > 1e-8 * scale:
            raise SchemaError(
                f"boundary loop is open: {names[0]} and {names[1]} differ by {np.linalg.norm(a - b):g}"
            )

    verts = []
    labels = []
    corners = []
    for side, pts in (("West", west), ("North", north), ("East", east), ("South", south)):
        corners.append(len(verts))
        verts.extend(pts[:-1] if side != "South" else pts[:-1])
        labels.extend([side] * (len(pts) - 1))
    verts = np.array(verts)
    vertices = verts[:, 0] + 1j * verts[:, 1]

    # drop consecutive near-duplicates (can appear at junctions)
    keep = np.ones(len(vertices), dtype=bool)
    for i in range(1, len(vertices)):
        if abs(vertices[i] - vertices[i - 1]) < 1e-12 * scale:
            keep[i] = False
    if not keep.all():
        idx_map = np.cumsum(keep) - 1
        corners = [int(idx_map[c]) for c in corners]
        vertices = vertices[keep]
        labels = [l for l, k in zip(labels, keep) if k]

    area2 = float(
        np.sum(vertices.real * np.roll(vertices, -1).imag - np.roll(vertices, -1).real * vertices.imag)
    )
    if area2 < 0:
        log.warning("boundary loop is clockwise (signed area %g)", 0.5 * area2)
        raise SchemaError(
            "boundary loop is clockwise; West/East labels do not follow the "
            "counterclockwise orientation convention"
        )

    shp = shapely.Polygon(np.column_stack([vertices.real, vertices.imag]))
    if not shp.is_valid or not shp.is_simple:
        raise SchemaError("boundary polygon is self-intersecting or degenerate")

    betas = _turning_exponents(vertices)
    return Polygon(vertices, betas, tuple(corners), labels)


def split_long_edges(poly, kappa=1.5, max_rounds=30):
    """Bisect edges much longer than their clearance to non-adjacent geometry.

    An edge is split when its length exceeds kappa times the minimum
    distance from its midpoint to any non-adjacent vertex or edge. Inserted
    vertices are collinear (turning exponent exactly 0). Rounds are capped
    to guarantee termination near needle-sharp corners.
    """
    verts = list(poly.vertices)
    betas = list(poly.betas)
    labels = list(poly.side_labels)
    is_corner = [False] * len(verts)
    for c in poly.corner_flags:
        is_corner[c] = True

    def seg_dist(p, a, b):
        ab = b - a
        L2 = (ab * ab.conjugate()).real
        if L2 < 1e-300:
            return abs(p - a)
        t = ((p - a) * ab.conjugate()).real / L2
        t = min(max(t, 0.0), 1.0)
        return abs(p - (a + t * ab))

    for _ in range(max_rounds):
        n = len(verts)
        v = np.array(verts)
        nxt = np.roll(v, -1)
        to_split = []
        for e in range(n):
            a, b = v[e], nxt[e]
            mid = 0.5 * (a + b)
            length = abs(b - a)
            dmin = np.inf
            for j in range(n):
                if j != e and j != (e + 1) % n:
                    dmin = min(dmin, abs(v[j] - mid))
            for j in range(n):
                if j in (e, (e - 1) % n, (e + 1) % n):
                    continue
                dmin = min(dmin, seg_dist(mid, v[j], v[(j + 1) % n]))
            if length > kappa * dmin:
                to_split.append(e)
        if not to_split:
            break
        for e in reversed(to_split):
            a = verts[e]
            b = verts[(e + 1) % len(verts)]
            verts.insert(e + 1, 0.5 * (a + b))
            betas.insert(e + 1, 0.0)
            labels.insert(e + 1, labels[e])
            is_corner.insert(e + 1, False)
    else:
        log.warning("split_long_edges hit the round cap; polygon kept as-is")

    corners = tuple(i for i, f in enumerate(is_corner) if f)
    return Polygon(np.array(verts), np.array(betas), corners, labels)


# ---------------------------------------------------------------------------
# Delaunay quadrilaterals
# ---------------------------------------------------------------------------

@dataclass
class QuadSet:
    """Interior diagonals of a triangulated polygon and their quads.

    quads[i] is a counterclockwise 4-tuple of vertex indices whose interior
    diagonal diagonals[i] connects the 1st and 3rd entries; target_logs[i]
    is log |cross-ratio| of the corresponding polygon vertices.
    """

    diagonals: list
    quads: list
    target_logs: np.ndarray

    def __post_init__(self):
        if len(self.diagonals) != len(self.quads) or len(self.quads) != len(self.target_logs):
            raise SchemaError("inconsistent quad set")
        for q in self.quads:
            if len(set(q)) != 4:
                raise SchemaError("quad indices must be distinct")


def delaunay_quads(poly):
    """Constrained Delaunay quadrilaterals over the polygon's own vertices."""
    v = poly.vertices
    n = len(v)
    coords = np.column_stack([v.real, v.imag])
    shp = shapely.Polygon(coords)
    tris_geo = shapely.constrained_delaunay_triangles(shp)
    scale = max(poly.diameter(), 1e-12)

    def vertex_index(x, y):
        d2 = (v.real - x) ** 2 + (v.imag - y) ** 2
        k = int(np.argmin(d2))
        if d2[k] > (1e-9 * scale) ** 2:
            raise NumericalError("triangulation produced an unknown vertex")
        return k

    tris = []
    for g in tris_geo.geoms:
        xy = np.asarray(g.exterior.coords)[:3]
        idx = [vertex_index(x, y) for x, y in xy]
        a, b, c = (v[i] for i in idx)
        if ((b - a) * (c - a).conjugate()).imag > 0:  # make counterclockwise
            idx = idx[::-1]
        tris.append(tuple(idx))
    if len(tris) != n - 2:
        raise NumericalError(
            f"expected {n - 2} triangles from the constrained triangulation, got {len(tris)}"
        )

    boundary = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    edge_tris = {}
    for t in tris:
        for ea, eb in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edge_tris.setdefault(tuple(sorted((ea, eb))), []).append(t)

    diagonals, quads, logs = [], [], []
    for edge in sorted(edge_tris):
        owners = edge_tris[edge]
        if edge in boundary:
            continue
        if len(owners) != 2:
            raise NumericalError("interior diagonal not shared by exactly two triangles")
        i, k = edge
        t1, t2 = owners
        b1 = next(x for x in t1 if x not in edge)
        b2 = next(x for x in t2 if x not in edge)
        # orient: (i, b1, k, b2) counterclockwise with (i, k) the diagonal,
        # which needs the sub-triangle (i, b1, k) counterclockwise
        if (np.conj(v[b1] - v[i]) * (v[k] - v[i])).imag <= 0:
            b1, b2 = b2, b1
        quad = (i, b1, k, b2)
        diagonals.append((i, k))
        quads.append(quad)
        logs.append(np.log(abs(cross_ratio(*(v[j] for j in quad)))))
    if len(diagonals) != n - 3:
        raise NumericalError(f"expected {n - 3} diagonals, got {len(diagonals)}")
    return QuadSet(diagonals, quads, np.array(logs))


# ---------------------------------------------------------------------------
# prevertex geometry with gap-accurate angle differences
# ---------------------------------------------------------------------------

class PrevertexAngles:
    """Prevertex circle positions represented by their angular gaps.

    Pairwise angle differences come from gap-range sums, so they keep full
    relative precision even for exponentially crowded prevertices.
    """

    def __init__(self, gaps, base=0.0):
        g = np.asarray(gaps, dtype=float)
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise NumericalError("prevertex gaps must be positive and finite")
        self.gaps = g
        self.n = len(g)
        prefix = np.concatenate([[0.0], np.cumsum(g.astype(np.longdouble))])
        total = float(prefix[-1])
        if abs(total - TWO_PI) > 1e-9:
            raise NumericalError("prevertex gaps must sum to 2*pi")
        self.base = base
        self.thetas = base + np.asarray(prefix[:-1], dtype=float)
        th = prefix[:-1]
        D = np.asarray(th[:, None] - th[None, :], dtype=float)
        # prefix differences lose relative precision exactly where it
        # matters (crowded prevertices); recompute small plain or wrapped
        # differences from direct gap-range sums
        n = self.n
        off = ~np.eye(n, dtype=bool)
        for k, j in np.argwhere((np.abs(D) < 1e-4) & off):
            D[k, j] = float(g[j:k].sum()) if k > j else -float(g[k:j].sum())
        for k, j in np.argwhere((TWO_PI - np.abs(D) < 1e-4) & off):
            if k > j:  # near +2pi: replace by the equivalent small negative angle
                D[k, j] = -(float(g[:j].sum()) + float(g[k:].sum()))
            else:
                D[k, j] = float(g[:k].sum()) + float(g[j:].sum())
        self.D = D

    @property
    def prevertices(self):
        return np.exp(1j * self.thetas)

    def angle_of(self, anchor, x):
        """Absolute angle of the point at fraction x inside gap `anchor`."""
        return self.thetas[anchor] + x * self.gaps[anchor]

    def deltas(self, anchor, x):
        """phi - theta_j for phi at fraction x inside gap `anchor`."""
        return self.D[anchor] + x * self.gaps[anchor]


class _NodeCache:
    def __init__(self):
        self._legendre = {}
        self._jacobi = {}

    def legendre(self, nq):
        if nq not in self._legendre:
            self._legendre[nq] = roots_legendre(nq)
        return self._legendre[nq]

    def jacobi(self, nq, alpha, beta):
        key = (nq, round(alpha, 14), round(beta, 14))
        if key not in self._jacobi:
            if alpha == 0.0 and beta == 0.0:
                self._jacobi[key] = roots_legendre(nq)
            else:
                self._jacobi[key] = roots_jacobi(nq, alpha, beta)
        return self._jacobi[key]


_NODES = _NodeCache()
_MAX_PANELS = 60000


class RayIntegrator:
    """SC density integrals from the disk center to boundary points.

    Uses the crowding-stable factor formula: along the ray t*exp(i*phi),
    1 - t*exp(i*(phi-theta_j)) has real part s + 2*(1-s)*sin^2(delta/2)
    (all nonnegative terms) with s = 1-t.
    """

    def __init__(self, geom, betas, nq=8):
        self.geom = geom
        self.betas = np.asarray(betas, dtype=float)
        self.nq = nq
        # prevertices with zero exponent contribute no factor at all; only
        # the others carry singularities and drive panel refinement
        self.active = np.flatnonzero(self.betas != 0.0)

    def raw(self, anchor, x, singular=None):
        """Integral of the SC density from 0 to exp(i*phi).

        phi sits at fraction x of gap `anchor`; pass singular=j when phi is
        exactly prevertex j.

        Panels are the dyadic cascade [2^-k, 2^-k+1] in s = 1 - t plus a
        tip panel [0, 2^-K]: the distance from the ray point at radius
        1 - s to the unit circle is at least s, so every cascade panel
        obeys the one-half rule, and the tip is shrunk below the distance
        to the nearest counted prevertex (min over j of |sin delta_j|, or
        1 for obtuse gaps).
        """
        geom = self.geom
        act = self.active
        sing_beta = 0.0
        if singular is not None:
            sing_beta = float(self.betas[singular])
            act = act[act != singular]
        phi = geom.angle_of(anchor, x)
        nq = self.nq
        if len(act) == 0:
            total = 1.0 + 0.0j
            if sing_beta != 0.0:
                total = 1.0 / (sing_beta + 1.0)
            return np.exp(1j * phi) * total

        deltas = geom.deltas(anchor, x)[act]
        b_use = self.betas[act]
        q = np.sin(0.5 * deltas) ** 2
        sd = np.sin(deltas)
        gamma_j = np.where(q <= 0.5, np.abs(sd), 1.0)
        gamma = max(float(gamma_j.min()), 1e-290)
        K = max(int(np.ceil(-np.log2(gamma))), 1)
        if K > 1200:
            raise NumericalError("quadrature cascade too deep (crowding)")

        edges = 2.0 ** -np.arange(K + 1, dtype=float)  # 1, 1/2, ..., 2^-K
        xg, wg = _NODES.legendre(nq)
        mids = 0.5 * (edges[:-1] + edges[1:])
        halfs = 0.5 * (edges[:-1] - edges[1:])
        s_leg = (mids[:, None] + halfs[:, None] * xg[None, :]).reshape(-1)
        w_leg = (halfs[:, None] * wg[None, :]).reshape(-1)
        if sing_beta != 0.0:
            # target factor is exactly s^beta: absorbed by the Jacobi
            # weight on the tip, an explicit positive factor elsewhere
            xj, wj = _NODES.jacobi(nq, 0.0, sing_beta)
            s_tip = 0.5 * edges[-1] * (1.0 + xj)
            w_tip = wj * (0.5 * edges[-1]) ** (sing_beta + 1.0)
            w_leg = w_leg * s_leg**sing_beta
        else:
            xj, wj = _NODES.legendre(nq)
            s_tip = 0.5 * edges[-1] * (1.0 + xj)
            w_tip = wj * 0.5 * edges[-1]
        s = np.concatenate([s_leg, s_tip])
        w = np.concatenate([w_leg, w_tip])

        re = s[:, None] + 2.0 * (1.0 - s[:, None]) * q[None, :]
        im = (s[:, None] - 1.0) * sd[None, :]
        vals = np.exp(np.log(re + 1j * im) @ b_use)
        return np.exp(1j * phi) * (w @ vals)

    def prevertex_images(self):
        """Raw integrals to every prevertex."""
        return np.array([self.raw(k, 0.0, singular=k) for k in range(self.geom.n)])


# ---------------------------------------------------------------------------
# disk map
# ---------------------------------------------------------------------------

@dataclass
class ScDiskMap:
    """Solved disk-to-polygon map.

    f(z) = offset + scale * integral_0^z prod_j (1 - zeta/z_j)^beta_j dzeta
    with the prevertices z_j = exp(i*thetas) and offset = f(0).
    """

    geom: PrevertexAngles
    betas: np.ndarray
    scale: complex
    offset: complex
    nq: int = 8
    residual: float = 0.0
    alignment_residual: float = 0.0

    @property
    def thetas(self):
        return self.geom.thetas

    @property
    def prevertices(self):
        return self.geom.prevertices

    def ray(self):
        return RayIntegrator(self.geom, self.betas, self.nq)

    def boundary_point(self, anchor, x, singular=None):
        """Physical image of the boundary point at fraction x of gap anchor."""
        return self.offset + self.scale * self.ray().raw(anchor, x, singular=singular)


def _point_segment_distance(p, a, b):
    ab = b - a
    L2 = (ab * ab.conjugate()).real
    if L2 < 1e-300:
        return abs(p - a)
    t = ((p - a) * ab.conjugate()).real / L2
    t = min(max(t, 0.0), 1.0)
    return abs(p - (a + t * ab))


def _segment_raw(geom, betas, za, zb, nq):
    """Integral of the SC density along the straight segment za -> zb.

    Plain complex arithmetic (fine away from crowded prevertices). Segment
    endpoints may coincide with prevertices; their singular factors are
    absorbed by Gauss-Jacobi weights. A path through a prevertex with a
    nonzero exponent is an error.
    """
    betas = np.asarray(betas, dtype=float)
    active = np.flatnonzero(betas != 0.0)
    z_act = geom.prevertices[active]
    b_act = betas[active]
    za, zb = complex(za), complex(zb)
    if abs(zb - za) < 1e-300:
        return 0.0 + 0.0j

    def near_pos(p):
        if len(z_act) == 0:
            return None
        d = np.abs(z_act - p)
        k = int(np.argmin(d))
        return k if d[k] < 1e-12 else None

    sing_a = near_pos(za)
    sing_b = near_pos(zb)
    for pos in range(len(z_act)):
        if pos in (sing_a, sing_b):
            continue
        if _point_segment_distance(z_act[pos], za, zb) < 1e-12:
            raise NumericalError(
                "integration path passes through a prevertex that is not a panel endpoint"
            )

    total = 0.0 + 0.0j
    stack = [(za, zb, sing_a, sing_b, 0)]
    while stack:
        pa, pb, sa, sb, depth = stack.pop()
        if depth > 60:
            raise NumericalError("quadrature recursion too deep (crowding)")
        dmin = 1.0
        for pos in range(len(z_act)):
            if pos in (sa, sb):
                continue
            dmin = min(dmin, _point_segment_distance(z_act[pos], pa, pb))
        if abs(pb - pa) > dmin:
            mid = 0.5 * (pa + pb)
            stack.append((mid, pb, None, sb, depth + 1))
            stack.append((pa, mid, sa, None, depth + 1))
            continue
        h = 0.5 * (pb - pa)
        mid = 0.5 * (pa + pb)
        alpha = b_act[sb] if sb is not None else 0.0
        beta = b_act[sa] if sa is not None else 0.0
        xg, wg = _NODES.jacobi(nq, alpha, beta)
        zeta = mid + h * xg
        const = 1.0 + 0.0j
        keep = np.ones(len(z_act), dtype=bool)
        if sb is not None:
            # (1 - zeta/z_b) = (h/z_b)(1 - x) exactly on the panel
            const *= (h / z_act[sb]) ** alpha
            keep[sb] = False
        if sa is not None:
            const *= (-h / z_act[sa]) ** beta
            keep[sa] = False
        if keep.any():
            fac = 1.0 - zeta[:, None] / z_act[None, keep]
            vals = np.exp(np.log(fac) @ b_act[keep])
        else:
            vals = np.ones(len(zeta), dtype=complex)
        total += h * const * (wg @ vals)
    return total


def sc_eval(m, betas, z, path_from=0j):
    """Map value f(z), integrating the last leg along path_from -> z.

    f(path_from) itself is computed along the straight segment from the
    center, so passing an intermediate point just reroutes the final leg
    (useful to stay clear of boundary singularities).
    """
    if abs(z) > 1.0 + 1e-12:
        raise NumericalError("evaluation point must lie in the closed unit disk")
    raw = 0.0 + 0.0j
    if abs(path_from) > 0:
        raw += _segment_raw(m.geom, betas, 0j, complex(path_from), m.nq)
    raw += _segment_raw(m.geom, betas, complex(path_from), complex(z), m.nq)
    return m.offset + m.scale * raw


# ---------------------------------------------------------------------------
# parameter problem
# ---------------------------------------------------------------------------

def _initial_gaps(poly):
    """Strip-map ansatz for the prevertex angles.

    Vertices get a channel coordinate (arclength fraction along their long
    side, caps pinned to the ends); the conformal picture of an ideal
    straight channel then predicts boundary angles via 2*atan(exp(.)),
    which lands the log-gap unknowns within O(1) of the solution even for
    extreme aspect ratios.
    """
    v = poly.vertices
    n = len(v)
    c0, c1, c2, c3 = poly.corner_flags

    def chain_fractions(i0, i1):
        idx = list(range(i0, i1 + 1))
        pts = v[idx]
        seg = np.abs(np.diff(pts))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        L = cum[-1] if cum[-1] > 0 else 1.0
        return idx, cum / L, float(cum[-1])

    w_idx, w_frac, w_len = chain_fractions(c0, c1)
    n_idx = list(range(c1, c2 + 1))
    e_idx, e_frac, e_len = chain_fractions(c2, c3)
    s_idx = list(range(c3, n)) + [c0]

    M = (w_len + e_len) / 2.0 / max((abs(v[c2] - v[c1]) + abs(v[c0] - v[c3])) / 2.0, 1e-12)
    M = float(np.clip(M, 0.75, 60.0))

    def bottom_angle(x):
        return -2.0 * np.arctan(np.exp(np.clip(np.pi * (M / 2.0 - x), -700, 700)))

    def top_angle(x):
        return +2.0 * np.arctan(np.exp(np.clip(np.pi * (M / 2.0 - x), -700, 700)))

    phi = np.zeros(n)
    for i, fr in zip(w_idx, w_frac):
        phi[i] = bottom_angle(fr * M)
    # North cap: between bottom(M) and top(M)
    lo, hi = bottom_angle(M), top_angle(M)
    interior = n_idx[1:-1]
    for j, i in enumerate(interior):
        phi[i] = lo + (j + 1) * (hi - lo) / (len(interior) + 1)
    for i, fr in zip(e_idx, e_frac):
        phi[i] = top_angle((1.0 - fr) * M)
    # South cap: between top(0) and bottom(0)+2pi
    lo, hi = top_angle(0.0), bottom_angle(0.0) + TWO_PI
    interior = s_idx[1:-1]
    for j, i in enumerate(interior):
        phi[i] = lo + (j + 1) * (hi - lo) / (len(interior) + 1)

    phi = phi - phi[0]
    phi = np.where(np.arange(n) > 0, np.where(phi <= 0, phi + TWO_PI, phi), phi)
    gaps = np.diff(np.concatenate([phi, [TWO_PI]]))
    if np.any(gaps <= 0):
        # degenerate ansatz (overlapping angles): fall back to gaps
        # proportional to average adjacent edge length
        e = np.abs(np.roll(v, -1) - v)
        gaps = 0.5 * (e + np.roll(e, 1))
    gaps = np.maximum(gaps, 1e-280)
    return gaps * (TWO_PI / gaps.sum())


def _gaps_from_logs(y):
    """Softmax of [0, y] scaled to total 2*pi; keeps ordering by construction."""
    u = np.concatenate([[0.0], y])
    u = u - u.max()
    e = np.exp(u)
    return TWO_PI * e / e.sum()


def _fd_jacobian(fun, y, f0, h=1e-6):
    J = np.empty((len(f0), len(y)))
    for k in range(len(y)):
        yk = y.copy()
        step = h * max(1.0, abs(y[k]))
        yk[k] += step
        J[:, k] = (fun(yk) - f0) / step
    return J


def solve_parameter_problem(poly, nq=8, ftol=1e-8, max_iter=100, quads=None):
    """Find the prevertex configuration whose image matches the polygon.

    Unknowns are the n-1 free log gaps; the n-3 cross-ratio equations are
    closed with two gauge conditions that put the prevertex barycenter at
    the disk center, which makes the solved configuration the canonical
    (normalized) one: symmetric polygons get symmetric prevertices.
    Gauss-Newton steps with Broyden Jacobian updates, a halving line
    search, and periodic finite-difference restarts.
    """
    qs = quads if quads is not None else delaunay_quads(poly)
    omega = poly.vertices
    n = poly.n
    betas = poly.betas
    targets = qs.target_logs
    kidx = np.array(qs.quads)

    def residual(y):
        gaps = _gaps_from_logs(y)
        try:
            geom = PrevertexAngles(gaps)
            zeta = RayIntegrator(geom, betas, nq).prevertex_images()
        except NumericalError:
            return np.full(n - 1, 1e6)
        if not np.all(np.isfinite(zeta)):
            return np.full(n - 1, 1e6)
        za, zb, zc, zd = (zeta[kidx[:, i]] for i in range(4))
        num = np.abs((zd - za) * (zb - zc))
        den = np.abs((zc - zd) * (za - zb))
        if np.any(num < 1e-300) or np.any(den < 1e-300):
            return np.full(n - 1, 1e6)
        Fq = np.log(num / den) - targets
        zsum = geom.prevertices.sum() * (2.0 / n)
        return np.concatenate([Fq, [zsum.real, zsum.imag]])

    y = np.log(_initial_gaps(poly))
    y = (y - y[0])[1:]
    F = residual(y)
    best_y, best_norm = y.copy(), float(np.abs(F).max())
    J = _fd_jacobian(residual, y, F)
    since_restart = 0
    converged = False
    for _ in range(max_iter):
        if np.abs(F).max() <= ftol:
            converged = True
            break
        try:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        except np.linalg.LinAlgError:
            step = -J.T @ F
        lam, improved = 1.0, False
        norm0 = np.linalg.norm(F)
        for _ in range(10):
            y_new = y + lam * step
            F_new = residual(y_new)
            if np.linalg.norm(F_new) < norm0:
                improved = True
                break
            lam *= 0.5
        if improved:
            dy = y_new - y
            dF = F_new - F
            denom = float(dy @ dy)
            if denom > 0:
                J = J + np.outer(dF - J @ dy, dy) / denom
            y, F = y_new, F_new
            since_restart += 1
            if np.abs(F).max() < best_norm:
                best_y, best_norm = y.copy(), float(np.abs(F).max())
            if since_restart >= 30:
                J = _fd_jacobian(residual, y, F)
                since_restart = 0
        else:
            if since_restart == 0:
                # fresh Jacobian and still no progress: damped step
                lam_reg = 1e-6 * np.trace(J.T @ J) / len(y)
                ok = False
                for _ in range(8):
                    try:
                        step = np.linalg.solve(
                            J.T @ J + lam_reg * np.eye(len(y)), -J.T @ F
                        )
                    except np.linalg.LinAlgError:
                        break
                    F_new = residual(y + step)
                    if np.linalg.norm(F_new) < norm0:
                        y, F = y + step, F_new
                        ok = True
                        break
                    lam_reg *= 10.0
                if not ok:
                    break
                if np.abs(F).max() < best_norm:
                    best_y, best_norm = y.copy(), float(np.abs(F).max())
            else:
                J = _fd_jacobian(residual, y, F)
                since_restart = 0
    else:
        F = residual(y)
        converged = bool(np.abs(F).max() <= ftol)

    if not converged:
        F = residual(best_y)
        if np.abs(F).max() <= ftol:
            y, converged = best_y, True
    if not converged:
        raise ConvergenceError(
            f"disk-map parameter problem did not reach {ftol:g} (best residual {best_norm:g})",
            residual=best_norm,
        )

    gaps = _gaps_from_logs(y)
    geom = PrevertexAngles(gaps)
    if gaps.min() < 1e-12:
        warnings.warn(
            f"prevertex crowding: smallest gap {gaps.min():.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    zeta = RayIntegrator(geom, betas, nq).prevertex_images()

    # similarity alignment a*zeta + b ~ omega, complex least squares
    zs, ws = zeta.sum(), omega.sum()
    denom = n * float(np.vdot(zeta, zeta).real) - abs(zs) ** 2
    a = (n * np.vdot(zeta, omega) - np.conj(zs) * ws) / denom
    b = (ws - a * zs) / n
    align = float(np.abs(a * zeta + b - omega).max())
    diam = poly.diameter()
    if align > 1e-6 * diam:
        raise ConvergenceError(
            f"prevertex alignment residual {align:g} exceeds {1e-6 * diam:g}",
            residual=align,
        )
    return ScDiskMap(
        geom=geom,
        betas=betas,
        scale=complex(a),
        offset=complex(b),
        nq=nq,
        residual=float(np.abs(residual(y)[: n - 3]).max()) if n > 3 else 0.0,
        alignment_residual=align,
    )


# ---------------------------------------------------------------------------
# rectangle composition and markers
# ---------------------------------------------------------------------------

@dataclass
class RectMap:
    """Auxiliary disk-to-rectangle map on the four corner prevertices.

    Ordinates along the rectangle's long direction pair the West and East
    circular arcs; modulus is the aspect ratio (first side / second side
    in corner order).
    """

    corner_indices: tuple
    corner_images: np.ndarray
    images: np.ndarray  # rectangle images of every prevertex
    modulus: float
    nq: int = 8
    geom: PrevertexAngles = field(repr=False, default=None)
    betas_rect: np.ndarray = field(repr=False, default=None)

    def ordinate(self, w, side):
        """Normalized position of rectangle point w along the given side."""
        c0, c1, c2, c3 = range(4)
        R = self.corner_images
        if side == "West":
            org, d = R[c0], R[c1] - R[c0]
        elif side == "East":
            org, d = R[c3], R[c2] - R[c3]
        else:
            raise SchemaError("ordinates exist on the West/East sides only")
        return float(((w - org) * np.conj(d)).real / abs(d) ** 2)


def disk_to_rectangle(m, corners, nq=None):
    """Rectangle map with the four corner prevertices as half-exponent poles."""
    corners = tuple(int(c) for c in corners)
    rolled_ok = False
    if len(corners) == 4 and len(set(corners)) == 4:
        r = corners.index(min(corners))
        unrolled = corners[r:] + corners[:r]
        rolled_ok = list(unrolled) == sorted(unrolled)
    if not rolled_ok:
        raise SchemaError("corner indices must be four distinct indices in cyclic order")
    nq = nq or m.nq
    n = m.geom.n
    betas_rect = np.zeros(n)
    for c in corners:
        betas_rect[c] = -0.5
    ray = RayIntegrator(m.geom, betas_rect, nq)
    images = np.array(
        [
            ray.raw(k, 0.0, singular=k if k in corners else None)
            for k in range(n)
        ]
    )
    R = images[list(corners)]
    s1 = abs(R[1] - R[0])
    s2 = abs(R[2] - R[1])
    s3 = abs(R[3] - R[2])
    s4 = abs(R[0] - R[3])
    if s2 <= 0 or s4 <= 0:
        raise NumericalError("degenerate rectangle map")
    skew = max(abs(s1 - s3) / max(s1, s3), abs(s2 - s4) / max(s2, s4))
    if skew > 1e-3:
        warnings.warn(
            f"rectangle map sides differ by {skew:.2e}; quadrature may be too coarse",
            RuntimeWarning,
            stacklevel=2,
        )
    return RectMap(
        corner_indices=corners,
        corner_images=R,
        images=images,
        modulus=float((s1 + s3) / (s2 + s4)),
        nq=nq,
        geom=m.geom,
        betas_rect=betas_rect,
    )


def boundary_markers(m, rect, count):
    """Paired physical markers on the West/East sides at equal ordinates.

    Ordinates are count uniform fractions of the rectangle's long (West ->
    East pairing) direction; the first and last pairs are the domain
    corners themselves.
    """
    if count < 2:
        raise SchemaError("need at least two markers")
    c0, c1, c2, c3 = rect.corner_indices
    ray_rect = RayIntegrator(m.geom, rect.betas_rect, rect.nq)
    ray_full = m.ray()

    def locate(tau, idx, side):
        """Angle (anchor, x) whose rectangle ordinate equals tau.

        Brackets come from the prevertex ordinate table (same integrals as
        rect.images), so the bisection only ever evaluates strictly inside
        a gap and never lands on a corner singularity.
        """
        u = np.array([rect.ordinate(rect.images[i], side) for i in idx])
        incr = u[-1] >= u[0]
        uu = u if incr else -u
        tt = tau if incr else -tau
        k = int(np.searchsorted(uu, tt, side="right")) - 1
        k = min(max(k, 0), len(idx) - 2)
        while k > 0 and uu[k] > tt:
            k -= 1
        while k < len(idx) - 2 and uu[k + 1] < tt:
            k += 1
        anchor = idx[k]

        def g(x):
            w = ray_rect.raw(anchor, x)
            return rect.ordinate(w, side) - tau

        lo, hi = 0.0, 1.0
        glo = u[k] - tau
        gm = glo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = g(mid)
            if abs(gm) <= 1e-10:
                return anchor, mid
            if (glo <= 0.0) == (gm <= 0.0):
                lo, glo = mid, gm
            else:
                hi = mid
        if abs(gm) > 1e-10:
            raise NumericalError(
                "marker ordinate root-finding stalled (crowding); refine the polygon or quadrature"
            )
        return anchor, mid

    taus = np.linspace(0.0, 1.0, count)
    west_idx = list(range(c0, c1 + 1))
    east_idx = list(range(c2, c3 + 1))

    west_pts, east_pts = [], []
    for tau in taus:
        if tau == 0.0:
            west_pts.append(m.boundary_point(c0, 0.0, singular=c0))
            east_pts.append(m.boundary_point(c3, 0.0, singular=c3))
            continue
        if tau == 1.0:
            west_pts.append(m.boundary_point(c1, 0.0, singular=c1))
            east_pts.append(m.boundary_point(c2, 0.0, singular=c2))
            continue
        aw, xw = locate(tau, west_idx, "West")
        ae, xe = locate(tau, east_idx, "East")
        west_pts.append(m.offset + m.scale * ray_full.raw(aw, xw))
        east_pts.append(m.offset + m.scale * ray_full.raw(ae, xe))

    west = np.array(west_pts)
    east = np.array(east_pts)
    return (
        np.column_stack([west.real, west.imag]),
        np.column_stack([east.real, east.imag]),
    )
