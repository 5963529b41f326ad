"""NURBS curve kernel: basis evaluation, derivatives, knot algebra.

All operations are pure: they never mutate their inputs and return fresh
objects. Geometry-modifying operations (knot insertion, degree elevation,
affine reparameterization, splitting, merging) preserve the evaluated curve
to machine precision; the test suite pins this at 1e-12 over dense samples.

Conventions:
  * knot vectors are clamped (open): endpoint multiplicity degree+1;
  * parameter spans are half-open with the last span closed, so clamped
    curves interpolate both end control points;
  * knots equal within 1e-10 of the knot range are treated as identical.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, SchemaError

KNOT_MERGE_REL = 1e-10
JOIN_TOL = 1e-10


@dataclass(frozen=True)
class KnotVector:
    """Clamped nondecreasing knot vector with its polynomial degree."""

    values: np.ndarray
    degree: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        p = self.degree
        if p < 0:
            raise SchemaError("degree must be nonnegative")
        if len(vals) < 2 * (p + 1):
            raise SchemaError("knot vector too short for degree %d" % p)
        if np.any(np.diff(vals) < 0):
            raise SchemaError("knot vector must be nondecreasing")
        tol = self.merge_tol
        if abs(vals[p] - vals[0]) > tol or abs(vals[-p - 1] - vals[-1]) > tol:
            raise SchemaError("knot vector must be clamped (open)")
        if len(vals) > 2 * (p + 1) and (
            vals[p + 1] - vals[0] <= tol or vals[-1] - vals[-p - 2] <= tol
        ):
            raise SchemaError("endpoint knot multiplicity exceeds degree+1")

    @property
    def start(self):
        return float(self.values[self.degree])

    @property
    def end(self):
        return float(self.values[-self.degree - 1])

    @property
    def merge_tol(self):
        rng = float(self.values[-1] - self.values[0])
        return KNOT_MERGE_REL * max(rng, 1.0)

    @property
    def num_basis(self):
        return len(self.values) - self.degree - 1

    def span(self, t):
        """Index i with values[i] <= t < values[i+1] (last span closed)."""
        U, p = self.values, self.degree
        n = self.num_basis - 1
        if t < self.start - self.merge_tol or t > self.end + self.merge_tol:
            raise NumericalError(f"parameter {t} outside knot range [{self.start}, {self.end}]")
        i = int(np.searchsorted(U, t, side="right")) - 1
        return min(max(i, p), n)

    def multiplicity(self, t):
        return int(np.sum(np.abs(self.values - t) <= self.merge_tol))

    def distinct(self):
        """Distinct knot values and their multiplicities."""
        vals = self.values
        tol = self.merge_tol
        out_v, out_m = [vals[0]], [1]
        for v in vals[1:]:
            if v - out_v[-1] <= tol:
                out_m[-1] += 1
            else:
                out_v.append(v)
                out_m.append(1)
        return np.array(out_v), np.array(out_m, dtype=int)

    def greville(self):
        """Knot averages; collocation at these points is nonsingular."""
        U, p = self.values, self.degree
        n = self.num_basis
        if p == 0:
            return 0.5 * (U[:-1] + U[1:])
        return np.array([np.mean(U[i + 1 : i + p + 1]) for i in range(n)])


@dataclass(frozen=True)
class NurbsCurve:
    """Rational B-spline curve in the plane."""

    knots: KnotVector
    control_points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape[1] != 2:
            raise SchemaError("control points must be 2D")
        if len(w) != len(pts):
            raise SchemaError("weight count must match control point count")
        if np.any(w <= 0):
            raise SchemaError("weights must be strictly positive")
        if len(pts) != self.knots.num_basis:
            raise SchemaError(
                "control point count %d incompatible with knot vector (%d basis functions)"
                % (len(pts), self.knots.num_basis)
            )

    @property
    def degree(self):
        return self.knots.degree

    @property
    def start(self):
        return self.knots.start

    @property
    def end(self):
        return self.knots.end

    def homogeneous(self):
        """(n, 3) array of (w*x, w*y, w)."""
        w = self.weights[:, None]
        return np.hstack([self.control_points * w, w])

    def bbox_diagonal(self):
        lo = self.control_points.min(axis=0)
        hi = self.control_points.max(axis=0)
        return float(np.hypot(*(hi - lo)))


def _from_homogeneous(knots, hom):
    w = hom[:, 2]
    if np.any(w <= 0):
        raise NumericalError("operation produced nonpositive weights")
    return NurbsCurve(knots, hom[:, :2] / w[:, None], w.copy())


# ---------------------------------------------------------------------------
# basis evaluation
# ---------------------------------------------------------------------------

def _basis_funs(kv, span, t):
    """Nonzero basis values N_{span-p..span,p}(t), Cox-de Boor triangle."""
    p, U = kv.degree, kv.values
    N = np.ones(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    for j in range(1, p + 1):
        left[j] = t - U[span + 1 - j]
        right[j] = U[span + j] - t
        saved = 0.0
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        N[j] = saved
    return N


def _basis_ders(kv, span, t, order):
    """(order+1, p+1) array of basis derivatives at t (rows: 0..order)."""
    p, U = kv.degree, kv.values
    order = min(order, p) if p > 0 else 0
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    for j in range(1, p + 1):
        left[j] = t - U[span + 1 - j]
        right[j] = U[span + j] - t
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved
    ders = np.zeros((order + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    r = p
    for k in range(1, order + 1):
        ders[k] *= r
        r *= p - k
    return ders


def basis_eval(kv, i, t):
    """Single B-spline basis value N_{i,p}(t).

    The last basis function evaluates to 1 at the right endpoint (half-open
    spans, last span closed).
    """
    n = kv.num_basis
    if i < 0 or i >= n:
        raise NumericalError(f"basis index {i} out of range 0..{n - 1}")
    span = kv.span(t)
    p = kv.degree
    if i < span - p or i > span:
        return 0.0
    return float(_basis_funs(kv, span, t)[i - (span - p)])


def basis_row(kv, t):
    """Dense row of all basis values at t (length num_basis)."""
    row = np.zeros(kv.num_basis)
    span = kv.span(t)
    row[span - kv.degree : span + 1] = _basis_funs(kv, span, t)
    return row


def collocation_matrix(kv, ts):
    """Rows of basis values at each parameter in ts."""
    ts = np.asarray(ts, dtype=float)
    B = np.zeros((len(ts), kv.num_basis))
    for r, t in enumerate(ts):
        span = kv.span(t)
        B[r, span - kv.degree : span + 1] = _basis_funs(kv, span, t)
    return B


def collocation_matrix_ders(kv, ts, order):
    """List of matrices [B0, B1, .., Border] with k-th derivatives as rows."""
    ts = np.asarray(ts, dtype=float)
    mats = [np.zeros((len(ts), kv.num_basis)) for _ in range(order + 1)]
    for r, t in enumerate(ts):
        span = kv.span(t)
        ders = _basis_ders(kv, span, t, order)
        for k in range(order + 1):
            if k < ders.shape[0]:
                mats[k][r, span - kv.degree : span + 1] = ders[k]
    return mats


# ---------------------------------------------------------------------------
# evaluation and derivatives
# ---------------------------------------------------------------------------

def curve_eval(curve, t):
    """Point on the curve at parameter t."""
    return curve_eval_many(curve, np.array([t]))[0]


def curve_eval_many(curve, ts):
    """(len(ts), 2) array of curve points."""
    B = collocation_matrix(curve.knots, ts)
    hom = B @ curve.homogeneous()
    return hom[:, :2] / hom[:, 2:3]


def curve_derivative(curve, t, order=1):
    """Derivative d^k C/dt^k at t for order 1 or 2 (exact quotient rule)."""
    if order not in (1, 2):
        raise NumericalError("derivative order must be 1 or 2")
    span = curve.knots.span(t)
    p = curve.degree
    ders = _basis_ders(curve.knots, span, t, order)
    hom = curve.homogeneous()[span - p : span + 1]
    A = ders @ hom  # rows: value, 1st, (2nd) of (wx, wy, w)
    if A.shape[0] < order + 1:  # degree lower than requested order
        A = np.vstack([A, np.zeros((order + 1 - A.shape[0], 3))])
    w = A[0, 2]
    C = A[0, :2] / w
    C1 = (A[1, :2] - A[1, 2] * C) / w
    if order == 1:
        return C1
    return (A[2, :2] - 2.0 * A[1, 2] * C1 - A[2, 2] * C) / w


def curve_derivative_many(curve, ts, order=1):
    """Stacked derivatives at each parameter in ts."""
    return np.array([curve_derivative(curve, t, order) for t in ts])


# ---------------------------------------------------------------------------
# knot insertion / degree elevation / reparameterization
# ---------------------------------------------------------------------------

def knot_insert(curve, t, times=1):
    """Insert parameter t `times` times (Boehm); geometry unchanged."""
    if times < 0:
        raise NumericalError("insertion count must be nonnegative")
    if times == 0:
        return NurbsCurve(curve.knots, curve.control_points.copy(), curve.weights.copy())
    kv = curve.knots
    if t <= kv.start - kv.merge_tol or t >= kv.end + kv.merge_tol:
        raise NumericalError("insertion parameter must lie inside the knot range")
    p, U = kv.degree, kv.values
    s = kv.multiplicity(t)
    if s + times > p:
        raise NumericalError(
            f"knot multiplicity overflow: {s}+{times} > degree {p} at t={t}"
        )
    k = kv.span(t)
    hom = curve.homogeneous()
    n = len(hom) - 1
    r = times
    new_U = np.concatenate([U[: k + 1], np.full(r, float(t)), U[k + 1 :]])
    Q = np.zeros((n + r + 1, 3))
    Q[: k - p + 1] = hom[: k - p + 1]
    Q[k - s + r :] = hom[k - s :]
    R = hom[k - p : k - s + 1].copy()
    L = k - p
    for j in range(1, r + 1):
        L = k - p + j
        for i in range(p - j - s + 1):
            alpha = (t - U[L + i]) / (U[i + k + 1] - U[L + i])
            R[i] = alpha * R[i + 1] + (1.0 - alpha) * R[i]
        Q[L] = R[0]
        Q[k + r - j - s] = R[p - j - s]
    for i in range(L + 1, k - s):
        Q[i] = R[i - L]
    return _from_homogeneous(KnotVector(new_U, p), Q)


def _project_to_space(curve, new_kv):
    """Re-express a curve exactly in a richer clamped spline space.

    Valid whenever the curve's homogeneous components lie in the target
    space (degree elevated and/or knots refined); solves the Greville
    collocation system, which is nonsingular by Schoenberg-Whitney.
    """
    grev = new_kv.greville()
    B = collocation_matrix(new_kv, grev)
    # homogeneous samples of the original curve
    Bs = collocation_matrix(curve.knots, grev)
    rhs = Bs @ curve.homogeneous()
    Q = np.linalg.solve(B, rhs)
    return _from_homogeneous(new_kv, Q)


def degree_elevate(curve, target_p):
    """Raise the polynomial degree without changing the curve.

    Interior knot multiplicities grow by the elevation amount so the
    original continuity is kept exactly.
    """
    p = curve.degree
    if target_p < p:
        raise NumericalError(f"target degree {target_p} below current degree {p}")
    if target_p == p:
        return NurbsCurve(curve.knots, curve.control_points.copy(), curve.weights.copy())
    t = target_p - p
    vals, mult = curve.knots.distinct()
    new_vals = np.repeat(vals, mult + t)
    return _project_to_space(curve, KnotVector(new_vals, target_p))


def affine_reparam(curve, s, t):
    """Map the knot vector to s*knots + t; control data untouched."""
    if s <= 0:
        raise NumericalError("affine knot scale must be positive")
    new_vals = s * curve.knots.values + t
    return NurbsCurve(
        KnotVector(new_vals, curve.degree),
        curve.control_points.copy(),
        curve.weights.copy(),
    )


def split_curve(curve, t):
    """Split into two clamped curves covering [start, t] and [t, end]."""
    kv = curve.knots
    if t <= kv.start + kv.merge_tol or t >= kv.end - kv.merge_tol:
        raise NumericalError("split parameter must be strictly inside the knot range")
    p = curve.degree
    s = kv.multiplicity(t)
    work = knot_insert(curve, t, p - s) if p - s > 0 else curve
    U = work.knots.values
    hom = work.homogeneous()
    # after insertion t has multiplicity p and C(t) is control point k-p,
    # where k is the index of the last knot equal to t
    k = int(np.searchsorted(U, t + kv.merge_tol)) - 1
    left_U = np.concatenate([U[: k + 1], [t]])
    right_U = np.concatenate([np.full(p + 1, float(t)), U[k + 1 :]])
    left = _from_homogeneous(KnotVector(left_U, p), hom[: k - p + 1])
    right = _from_homogeneous(KnotVector(right_U, p), hom[k - p :])
    return left, right


def merge_curves(segments):
    """Join abutting curve segments into one clamped curve.

    Interior joins get knot multiplicity p (C0 in parameter, exact geometric
    continuity of the original data). Inverse of split_curve.
    """
    if not segments:
        raise SchemaError("nothing to merge")
    if len(segments) == 1:
        c = segments[0]
        return NurbsCurve(c.knots, c.control_points.copy(), c.weights.copy())
    p = segments[0].degree
    scale = max(seg.bbox_diagonal() for seg in segments)
    scale = max(scale, 1e-12)
    for seg in segments[1:]:
        if seg.degree != p:
            raise SchemaError("cannot merge curves of different degrees")
    rng = segments[-1].end - segments[0].start
    gap_tol = KNOT_MERGE_REL * max(abs(rng), 1.0)
    for a, b in zip(segments[:-1], segments[1:]):
        if abs(a.end - b.start) > gap_tol:
            raise SchemaError(
                f"parameter gap between segments: [{a.start}, {a.end}] then [{b.start}, {b.end}]"
            )
        if np.linalg.norm(a.control_points[-1] - b.control_points[0]) > JOIN_TOL * scale:
            raise SchemaError("segment endpoints do not coincide")
        if abs(a.weights[-1] - b.weights[0]) > JOIN_TOL * max(a.weights[-1], 1.0):
            raise SchemaError("segment endpoint weights do not match")
    # each interior join keeps p copies of the junction knot: the left
    # segment's trailing clamp minus one, none from the right's leading clamp
    knots = list(segments[0].knots.values[:-1])
    hom = [segments[0].homogeneous()]
    for seg in segments[1:]:
        knots.extend(seg.knots.values[p + 1 : -1])
        hom.append(seg.homogeneous()[1:])
    knots.append(segments[-1].knots.values[-1])
    Q = np.vstack(hom)
    return _from_homogeneous(KnotVector(np.array(knots), p), Q)


# ---------------------------------------------------------------------------
# projection and sampling
# ---------------------------------------------------------------------------

class ProjectionError(NumericalError):
    """closest_point ran out of iterations; carries the best residual."""

    def __init__(self, best_t, best_residual):
        super().__init__(
            f"closest-point projection did not converge (best t={best_t}, residual={best_residual:g})"
        )
        self.best_t = best_t
        self.best_residual = best_residual


def closest_point(curve, point, guess, max_iter=50, rel_tol=1e-10):
    """Parameter of the closest point on the curve to `point`.

    Newton iteration on (C(t)-P).C'(t)=0 from the caller's guess, clamped to
    the knot range; falls back to dense sampling plus golden-section
    refinement when Newton stagnates. Returns an endpoint parameter when the
    minimizer clamps there.
    """
    P = np.asarray(point, dtype=float)
    lo, hi = curve.start, curve.end
    scale_len = max(curve.bbox_diagonal(), 1e-14)

    def resid(t):
        d = curve_eval(curve, t) - P
        c1 = curve_derivative(curve, t, 1)
        return float(d @ c1), d, c1

    def converged(t, f, c1):
        tol = rel_tol * max(np.linalg.norm(c1), 1e-14) * scale_len
        return abs(f) <= tol

    def newton_from(t0):
        t = float(np.clip(t0, lo, hi))
        for _ in range(max_iter):
            f, d, c1 = resid(t)
            if converged(t, f, c1):
                return t
            c2 = curve_derivative(curve, t, 2)
            fp = float(c1 @ c1 + d @ c2)
            if fp <= 0 or not np.isfinite(fp):
                return None
            t_new = float(np.clip(t - f / fp, lo, hi))
            if t_new == t:
                # clamped at an endpoint with the gradient pointing outward
                if (t == lo and f > 0) or (t == hi and f < 0):
                    return t
                return None
            t = t_new
        f, d, c1 = resid(t)
        return t if converged(t, f, c1) else None

    def dist2(t):
        d = curve_eval(curve, t) - P
        return float(d @ d)

    # dense scan guards Newton against landing in a non-global minimum
    ts = np.linspace(lo, hi, 256)
    d2 = np.sum((curve_eval_many(curve, ts) - P) ** 2, axis=1)
    k = int(np.argmin(d2))

    t_newton = newton_from(guess)
    if t_newton is not None and dist2(t_newton) <= d2[k] * (1 + 1e-12) + 1e-14:
        return t_newton

    # globalize: golden-section refinement around the best sample
    a = ts[max(k - 1, 0)]
    b = ts[min(k + 1, len(ts) - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c, dd = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = dist2(c), dist2(dd)
    for _ in range(120):
        if b - a < 1e-15 * max(1.0, hi - lo):
            break
        if fc < fd:
            b, dd, fd = dd, c, fc
            c = b - invphi * (b - a)
            fc = dist2(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + invphi * (b - a)
            fd = dist2(dd)
    t = 0.5 * (a + b)
    # polish with a few Newton steps
    for _ in range(8):
        f, d, c1 = resid(t)
        c2 = curve_derivative(curve, t, 2)
        fp = float(c1 @ c1 + d @ c2)
        if fp <= 0:
            break
        t = float(np.clip(t - f / fp, lo, hi))
    f, d, c1 = resid(t)
    if converged(t, f, c1) or t in (lo, hi):
        return t
    raise ProjectionError(t, abs(f))


@dataclass
class Polyline:
    """Adaptive sampling of a curve: ordered points with their parameters."""

    params: np.ndarray
    points: np.ndarray
    degenerate: bool = False


def sample_adaptive(curve, chord_tol, max_depth=32):
    """Polyline whose chords deviate from the curve by at most chord_tol.

    Recursive bisection seeded at the distinct knots, so parametric corners
    (full-multiplicity interior knots) land exactly on polyline vertices.
    """
    if chord_tol <= 0:
        raise SchemaError("chord tolerance must be positive")
    if curve.bbox_diagonal() < 1e-14:
        t0, t1 = curve.start, curve.end
        pts = curve_eval_many(curve, [t0, t1])
        return Polyline(np.array([t0, t1]), pts, degenerate=True)

    probes = np.array([0.2113, 0.5, 0.7887, 0.35, 0.65])

    def deviation(t0, p0, t1, p1):
        ts = t0 + (t1 - t0) * probes
        pts = curve_eval_many(curve, ts)
        chord = p1 - p0
        L2 = float(chord @ chord)
        if L2 < 1e-30:
            return float(np.max(np.linalg.norm(pts - p0, axis=1)))
        u = np.clip(((pts - p0) @ chord) / L2, 0.0, 1.0)
        feet = p0 + u[:, None] * chord
        return float(np.max(np.linalg.norm(pts - feet, axis=1)))

    seeds, _ = curve.knots.distinct()
    out_t = [seeds[0]]
    out_p = [curve_eval(curve, seeds[0])]

    def refine(t0, p0, t1, p1, depth):
        if depth < max_depth and deviation(t0, p0, t1, p1) > chord_tol:
            tm = 0.5 * (t0 + t1)
            pm = curve_eval(curve, tm)
            refine(t0, p0, tm, pm, depth + 1)
            refine(tm, pm, t1, p1, depth + 1)
        else:
            out_t.append(t1)
            out_p.append(p1)

    for a, b in zip(seeds[:-1], seeds[1:]):
        pa = out_p[-1]
        pb = curve_eval(curve, b)
        refine(a, pa, b, pb, 0)

    return Polyline(np.array(out_t), np.array(out_p), degenerate=False)
