"""Galerkin assembly over the surface's rational tensor-product basis.

Everything is pulled back to the parameter rectangle with the surface map:
stiffness entries use the adjugate-metric form, so the assembled matrices
stay symmetric and (on interior coefficients) positive definite. Gauss
quadrature runs per nonempty knot span with degree+1 points per direction
unless overridden. Basis tables are stored sparse: each quadrature point
touches only (p+1)(q+1) functions.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import spsolve
from scipy.special import roots_legendre

from .errors import NumericalError
from .splines import collocation_matrix, collocation_matrix_ders, curve_eval_many


@dataclass
class QuadGrid:
    """Tensor quadrature nodes/weights plus per-direction basis tables."""

    u: np.ndarray
    v: np.ndarray
    wu: np.ndarray
    wv: np.ndarray
    Bu: np.ndarray
    Du: np.ndarray
    Bv: np.ndarray
    Dv: np.ndarray


def _span_gauss(kv, npts):
    vals, _ = kv.distinct()
    xg, wg = roots_legendre(npts)
    nodes, weights = [], []
    for a, b in zip(vals[:-1], vals[1:]):
        if b - a <= 0:
            continue
        nodes.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def make_quad_grid(surface, quad_pts=None):
    pu, pv = surface.degrees
    nu = quad_pts or (pu + 1)
    nv = quad_pts or (pv + 1)
    u, wu = _span_gauss(surface.knots_u, nu)
    v, wv = _span_gauss(surface.knots_v, nv)
    Bu, Du = collocation_matrix_ders(surface.knots_u, u, 1)
    Bv, Dv = collocation_matrix_ders(surface.knots_v, v, 1)
    return QuadGrid(u, v, wu, wv, Bu, Du, Bv, Dv)


def geometry_tables(surface, grid):
    """Map values and parametric Jacobian entries at the quadrature grid.

    Returns (points, x_u, x_v, det) with shapes (nu, nv, 2) and (nu, nv).
    """
    hom = surface.homogeneous()
    A = np.einsum("ui,ijc,vj->uvc", grid.Bu, hom, grid.Bv)
    Au = np.einsum("ui,ijc,vj->uvc", grid.Du, hom, grid.Bv)
    Av = np.einsum("ui,ijc,vj->uvc", grid.Bu, hom, grid.Dv)
    W = A[..., 2:3]
    S = A[..., :2] / W
    Su = (Au[..., :2] - Au[..., 2:3] * S) / W
    Sv = (Av[..., :2] - Av[..., 2:3] * S) / W
    det = Su[..., 0] * Sv[..., 1] - Su[..., 1] * Sv[..., 0]
    return S, Su, Sv, det


def rational_basis_tables(surface, grid):
    """Sparse rational basis values and parametric gradients.

    Returns (R, Ru, Rv) as CSR matrices of shape (nq, n) with nq tensor
    quadrature points (v fastest) and n control coefficients (v fastest).
    """
    ku, kv = surface.knots_u, surface.knots_v
    pu, pv = ku.degree, kv.degree
    n_u, n_v = surface.shape
    nqu, nqv = len(grid.u), len(grid.v)

    spans_u = np.array([ku.span(t) for t in grid.u])
    spans_v = np.array([kv.span(t) for t in grid.v])
    iu = spans_u[:, None] - pu + np.arange(pu + 1)[None, :]  # (nqu, pu+1)
    iv = spans_v[:, None] - pv + np.arange(pv + 1)[None, :]
    bu = np.take_along_axis(grid.Bu, iu, axis=1)
    du = np.take_along_axis(grid.Du, iu, axis=1)
    bv = np.take_along_axis(grid.Bv, iv, axis=1)
    dv = np.take_along_axis(grid.Dv, iv, axis=1)

    wblk = surface.weights[iu[:, None, :, None], iv[None, :, None, :]]
    N = np.einsum("ak,bl->abkl", bu, bv) * wblk
    Nu = np.einsum("ak,bl->abkl", du, bv) * wblk
    Nv = np.einsum("ak,bl->abkl", bu, dv) * wblk
    W = N.sum(axis=(2, 3))[..., None, None]
    Wu = Nu.sum(axis=(2, 3))[..., None, None]
    Wv = Nv.sum(axis=(2, 3))[..., None, None]
    R = N / W
    Ru = (Nu - R * Wu) / W
    Rv = (Nv - R * Wv) / W

    nq = nqu * nqv
    block = (pu + 1) * (pv + 1)
    rows = np.repeat(np.arange(nq), block)
    cols = (iu[:, None, :, None] * n_v + iv[None, :, None, :]).reshape(-1)
    shape = (nq, n_u * n_v)
    return (
        sps.csr_matrix((R.reshape(-1), (rows, cols)), shape=shape),
        sps.csr_matrix((Ru.reshape(-1), (rows, cols)), shape=shape),
        sps.csr_matrix((Rv.reshape(-1), (rows, cols)), shape=shape),
    )


def boundary_mask(shape):
    """Boolean mask (flattened, v fastest) of boundary coefficients."""
    n_u, n_v = shape
    m = np.zeros((n_u, n_v), dtype=bool)
    m[0, :] = m[-1, :] = True
    m[:, 0] = m[:, -1] = True
    return m.reshape(-1)


def assemble_stiffness(surface, coef, grid=None, quad_pts=None):
    """Symmetric stiffness sum_q w_q grad(R_i)^T C grad(R_j), sparse CSR.

    coef(det, g11, g12, g22) returns the coefficient field entries
    (c11, c12, c22) at the quadrature points.
    """
    grid = grid or make_quad_grid(surface, quad_pts)
    _, Su, Sv, det = geometry_tables(surface, grid)
    g11 = np.einsum("uvc,uvc->uv", Su, Su)
    g12 = np.einsum("uvc,uvc->uv", Su, Sv)
    g22 = np.einsum("uvc,uvc->uv", Sv, Sv)
    c11, c12, c22 = coef(det, g11, g12, g22)
    wq = np.outer(grid.wu, grid.wv).reshape(-1)
    _, Ru, Rv = rational_basis_tables(surface, grid)
    D11 = sps.diags(wq * c11.reshape(-1))
    D12 = sps.diags(wq * c12.reshape(-1))
    D22 = sps.diags(wq * c22.reshape(-1))
    K = Ru.T @ D11 @ Ru + Ru.T @ D12 @ Rv + Rv.T @ D12 @ Ru + Rv.T @ D22 @ Rv
    K = 0.5 * (K + K.T)
    return K.tocsr(), grid


def quasi_harmonic_coef(floor_eps):
    """Coefficient field of the inverse-Jacobian-weighted gradient form.

    For a healthy orientation-preserving map this is adj(G)/det^2; the
    determinant is floored to keep the matrix positive definite through
    folds.
    """

    def coef(det, g11, g12, g22):
        d = np.maximum(det, floor_eps)
        return g22 / d**2, -g12 / d**2, g11 / d**2

    return coef


def laplace_coef():
    """Pullback of the plain Laplacian: adj(G)/|det|."""

    def coef(det, g11, g12, g22):
        d = np.abs(det)
        if np.any(d < 1e-300):
            raise NumericalError("degenerate geometry at a quadrature point")
        return g22 / d, -g12 / d, g11 / d

    return coef


def assemble_load(surface, grid, f):
    """Load vector of f against the rational basis, physical measure."""
    S, _, _, det = geometry_tables(surface, grid)
    wq = np.outer(grid.wu, grid.wv).reshape(-1)
    fv = f(S[..., 0].reshape(-1), S[..., 1].reshape(-1))
    R, _, _ = rational_basis_tables(surface, grid)
    return R.T @ (wq * fv * np.abs(det.reshape(-1)))


def solve_interior(K, rhs_full, fixed_values, bmask):
    """Solve K u = rhs with fixed boundary coefficients."""
    KII = K[~bmask][:, ~bmask]
    KIB = K[~bmask][:, bmask]
    u = np.array(fixed_values, dtype=float)
    try:
        u[~bmask] = spsolve(KII.tocsc(), rhs_full[~bmask] - KIB @ u[bmask])
    except RuntimeError as exc:
        raise NumericalError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise NumericalError("singular stiffness matrix (non-finite solution)")
    return u


def boundary_coefficients_from_function(surface, g):
    """Dirichlet coefficients by Greville interpolation along each edge."""
    n_u, n_v = surface.shape
    coeffs = np.zeros((n_u, n_v))
    for side, idx in (("West", np.s_[:, 0]), ("East", np.s_[:, -1]),
                      ("South", np.s_[0, :]), ("North", np.s_[-1, :])):
        curve = surface.boundary_curve(side)
        grev = curve.knots.greville()
        B = collocation_matrix(curve.knots, grev)
        Bw = B * curve.weights[None, :]
        Bw /= Bw.sum(axis=1, keepdims=True)
        pts = curve_eval_many(curve, grev)
        coeffs[idx] = np.linalg.solve(Bw, g(pts[:, 0], pts[:, 1]))
    return coeffs


def l2_h1_errors(surface, coeffs, exact, exact_grad, grid=None, quad_pts=None):
    """L2 and H1 errors of the coefficient field against an exact solution."""
    grid = grid or make_quad_grid(surface, quad_pts)
    S, Su, Sv, det = geometry_tables(surface, grid)
    R, Ru, Rv = rational_basis_tables(surface, grid)
    u = coeffs.reshape(-1)
    uh = R @ u
    uhu = Ru @ u
    uhv = Rv @ u
    x = S[..., 0].reshape(-1)
    y = S[..., 1].reshape(-1)
    d = det.reshape(-1)
    absd = np.abs(d)
    xu = Su[..., 0].reshape(-1)
    yu = Su[..., 1].reshape(-1)
    xv = Sv[..., 0].reshape(-1)
    yv = Sv[..., 1].reshape(-1)
    gx = (yv * uhu - yu * uhv) / d
    gy = (-xv * uhu + xu * uhv) / d
    ex, ey = exact_grad(x, y)
    wq = np.outer(grid.wu, grid.wv).reshape(-1)
    err2 = wq * absd * (uh - exact(x, y)) ** 2
    grad2 = wq * absd * ((gx - ex) ** 2 + (gy - ey) ** 2)
    l2 = float(np.sqrt(err2.sum()))
    h1 = float(np.sqrt(err2.sum() + grad2.sum()))
    return l2, h1
