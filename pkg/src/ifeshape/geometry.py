"""Cubic-spline interface curves.

A curve interpolates its control points with a C2 cubic spline on uniform
knots.  Closed curves are periodic, open curves use natural end conditions.
The map from control coordinates to piecewise coefficients is linear, so the
derivative with respect to a control coordinate is simply the spline that
interpolates the corresponding unit data vector.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidArgument, SelfIntersectionError


@lru_cache(maxsize=64)
def _basis(n, closed):
    """Power-basis coefficients of the n cardinal splines.

    Returns array (4, pieces, n); entry [k, i, m] is the coefficient of
    s**(3-k) on piece i of the spline interpolating the m-th unit vector.
    """
    if closed:
        knots = np.arange(n + 1) / n
        data = np.vstack([np.eye(n), np.eye(n)[:1]])
        cs = CubicSpline(knots, data, bc_type="periodic", axis=0)
    else:
        knots = np.arange(n) / (n - 1)
        cs = CubicSpline(knots, np.eye(n), bc_type="natural", axis=0)
    c = np.array(cs.c)
    c.setflags(write=False)
    return c


def _design_indices(n, closed, design):
    if design is None:
        design = "xy"
    if isinstance(design, str):
        pts = np.arange(n) if closed else np.arange(1, n - 1)
        if design == "xy":
            return np.concatenate([pts, pts + n])
        if design == "y":
            return pts + n
        if design == "x":
            return pts.copy()
        raise InvalidArgument(f"unknown design selector {design!r}")
    idx = np.asarray(design, dtype=int)
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= 2 * n):
        raise InvalidArgument("design indices out of range")
    return idx


class SplineCurve:
    """Interpolating cubic spline Gamma(t), t in [0, 1].

    Parameters
    ----------
    control_points : (n, 2) array
    closed : bool
        Periodic spline if True, natural spline with fixed endpoints otherwise.
    design : str or sequence of int, optional
        Which coordinates form the design vector alpha.  Indices refer to the
        flattened vector (x_0..x_{n-1}, y_0..y_{n-1}).  ``"xy"`` (default)
        selects all coordinates of a closed curve, or all interior coordinates
        of an open curve; ``"y"`` selects only y-coordinates.
    """

    def __init__(self, control_points, closed=True, design=None):
        pts = np.array(control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidArgument("control points must have shape (n, 2)")
        n = len(pts)
        if n < 4:
            raise InvalidArgument("a spline curve needs at least 4 control points")
        nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
        prv = pts if closed else pts[:-1]
        if np.any(np.all(np.abs(nxt - prv) == 0.0, axis=1)):
            raise InvalidArgument("consecutive control points coincide")
        pts.setflags(write=False)
        self.points = pts
        self.closed = bool(closed)
        self.n = n
        self.pieces = n if closed else n - 1
        self.knots = np.arange(self.pieces + 1) / self.pieces
        self._design_arg = design
        self.design = _design_indices(n, self.closed, design)
        self.design.setflags(write=False)
        B = _basis(n, self.closed)
        self.cx = B @ pts[:, 0]          # (4, pieces)
        self.cy = B @ pts[:, 1]

    # ------------------------------------------------------------------ design
    @property
    def alpha(self):
        return np.concatenate([self.points[:, 0], self.points[:, 1]])[self.design]

    @property
    def n_design(self):
        return len(self.design)

    def with_alpha(self, alpha):
        """Return a new curve with the design coordinates replaced."""
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.n_design,):
            raise InvalidArgument("design vector has the wrong length")
        flat = np.concatenate([self.points[:, 0], self.points[:, 1]])
        flat[self.design] = alpha
        return SplineCurve(flat.reshape(2, -1).T, self.closed, self._design_arg)

    # -------------------------------------------------------------- evaluation
    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if self.closed:
            t = np.mod(t, 1.0)
        elif np.any((t < -1e-14) | (t > 1 + 1e-14)):
            raise InvalidArgument("parameter outside [0, 1] on an open curve")
        m = self.pieces
        i = np.clip(np.floor(t * m).astype(int), 0, m - 1)
        return i, t - i / m

    def eval(self, t):
        """Points Gamma(t), shape t.shape + (2,)."""
        i, s = self._locate(t)
        return np.stack([_horner(self.cx[:, i], s), _horner(self.cy[:, i], s)], axis=-1)

    __call__ = eval

    def tangent(self, t):
        """Derivative dGamma/dt, shape t.shape + (2,)."""
        i, s = self._locate(t)
        return np.stack([_horner_d(self.cx[:, i], s), _horner_d(self.cy[:, i], s)], axis=-1)

    def basis_values(self, t):
        """Cardinal spline values B_m(t), shape t.shape + (n,)."""
        i, s = self._locate(t)
        B = _basis(self.n, self.closed)
        c = B[:, i, :]                    # (4, ..., n)
        s = np.asarray(s)[..., None]
        return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]

    def d_alpha(self, t, j=None):
        """Derivative of Gamma(t) with respect to design variables.

        With ``j`` given returns shape t.shape + (2,); otherwise all design
        variables at once, shape t.shape + (2, n_design).
        """
        bv = self.basis_values(t)
        full = np.zeros(np.shape(t) + (2, 2 * self.n))
        full[..., 0, : self.n] = bv
        full[..., 1, self.n:] = bv
        out = full[..., self.design]
        if j is None:
            return out
        if not 0 <= j < self.n_design:
            raise InvalidArgument(f"design index {j} out of range")
        return out[..., j]

    def sample(self, m=512):
        t = np.linspace(0.0, 1.0, m, endpoint=not self.closed)
        return self.eval(t)

    # ------------------------------------------------------------ intersection
    def line_roots(self, normal, offset, piece, tol=1e-9):
        """Parameters t on one piece where normal . Gamma(t) = offset."""
        a0, a1 = normal
        c = a0 * self.cx[:, piece] + a1 * self.cy[:, piece]
        c = c.copy()
        c[3] -= offset
        h = 1.0 / self.pieces
        out = []
        for s in _real_cubic_roots(c, h):
            if -tol * h <= s <= h * (1 + tol):
                out.append(piece * h + s)
        return out

    def projection_range(self, normal, piece):
        """Exact min and max of normal . Gamma over one piece."""
        a0, a1 = normal
        c = a0 * self.cx[:, piece] + a1 * self.cy[:, piece]
        h = 1.0 / self.pieces
        cand = [0.0, h]
        d = np.array([3 * c[0], 2 * c[1], c[2]])
        for r in _real_roots_trim(d):
            if 0.0 < r < h:
                cand.append(r)
        vals = [_horner(c, s) for s in cand]
        return min(vals), max(vals)


def _horner(c, s):
    return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]


def _horner_d(c, s):
    return (3 * c[0] * s + 2 * c[1]) * s + c[2]


def _real_roots_trim(c):
    c = np.asarray(c, dtype=float)
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return []
    k = 0
    while k < len(c) - 1 and abs(c[k]) <= 1e-14 * scale:
        k += 1
    c = c[k:]
    if len(c) < 2:
        return []
    r = np.roots(c)
    return [z.real for z in r if abs(z.imag) <= 1e-7 * max(1.0, abs(z))]


def _real_cubic_roots(c, h):
    """Real roots of the cubic sum c[k] s**(3-k), polished by Newton."""
    roots = []
    # rescale s = h u so the coefficients are comparable in size
    cu = c * np.array([h ** 3, h ** 2, h, 1.0])
    for u in _real_roots_trim(cu):
        for _ in range(3):
            f = _horner(cu, u)
            df = _horner_d(cu, u)
            if df == 0.0:
                break
            du = f / df
            u -= du
            if abs(du) < 1e-16:
                break
        roots.append(u * h)
    return roots


@dataclass(frozen=True)
class IntersectionRecord:
    """One crossing of the curve with a mesh edge."""
    t_hat: float
    point: tuple
    edge: int
    segment: int
    tangent: bool = False
    curve: int = 0


def intersect_edge(curve, p0, p1, edge=-1, tol=1e-12):
    """All crossings of ``curve`` with the straight segment p0-p1."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    L = np.hypot(*d)
    normal = np.array([-d[1], d[0]]) / L
    offset = normal @ p0
    recs = []
    for piece in range(curve.pieces):
        lo, hi = curve.projection_range(normal, piece)
        if lo > offset + tol or hi < offset - tol:
            continue
        for t in curve.line_roots(normal, offset, piece):
            X = curve.eval(t)
            tau = (X - p0) @ d / L ** 2
            if -tol <= tau <= 1 + tol:
                g = curve.tangent(t)
                tang = abs(normal @ g) <= 1e-10 * np.hypot(*g)
                recs.append(IntersectionRecord(float(t), tuple(X), edge, piece, bool(tang)))
    return _dedupe(recs, curve)


def _dedupe(recs, curve):
    out = []
    for r in sorted(recs, key=lambda r: r.t_hat):
        if out and _tdist(out[-1].t_hat, r.t_hat, curve.closed) < 1e-10:
            continue
        out.append(r)
    if curve.closed and len(out) > 1 and _tdist(out[0].t_hat, out[-1].t_hat, True) < 1e-10:
        out.pop()
    return out


def _tdist(a, b, closed):
    d = abs(a - b)
    return min(d, 1 - d) if closed else d


def build_spline(control_points, closed=True, design=None):
    return SplineCurve(control_points, closed, design)


# ------------------------------------------------------------------- area
@lru_cache(maxsize=64)
def _area_form(n):
    """Antisymmetric S with signed area = X^T S Y for a closed spline."""
    B = _basis(n, True)                      # (4, pieces, n), descending powers of s
    h = 1.0 / n
    D = np.stack([3 * B[0], 2 * B[1], B[2]])  # derivative coefficients
    p = 3 - np.arange(4)[:, None] + (2 - np.arange(3))[None, :] + 1
    mom = h ** p / p                          # int_0^h s^(a+b) ds
    S = np.einsum("aik,ab,bil->kl", B, mom, D)
    return 0.5 * (S - S.T)


def signed_area(curve):
    if not curve.closed:
        raise InvalidArgument("area requires a closed curve")
    S = _area_form(curve.n)
    return float(curve.points[:, 0] @ S @ curve.points[:, 1])


def enclosed_area(curve):
    """Area enclosed by a closed, simple curve (Green's theorem, exact)."""
    check_simple(curve)
    return abs(signed_area(curve))


def enclosed_area_gradient(curve):
    """Gradient of the enclosed area with respect to the design vector."""
    check_simple(curve)
    S = _area_form(curve.n)
    X, Y = curve.points[:, 0], curve.points[:, 1]
    full = np.concatenate([S @ Y, S.T @ X])
    sign = 1.0 if signed_area(curve) >= 0 else -1.0
    return sign * full[curve.design]


# --------------------------------------------------------- self-intersection
def _segments_cross(a0, a1, b0, b1):
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
    o1 = orient(a0, a1, b0)
    o2 = orient(a0, a1, b1)
    o3 = orient(b0, b1, a0)
    o4 = orient(b0, b1, a1)
    # touching counts as crossing; the box test rules out disjoint collinear pieces
    box = ((np.minimum(a0[..., 0], a1[..., 0]) <= np.maximum(b0[..., 0], b1[..., 0]))
           & (np.minimum(b0[..., 0], b1[..., 0]) <= np.maximum(a0[..., 0], a1[..., 0]))
           & (np.minimum(a0[..., 1], a1[..., 1]) <= np.maximum(b0[..., 1], b1[..., 1]))
           & (np.minimum(b0[..., 1], b1[..., 1]) <= np.maximum(a0[..., 1], a1[..., 1])))
    return (o1 * o2 <= 0) & (o3 * o4 <= 0) & box


def is_simple(curve, per_piece=12):
    """Segment-pair scan of a dense polyline for self-crossings."""
    m = curve.pieces * per_piece
    t = np.linspace(0.0, 1.0, m + 1)
    pts = curve.eval(t)
    if curve.closed:
        pts[-1] = pts[0]
    a0, a1 = pts[:-1], pts[1:]
    nseg = len(a0)
    i, j = np.triu_indices(nseg, k=2)
    if curve.closed:
        keep = ~((i == 0) & (j == nseg - 1))
        i, j = i[keep], j[keep]
    hit = _segments_cross(a0[i], a1[i], a0[j], a1[j])
    return not np.any(hit)


def check_simple(curve):
    if not is_simple(curve):
        raise SelfIntersectionError("curve intersects itself")


def curves_disjoint(c1, c2, per_piece=12):
    p = c1.eval(np.linspace(0, 1, c1.pieces * per_piece + 1))
    q = c2.eval(np.linspace(0, 1, c2.pieces * per_piece + 1))
    i, j = np.meshgrid(np.arange(len(p) - 1), np.arange(len(q) - 1), indexing="ij")
    return not np.any(_segments_cross(p[i], p[i + 1], q[j], q[j + 1]))


def circle_points(center, radius, n, phase=0.0):
    th = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


def ellipse_points(center, ax, ay, n, phase=0.0):
    th = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + ax * np.cos(th), center[1] + ay * np.sin(th)])
