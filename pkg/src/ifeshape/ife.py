"""Linear immersed finite element shape functions.

On an interface element the line l through the two crossing points P, Q
splits T into T- and T+.  A local function is affine on each side,

    psi+ = sum_i W+_i psi_i,     psi- = psi+ + c0 L,

where psi_i are the P1 barycentric functions, L(X) = nbar . (X - P) and the
coefficients enforce the nodal values, continuity across l and the flux
condition beta+ grad psi+ . nbar = beta- grad psi- . nbar.  Solving the small
system gives, for nodal values v,

    c0 = mu (gamma . v) / (1 + mu sum_{I-} gamma_i L(A_i)),  mu = beta+/beta- - 1,
    W+ = v - c0 [i in I-] L(A_i),   W- = v + c0 [i in I+] L(A_i),

with gamma_i = grad psi_i . nbar.  Everything below is vectorized over a
leading batch axis of interface elements.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgument, UnisolvencyError


def p1_gradients(A):
    """Barycentric gradients (..., 3, 2) and signed doubled area (...)."""
    A = np.asarray(A, float)
    area2 = ((A[..., 1, 0] - A[..., 0, 0]) * (A[..., 2, 1] - A[..., 0, 1])
             - (A[..., 1, 1] - A[..., 0, 1]) * (A[..., 2, 0] - A[..., 0, 0]))
    nxt = np.roll(A, -1, axis=-2)
    nn = np.roll(A, -2, axis=-2)
    d = nn - nxt
    G = np.stack([-d[..., 1], d[..., 0]], axis=-1) / area2[..., None, None]
    return G, area2


def barycentric(A, X):
    """Barycentric coordinates of points X (..., k, 2) in triangles A (..., 3, 2)."""
    G, _ = p1_gradients(A)
    X = np.asarray(X, float)
    # lambda_i(X) = 1/3 + G_i . (X - centroid)
    cen = A.mean(axis=-2)
    return 1.0 / 3.0 + np.einsum("...id,...kd->...ki", G, X - cen[..., None, :])


class IfeBatch:
    """Shape-function data for a batch of interface elements.

    Parameters
    ----------
    A : (n, 3, 2) vertices, ordered A1, A2, A3 counterclockwise with P on
        A1A2 and Q on A1A3.
    P, Q : (n, 2)
    minus : (n, 3) bool, membership of each vertex in I-.
    beta_minus, beta_plus : (n,) or scalars.
    """

    def __init__(self, A, P, Q, minus, beta_minus, beta_plus):
        A = np.asarray(A, float)
        P = np.asarray(P, float)
        Q = np.asarray(Q, float)
        n = len(A)
        self.A, self.P, self.Q = A, P, Q
        self.minus = np.asarray(minus, bool)
        self.bm = np.broadcast_to(np.asarray(beta_minus, float), (n,)).copy()
        self.bp = np.broadcast_to(np.asarray(beta_plus, float), (n,)).copy()
        if np.any(self.bm <= 0) or np.any(self.bp <= 0):
            raise InvalidArgument("conductivities must be positive")
        self.G, area2 = p1_gradients(A)
        self.area = 0.5 * area2
        dPQ = P - Q
        dist = np.hypot(dPQ[:, 0], dPQ[:, 1])
        if np.any(dist < 1e-12):
            raise DegenerateGeometryError("interface points P and Q coincide")
        self.dist = dist
        self.tbar = dPQ / dist[:, None]
        nbar = np.column_stack([dPQ[:, 1], -dPQ[:, 0]]) / dist[:, None]
        L = np.einsum("nd,nid->ni", nbar, A - P[:, None, :])
        # orient nbar so that L < 0 on I-
        flip = np.where(self.minus[:, 0], L[:, 0] > 0, L[:, 0] < 0)
        sgn = np.where(flip, -1.0, 1.0)
        self.nbar = nbar * sgn[:, None]
        self.LA = L * sgn[:, None]
        self.mu = self.bp / self.bm - 1.0
        self.gamma = np.einsum("nid,nd->ni", self.G, self.nbar)
        m = self.minus.astype(float)
        self.D = 1.0 + self.mu * np.sum(m * self.gamma * self.LA, axis=1)
        if np.any(np.abs(self.D) <= 1e-12):
            raise UnisolvencyError("IFE coefficient system is singular")
        self.c0 = self.mu[:, None] * self.gamma / self.D[:, None]       # (n, 3) per basis p
        eye = np.eye(3)[None]
        self.Wp = eye - self.c0[:, :, None] * (m * self.LA)[:, None, :]
        self.Wm = eye + self.c0[:, :, None] * ((1 - m) * self.LA)[:, None, :]

        # sub-triangles T1 = A1 P Q, T2 = A2 Q P, T3 = A3 Q A2 as base + J (xi, eta)
        A1, A2, A3 = A[:, 0], A[:, 1], A[:, 2]
        self.sub_base = np.stack([A1, A2, A3], axis=1)
        c1 = np.stack([P - A1, Q - A2, Q - A3], axis=1)
        c2 = np.stack([Q - A1, P - A2, A2 - A3], axis=1)
        self.sub_J = np.stack([c1, c2], axis=-1)                        # (n, 3, 2, 2) columns
        self.sub_det = c1[..., 0] * c2[..., 1] - c1[..., 1] * c2[..., 0]
        a1m = self.minus[:, 0]
        self.sub_minus = np.stack([a1m, ~a1m, ~a1m], axis=1)

    def __len__(self):
        return len(self.A)

    def W(self, minus_side):
        """Coefficient matrices for the requested side, shape (n, ..., 3, 3)."""
        minus_side = np.asarray(minus_side, bool)
        shape = minus_side.shape
        ms = minus_side.reshape(len(self), -1)
        out = np.where(ms[:, :, None, None], self.Wm[:, None], self.Wp[:, None])
        return out.reshape(shape + (3, 3))

    def beta(self, minus_side):
        minus_side = np.asarray(minus_side, bool)
        bm = self.bm.reshape((-1,) + (1,) * (minus_side.ndim - 1))
        bp = self.bp.reshape((-1,) + (1,) * (minus_side.ndim - 1))
        return np.where(minus_side, bm, bp)

    def side_of(self, X):
        """True where points X (n, k, 2) fall on the minus side of l."""
        Lx = np.einsum("nd,nkd->nk", self.nbar, X - self.P[:, None, :])
        return Lx < 0


# -------------------------------------------------------- single element API
@dataclass
class InterfaceElementGeom:
    """Cut data of one interface element (vertices already permuted)."""
    element: int
    vertices: np.ndarray   # (3, 2) A1, A2, A3
    perm: np.ndarray       # original local index of A1, A2, A3
    P: np.ndarray
    Q: np.ndarray
    nbar: np.ndarray
    L_at_vertices: np.ndarray
    Iminus: list
    Iplus: list
    sub_triangles: np.ndarray   # (3, 3, 2)
    jacobians: np.ndarray       # (3, 2, 2)

    def L(self, X):
        return (np.asarray(X) - self.P) @ self.nbar

    @property
    def minus(self):
        return np.array([i + 1 in self.Iminus for i in range(3)])

    def sub_areas(self):
        return 0.5 * np.abs(np.linalg.det(self.jacobians))

    def batch(self, beta_minus, beta_plus):
        return IfeBatch(self.vertices[None], self.P[None], self.Q[None], self.minus[None],
                        beta_minus, beta_plus)


def _on_segment(X, a, b, tol=1e-9):
    d = b - a
    L2 = d @ d
    tau = (X - a) @ d / L2
    off = abs(d[0] * (X[1] - a[1]) - d[1] * (X[0] - a[0])) / np.sqrt(L2)
    return -tol <= tau <= 1 + tol and off <= tol * np.sqrt(L2)


def build_geom(vertices, P, Q, a1_minus=True, element=-1):
    """Build the cut geometry of one element.

    ``vertices`` are three counterclockwise points; P and Q must lie on two
    distinct edges.  The vertex shared by those edges becomes A1 and is put in
    I- when ``a1_minus`` (the other two form I+), otherwise the reverse.
    """
    V = np.asarray(vertices, float)
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    if np.hypot(*(P - Q)) < 1e-12:
        raise DegenerateGeometryError("P and Q coincide")
    eP = [k for k in range(3) if _on_segment(P, V[k], V[(k + 1) % 3])]
    eQ = [k for k in range(3) if _on_segment(Q, V[k], V[(k + 1) % 3])]
    if len(eP) != 1 or len(eQ) != 1:
        raise DegenerateGeometryError("intersection points must lie inside distinct edges")
    if eP[0] == eQ[0]:
        raise DegenerateGeometryError("both intersection points lie on the same edge")
    cut = {eP[0], eQ[0]}
    a1 = {frozenset((0, 2)): 0, frozenset((0, 1)): 1, frozenset((1, 2)): 2}[frozenset(cut)]
    perm = (a1 + np.arange(3)) % 3
    A = V[perm]
    # P must be on A1A2 (local edge a1), Q on A1A3
    if eP[0] != a1:
        P, Q = Q, P
    minus = np.array([a1_minus, not a1_minus, not a1_minus])
    b = IfeBatch(A[None], P[None], Q[None], minus[None], 1.0, 1.0)
    subs = np.array([[A[0], P, Q], [A[1], Q, P], [A[2], Q, A[1]]])
    return InterfaceElementGeom(element, A, perm, P, Q, b.nbar[0], b.LA[0],
                                [i + 1 for i in range(3) if minus[i]],
                                [i + 1 for i in range(3) if not minus[i]],
                                subs, b.sub_J[0])


@dataclass
class IfeShape:
    """One local IFE function: P1 coefficients of its two affine pieces."""
    geom: InterfaceElementGeom
    w_plus: np.ndarray
    w_minus: np.ndarray
    c0: float

    def _piece(self, X):
        return self.geom.L(X) < 0

    def value(self, X, side=None):
        X = np.asarray(X, float)
        lam = barycentric(self.geom.vertices, X.reshape(-1, 2))
        minus = self._piece(X.reshape(-1, 2)) if side is None else np.full(len(lam), side == "-")
        v = np.where(minus, lam @ self.w_minus, lam @ self.w_plus)
        return v.reshape(X.shape[:-1])

    def gradient(self, X=None, side="+"):
        G, _ = p1_gradients(self.geom.vertices)
        if X is not None:
            side = "-" if self._piece(np.asarray(X, float).reshape(1, 2))[0] else "+"
        return (self.w_minus if side == "-" else self.w_plus) @ G


def build_ife_shape(geom, beta_minus, beta_plus, v):
    """IFE function with nodal values v at (A1, A2, A3)."""
    v = np.asarray(v, float)
    b = geom.batch(beta_minus, beta_plus)
    return IfeShape(geom, v @ b.Wp[0], v @ b.Wm[0], float(v @ b.c0[0]))


@dataclass
class IfeCoefficients:
    c: np.ndarray
    c0: float
    mu: float
    gamma: np.ndarray
    delta: np.ndarray
    b: np.ndarray


def ife_coefficients(geom, beta_minus, beta_plus, v):
    """Coefficients in the Sherman-Morrison form c = b - mu (g.b) d / (1 + mu g.d)."""
    v = np.asarray(v, float)
    G, _ = p1_gradients(geom.vertices)
    Im = np.array(geom.Iminus) - 1
    Ip = np.array(geom.Iplus) - 1
    mu = beta_plus / beta_minus - 1.0
    gall = G @ geom.nbar
    gamma = gall[Im]
    delta = geom.L_at_vertices[Im]
    b = v[Im] - mu * delta * (gall[Ip] @ v[Ip])
    den = 1.0 + mu * gamma @ delta
    if abs(den) <= 1e-12:
        raise UnisolvencyError("singular IFE coefficient system")
    c = b - mu * (gamma @ b) * delta / den
    c0 = mu * (gamma @ c + gall[Ip] @ v[Ip])
    return IfeCoefficients(c, c0, mu, gamma, delta, b)


class LocalBasis:
    """Local basis of one element, standard P1 or IFE."""

    def __init__(self, vertices, geom=None, beta_minus=1.0, beta_plus=1.0):
        self.vertices = np.asarray(vertices, float) if geom is None else geom.vertices
        self.geom = geom
        self.G, _ = p1_gradients(self.vertices)
        if geom is not None:
            b = geom.batch(beta_minus, beta_plus)
            self.Wp, self.Wm = b.Wp[0], b.Wm[0]
        else:
            self.Wp = self.Wm = np.eye(3)

    def _check(self, X):
        lam = barycentric(self.vertices, np.asarray(X, float).reshape(1, 2))[0]
        if np.any(lam < -1e-10):
            raise InvalidArgument("point outside element")
        return lam

    def _W(self, X):
        if self.geom is None:
            return self.Wp
        return self.Wm if self.geom.L(X) < 0 else self.Wp

    def shape_value(self, i, X):
        lam = self._check(X)
        return float(self._W(X)[i] @ lam)

    def shape_gradient(self, i, X):
        self._check(X)
        return self._W(X)[i] @ self.G
