"""Symmetric partially penalized IFE discretization.

Bilinear form

    a(u, v) = sum_T int_T beta grad u . grad v
              - sum_e int_e {beta grad u} . [v] - sum_e int_e {beta grad v} . [u]
              + sum_e sigma0 / |e| int_e [u] . [v],

with the edge sums over interface edges (interior ones and those on the
Dirichlet boundary).  Jumps are vectors, [v] = v|T1 n1 + v|T2 n2, and on a
boundary edge [v] = v n, {beta grad v} = beta grad v.

Every local contribution is stored as a term with global row/column indices,
its value and, optionally, its derivative with respect to the speeds of the
intersection points it depends on.  The same term lists give the global
matrices, their directional derivatives and the adjoint contractions.
"""
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, InvalidArgument
from .ife import IfeBatch, barycentric, p1_gradients
from .mesh import classify
from .quadrature import LINE_S, LINE_W, TRI_BARY, TRI_REF, TRI_WEIGHTS
from .sensitivity import ife_derivatives

TRI_W = 0.5 * TRI_WEIGHTS          # weights on the reference triangle (area 1/2)


# ------------------------------------------------------------------- specs
@dataclass(frozen=True)
class Materials:
    """Conductivity outside all curves and inside (below) each curve."""
    beta_out: float
    beta_in: tuple

    def __post_init__(self):
        object.__setattr__(self, "beta_in", tuple(float(b) for b in np.atleast_1d(self.beta_in)))
        if self.beta_out <= 0 or min(self.beta_in) <= 0:
            raise InvalidArgument("conductivities must be positive")

    def region_beta(self):
        return np.array((self.beta_out,) + self.beta_in)

    @property
    def beta_max(self):
        return max((self.beta_out,) + self.beta_in)


@dataclass
class BoundaryCondition:
    """Dirichlet data on the listed sides, conormal flux data elsewhere.

    ``g_N(X, n)`` is the flux beta grad u . n; ``grad_g_N(X, n)`` its spatial
    gradient at fixed n.  With no Dirichlet side a normalization value
    ``u0 = int u`` is required.
    """
    dirichlet_sides: tuple = (1, 2, 3, 4)
    g_D: Optional[Callable] = None
    grad_g_D: Optional[Callable] = None
    g_N: Optional[Callable] = None
    grad_g_N: Optional[Callable] = None
    u0: Optional[float] = None

    @property
    def pure_neumann(self):
        return len(self.dirichlet_sides) == 0


@dataclass
class ForwardProblemSpec:
    """Source and boundary data of one forward problem."""
    f: Optional[Callable] = None
    grad_f: Optional[Callable] = None
    bc: BoundaryCondition = field(default_factory=BoundaryCondition)
    penalty_factor: float = 10.0
    epsilon: float = -1.0


def _zero(X):
    return np.zeros(np.shape(X)[:-1])


def _zero_grad(X):
    return np.zeros(np.shape(X))


# ------------------------------------------------------------------- terms
@dataclass
class MatTerm:
    rows: np.ndarray               # (n, a)
    cols: np.ndarray               # (n, b)
    vals: np.ndarray               # (n, a, b)
    dvals: Optional[np.ndarray] = None   # (n, S, a, b)
    slots: Optional[np.ndarray] = None   # (n, S) intersection ids


@dataclass
class VecTerm:
    rows: np.ndarray
    vals: np.ndarray
    dvals: Optional[np.ndarray] = None
    slots: Optional[np.ndarray] = None


def terms_to_matrix(terms, n, which="vals", speed=None):
    r, c, v = [], [], []
    for t in terms:
        if which == "vals":
            vals = t.vals
        else:
            if t.dvals is None:
                continue
            vals = np.einsum("nsab,ns->nab", t.dvals, speed[t.slots])
        a, b = t.rows.shape[1], t.cols.shape[1]
        r.append(np.repeat(t.rows, b, axis=1).ravel())
        c.append(np.tile(t.cols, (1, a)).ravel())
        v.append(vals.ravel())
    if not r:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(n, n))


def terms_to_vector(terms, n, which="vals", speed=None):
    out = np.zeros(n)
    for t in terms:
        if which == "vals":
            vals = t.vals
        else:
            if t.dvals is None:
                continue
            vals = np.einsum("nsa,ns->na", t.dvals, speed[t.slots])
        np.add.at(out, t.rows.ravel(), vals.ravel())
    return out


def accumulate_mat(terms, left, right, n_int):
    """Per-intersection sum of left^T (dA/dspeed) right."""
    out = np.zeros(n_int)
    for t in terms:
        if t.dvals is None:
            continue
        contrib = np.einsum("na,nsab,nb->ns", left[t.rows], t.dvals, right[t.cols])
        np.add.at(out, t.slots.ravel(), contrib.ravel())
    return out


def accumulate_vec(terms, left, n_int):
    out = np.zeros(n_int)
    for t in terms:
        if t.dvals is None:
            continue
        contrib = np.einsum("na,nsa->ns", left[t.rows], t.dvals)
        np.add.at(out, t.slots.ravel(), contrib.ravel())
    return out


# ---------------------------------------------------------- discretization
class Cells:
    """Quadrature cells: non-interface elements plus the three sub-triangles
    of every interface element, each with one affine piece of the basis."""

    def __init__(self, disc):
        mesh, top, batch = disc.mesh, disc.topology, disc.batch
        rb = disc.materials.region_beta()
        nq = len(TRI_W)
        ne = np.flatnonzero(top.elem_ie < 0)
        A = mesh.nodes[mesh.elements[ne]]
        G0, area2 = p1_gradients(A)
        X0 = (A[:, None, 0] + TRI_REF[None, :, 0, None] * (A[:, None, 1] - A[:, None, 0])
              + TRI_REF[None, :, 1, None] * (A[:, None, 2] - A[:, None, 0]))
        nie = len(batch)
        k = np.repeat(np.arange(nie), 3)
        m = np.tile(np.arange(3), nie)
        J = batch.sub_J[k, m]
        X1 = batch.sub_base[k, m][:, None, :] + np.einsum("ndc,qc->nqd", J, TRI_REF)
        det = batch.sub_det[k, m]
        minus = batch.sub_minus[k, m]

        self.n_plain = len(ne)
        self.elem = np.concatenate([ne, top.ie_elem[k]])
        self.nodes = np.concatenate([mesh.elements[ne], top.ie_nodes[k]])
        self.G = np.concatenate([G0, batch.G[k]])
        self.W = np.concatenate([np.broadcast_to(np.eye(3), (len(ne), 3, 3)),
                                 np.where(minus[:, None, None], batch.Wm[k], batch.Wp[k])])
        self.beta = np.concatenate([rb[top.elem_region[ne]], np.where(minus, batch.bm[k], batch.bp[k])])
        self.X = np.concatenate([X0, X1])
        self.w = np.concatenate([area2[:, None] * TRI_W, det[:, None] * TRI_W])
        self.lam = np.concatenate([np.broadcast_to(TRI_BARY, (len(ne), nq, 3)),
                                   barycentric(batch.A[k], X1)])
        self.psi = np.einsum("cpi,cqi->cqp", self.W, self.lam)          # (Nc, nq, 3)
        self.grad = np.einsum("cpi,cid->cpd", self.W, self.G)           # (Nc, 3, 2)
        self.ie = k                                                      # parent interface index
        self.sub = m
        self.minus = minus
        if disc.dife is not None:
            d = disc.dife
            self.slots = np.stack([top.ie_P[k], top.ie_Q[k]], axis=1)
            dJ = d.dJ[k, :, m]                                           # (n, 2, 2, 2)
            self.dX = np.einsum("nsdc,qc->nsqd", dJ, TRI_REF)
            self.dw = d.ddet[k, :, m][:, :, None] * TRI_W
            self.dW = np.where(minus[:, None, None, None], d.dWm[k], d.dWp[k])
            W1, G1, lam1 = self.W[self.n_plain:], self.G[self.n_plain:], self.lam[self.n_plain:]
            # material derivative of shape values at moving quadrature points
            self.dpsi = (np.einsum("nspi,nqi->nsqp", self.dW, lam1)
                         + np.einsum("npi,nid,nsqd->nsqp", W1, G1, self.dX))
            self.dgrad = np.einsum("nspi,nid->nspd", self.dW, G1)

    @property
    def n(self):
        return len(self.elem)


class EdgeSegments:
    """Two sub-segments of every cut edge, with traces from adjacent elements."""

    def __init__(self, disc):
        mesh, top, batch = disc.mesh, disc.topology, disc.batch
        edges = top.interface_edges
        ne = len(edges)
        ii = top.edge_cross[edges]
        a = mesh.nodes[mesh.edges[edges, 0]]
        b = mesh.nodes[mesh.edges[edges, 1]]
        Xe = top.points[ii]
        t = mesh.edge_tangent[edges]
        s = LINE_S
        # segment 0: a -> Xe ; segment 1: Xe -> b
        self.edge = np.repeat(edges, 2)
        self.cross = np.repeat(ii, 2)
        self.seg = np.tile([0, 1], ne)
        start = np.stack([a, Xe], axis=1).reshape(-1, 2)
        end = np.stack([Xe, b], axis=1).reshape(-1, 2)
        vec = end - start
        ell = np.hypot(vec[:, 0], vec[:, 1])
        self.X = start[:, None, :] + s[None, :, None] * vec[:, None, :]
        self.w = ell[:, None] * LINE_W
        tt = np.repeat(t, 2, axis=0)
        sign = np.where(self.seg == 0, 1.0, -1.0)
        frac = np.where(self.seg[:, None] == 0, s[None, :], 1 - s[None, :])
        self.dX = frac[:, :, None] * tt[:, None, :]                      # per unit crossing speed
        self.dw = sign[:, None] * LINE_W[None, :]
        endpoint = np.where(self.seg == 0, mesh.edges[self.edge, 0], mesh.edges[self.edge, 1])
        curve = top.curve_of[self.cross]
        self.minus = top.node_region[endpoint] == curve + 1
        self.boundary = mesh.edge_boundary[self.edge]
        self.length = mesh.edge_length[self.edge]

        self.sides = []
        for r in range(2):
            el = mesh.edge_elems[self.edge, r]
            has = el >= 0
            trace = {"has": has}
            elc = np.where(has, el, mesh.edge_elems[self.edge, 0])
            k = top.elem_ie[elc]
            if np.any(k[has] < 0):
                raise ContractViolation("cut edge next to a non-interface element")
            trace["k"] = k
            trace["nodes"] = top.ie_nodes[k]
            trace["W"] = np.where(self.minus[:, None, None], batch.Wm[k], batch.Wp[k])
            trace["G"] = batch.G[k]
            trace["lam"] = barycentric(batch.A[k], self.X)
            trace["psi"] = np.einsum("npi,nqi->nqp", trace["W"], trace["lam"])
            trace["grad"] = np.einsum("npi,nid->npd", trace["W"], trace["G"])
            trace["normal"] = mesh.edge_outward_normal(self.edge, elc)
            trace["beta"] = np.where(self.minus, batch.bm[k], batch.bp[k])
            if disc.dife is not None:
                d = disc.dife
                trace["slots"] = np.stack([top.ie_P[k], top.ie_Q[k]], axis=1)
                dW = np.where(self.minus[:, None, None, None], d.dWm[k], d.dWp[k])
                trace["dpsi_el"] = np.einsum("nspi,nqi->nsqp", dW, trace["lam"])
                trace["dgrad_el"] = np.einsum("nspi,nid->nspd", dW, trace["G"])
                trace["dpsi_x"] = np.einsum("npi,nid,nqd->nqp", trace["W"], trace["G"], self.dX)
            self.sides.append(trace)

    @property
    def n(self):
        return len(self.edge)


_STAMPS = itertools.count(1)


class Discretization:
    """Mesh, curves and materials resolved into IFE quadrature data.

    Parameters
    ----------
    mesh : Mesh
    curves : SplineCurve or list of SplineCurve
    materials : Materials
    derivatives : bool
        Also build the shape-derivative kernels needed for gradients.
    """

    def __init__(self, mesh, curves, materials, derivatives=True):
        if not isinstance(curves, (list, tuple)):
            curves = [curves]
        if len(materials.beta_in) != len(curves):
            raise InvalidArgument("one inside conductivity per curve is required")
        self.mesh = mesh
        self.curves = list(curves)
        self.materials = materials
        self.topology = top = classify(mesh, curves)
        rb = materials.region_beta()
        cid = top.ie_curve
        self.batch = IfeBatch(mesh.nodes[top.ie_nodes], top.points[top.ie_P], top.points[top.ie_Q],
                              top.ie_minus, rb[cid + 1], np.full(len(cid), materials.beta_out))
        self.dife = None
        if derivatives:
            tP = mesh.edge_tangent[top.edge_of[top.ie_P]]
            tQ = mesh.edge_tangent[top.edge_of[top.ie_Q]]
            self.dife = ife_derivatives(self.batch, tP, tQ)
        self.cells = Cells(self)
        self.segs = EdgeSegments(self)
        self.sigma0 = None
        self.stamp = next(_STAMPS)

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    @property
    def n_intersections(self):
        return self.topology.n_intersections

    def beta_at_nodes(self):
        return self.materials.region_beta()[self.topology.node_region]


# --------------------------------------------------------------- assembly
@dataclass
class AssembledSystem:
    """Global system of one forward problem.

    For mixed conditions ``A`` is the stiffness restricted to free nodes and
    ``F`` the load with the Dirichlet lift removed.  For pure Neumann the
    last row/column carry the normalization int u = u0.
    """
    kind: str
    A: sp.csr_matrix
    F: np.ndarray
    A_full: sp.csr_matrix
    F_full: np.ndarray
    free: np.ndarray
    dirichlet: np.ndarray
    g: np.ndarray                   # full-length vector, Dirichlet values
    mat_terms: list
    vec_terms: list
    r_terms: list
    R: Optional[np.ndarray] = None
    u0: Optional[float] = None
    stamp: int = 0

    @property
    def n_nodes(self):
        return len(self.g)

    def expand(self, x):
        """Full nodal vector (and multiplier) from a reduced solution."""
        u = self.g.copy()
        u[self.free] = x[: len(self.free)]
        lam = x[len(self.free)] if self.kind == "neumann" else None
        return u, lam

    def reduce(self, v):
        """Restrict a full-length vector to the rows of the reduced system."""
        out = v[self.free]
        if self.kind == "neumann":
            out = np.append(out, 0.0)
        return out


def dirichlet_nodes(mesh, sides):
    e = mesh.boundary_edges(sides)
    return np.unique(mesh.edges[e].ravel())


def volume_terms(disc, f=None, grad_f=None, with_derivatives=False, with_source=True):
    """Stiffness and load contributions of all cells."""
    c = disc.cells
    K = c.beta[:, None, None] * np.einsum("cpd,cqd->cpq", c.grad, c.grad) * c.w.sum(axis=1)[:, None, None]
    mats = [MatTerm(c.nodes, c.nodes, K)]
    vecs = []
    fx = f(c.X) if (with_source and f is not None) else None
    if fx is not None:
        vecs.append(VecTerm(c.nodes, np.einsum("cq,cq,cqp->cp", c.w, fx, c.psi)))
    if with_derivatives and disc.dife is not None and c.n > c.n_plain:
        o = c.n_plain
        g, w, beta = c.grad[o:], c.w[o:], c.beta[o:]
        dK = (beta[:, None, None, None] * np.einsum("spd,sqd->spq", g, g)[:, None]
              * c.dw.sum(axis=2)[:, :, None, None]
              + beta[:, None, None, None] * w.sum(axis=1)[:, None, None, None]
              * (np.einsum("nspd,nqd->nspq", c.dgrad, g) + np.einsum("npd,nsqd->nspq", g, c.dgrad)))
        mats.append(MatTerm(c.nodes[o:], c.nodes[o:], np.zeros_like(K[o:]), dK, c.slots))
        if fx is not None:
            gf = grad_f(c.X[o:]) if grad_f is not None else np.zeros(c.X[o:].shape)
            dfx = np.einsum("nqd,nsqd->nsq", gf, c.dX)
            dF = (np.einsum("nsq,nq,nqp->nsp", c.dw, fx[o:], c.psi[o:])
                  + np.einsum("nq,nsq,nqp->nsp", w, dfx, c.psi[o:])
                  + np.einsum("nq,nq,nsqp->nsp", w, fx[o:], c.dpsi))
            vecs.append(VecTerm(c.nodes[o:], np.zeros((len(w), 3)), dF, c.slots))
    return mats, vecs


def normalization_terms(disc, with_derivatives=False):
    """Vector R with R_i = int phi_i."""
    c = disc.cells
    terms = [VecTerm(c.nodes, np.einsum("cq,cqp->cp", c.w, c.psi))]
    if with_derivatives and disc.dife is not None and c.n > c.n_plain:
        o = c.n_plain
        dR = (np.einsum("nsq,nqp->nsp", c.dw, c.psi[o:])
              + np.einsum("nq,nsqp->nsp", c.w[o:], c.dpsi))
        terms.append(VecTerm(c.nodes[o:], np.zeros((c.n - o, 3)), dR, c.slots))
    return terms


def _edge_pair(segs, sel, r1, r2, sigma_over_len, with_derivatives, interior_scale):
    """Consistency and penalty blocks for one ordered pair of element traces.

    Returns (MatTerm list) contributing
      -scale * E^{r1 r2} (with its transpose) + G^{r1 r2}.
    """
    t1, t2 = segs.sides[r1], segs.sides[r2]
    w = segs.w[sel]
    beta = t1["beta"][sel]
    n1, n2 = t1["normal"][sel], t2["normal"][sel]
    g1 = t1["grad"][sel]
    psi1, psi2 = t1["psi"][sel], t2["psi"][sel]
    gn = np.einsum("npd,nd->np", g1, n2)                                 # (n, 3)
    E = np.einsum("nq,n,np,nqr->npr", w, beta, gn, psi2)                # (n, p, q)
    nn = np.sum(n1 * n2, axis=1)
    Gm = sigma_over_len[sel, None, None] * nn[:, None, None] * np.einsum("nq,nqp,nqr->npr", w, psi1, psi2)
    rows1, rows2 = t1["nodes"][sel], t2["nodes"][sel]
    s = interior_scale
    # A[row=test, col=trial]: trial from r1 (index p), test from r2 (index q)
    val = -s * np.transpose(E, (0, 2, 1)) + np.transpose(Gm, (0, 2, 1))
    terms = [MatTerm(rows2, rows1, val), MatTerm(rows1, rows2, -s * E)]
    if with_derivatives and "slots" in t1:
        dw = segs.dw[sel]
        # slot 0: crossing; 1-2: element r1; 3-4: element r2
        dE = np.zeros((len(w), 5, 3, 3))
        dG = np.zeros((len(w), 5, 3, 3))
        dpsi2x, dpsi1x = t2["dpsi_x"][sel], t1["dpsi_x"][sel]
        dE[:, 0] = (np.einsum("nq,n,np,nqr->npr", dw, beta, gn, psi2)
                    + np.einsum("nq,n,np,nqr->npr", w, beta, gn, dpsi2x))
        dgn1 = np.einsum("nspd,nd->nsp", t1["dgrad_el"][sel], n2)
        dE[:, 1:3] = np.einsum("nq,n,nsp,nqr->nspr", w, beta, dgn1, psi2)
        dE[:, 3:5] = np.einsum("nq,n,np,nsqr->nspr", w, beta, gn, t2["dpsi_el"][sel])
        so = (sigma_over_len[sel] * nn)[:, None, None]
        dG[:, 0] = so * (np.einsum("nq,nqp,nqr->npr", dw, psi1, psi2)
                         + np.einsum("nq,nqp,nqr->npr", w, dpsi1x, psi2)
                         + np.einsum("nq,nqp,nqr->npr", w, psi1, dpsi2x))
        dG[:, 1:3] = so[:, None] * np.einsum("nq,nsqp,nqr->nspr", w, t1["dpsi_el"][sel], psi2)
        dG[:, 3:5] = so[:, None] * np.einsum("nq,nqp,nsqr->nspr", w, psi1, t2["dpsi_el"][sel])
        slots = np.column_stack([segs.cross[sel], t1["slots"][sel], t2["slots"][sel]])
        dval = -s * np.transpose(dE, (0, 1, 3, 2)) + np.transpose(dG, (0, 1, 3, 2))
        terms.append(MatTerm(rows2, rows1, np.zeros_like(val), dval, slots))
        terms.append(MatTerm(rows1, rows2, np.zeros_like(E), -s * dE, slots))
    return terms


def edge_terms(disc, spec, with_derivatives=False):
    """Interface-edge consistency/penalty terms and boundary loads on cut edges."""
    segs = disc.segs
    bc = spec.bc
    sigma0 = spec.penalty_factor * disc.materials.beta_max
    sol = sigma0 / segs.length
    mats, vecs = [], []
    interior = segs.boundary == 0
    dirb = np.isin(segs.boundary, bc.dirichlet_sides)
    neub = (segs.boundary > 0) & ~dirb
    if np.any(interior):
        for r1 in range(2):
            for r2 in range(2):
                mats += _edge_pair(segs, interior, r1, r2, sol, with_derivatives, 0.5)
    if np.any(dirb):
        # only the self pair contributes; scale 1 for the consistency terms
        mats += _edge_pair(segs, dirb, 0, 0, sol, with_derivatives, 1.0)
        vecs += _dirichlet_edge_loads(disc, spec, dirb, sol, with_derivatives)
    if np.any(neub):
        vecs += _neumann_cut_loads(disc, spec, neub, with_derivatives)
    return mats, vecs


def _dirichlet_edge_loads(disc, spec, sel, sol, with_derivatives):
    segs, bc = disc.segs, spec.bc
    t = segs.sides[0]
    X, w = segs.X[sel], segs.w[sel]
    g = bc.g_D(X)
    n = t["normal"][sel]
    gn = np.einsum("npd,nd->np", t["grad"][sel], n)
    beta = t["beta"][sel]
    eps = spec.epsilon
    so = sol[sel]
    psi = t["psi"][sel]
    B = np.einsum("nq,nq,n,np->np", w, g, beta, gn)
    C = so[:, None] * np.einsum("nq,nq,nqp->np", w, g, psi)
    terms = [VecTerm(t["nodes"][sel], eps * B + C)]
    if with_derivatives and "slots" in t:
        dg = np.einsum("nqd,nqd->nq", bc.grad_g_D(X), segs.dX[sel])
        dw = segs.dw[sel]
        dB = np.zeros((len(w), 3, 3))
        dC = np.zeros((len(w), 3, 3))
        dB[:, 0] = np.einsum("nq,nq,n,np->np", dw, g, beta, gn) + np.einsum("nq,nq,n,np->np", w, dg, beta, gn)
        dgn = np.einsum("nspd,nd->nsp", t["dgrad_el"][sel], n)
        dB[:, 1:] = np.einsum("nq,nq,n,nsp->nsp", w, g, beta, dgn)
        dC[:, 0] = so[:, None] * (np.einsum("nq,nq,nqp->np", dw, g, psi)
                                  + np.einsum("nq,nq,nqp->np", w, dg, psi)
                                  + np.einsum("nq,nq,nqp->np", w, g, t["dpsi_x"][sel]))
        dC[:, 1:] = so[:, None, None] * np.einsum("nq,nq,nsqp->nsp", w, g, t["dpsi_el"][sel])
        slots = np.column_stack([segs.cross[sel], t["slots"][sel]])
        terms.append(VecTerm(t["nodes"][sel], np.zeros_like(B), eps * dB + dC, slots))
    return terms


def _neumann_cut_loads(disc, spec, sel, with_derivatives):
    segs, bc = disc.segs, spec.bc
    t = segs.sides[0]
    X, w = segs.X[sel], segs.w[sel]
    n = t["normal"][sel]
    if bc.g_N is None:
        return []
    nq = np.broadcast_to(n[:, None, :], X.shape)
    g = bc.g_N(X, nq)
    psi = t["psi"][sel]
    terms = [VecTerm(t["nodes"][sel], np.einsum("nq,nq,nqp->np", w, g, psi))]
    if with_derivatives and "slots" in t:
        gg = bc.grad_g_N(X, nq) if bc.grad_g_N is not None else np.zeros(X.shape)
        dg = np.einsum("nqd,nqd->nq", gg, segs.dX[sel])
        dN = np.zeros((len(w), 3, 3))
        dN[:, 0] = (np.einsum("nq,nq,nqp->np", segs.dw[sel], g, psi)
                    + np.einsum("nq,nq,nqp->np", w, dg, psi)
                    + np.einsum("nq,nq,nqp->np", w, g, t["dpsi_x"][sel]))
        dN[:, 1:] = np.einsum("nq,nq,nsqp->nsp", w, g, t["dpsi_el"][sel])
        slots = np.column_stack([segs.cross[sel], t["slots"][sel]])
        terms.append(VecTerm(t["nodes"][sel], np.zeros((len(w), 3)), dN, slots))
    return terms


def neumann_plain_loads(disc, spec):
    """Flux loads on uncut Neumann boundary edges (standard P1 traces)."""
    bc = spec.bc
    mesh, top = disc.mesh, disc.topology
    if bc.g_N is None:
        return []
    sides = [s for s in (1, 2, 3, 4) if s not in bc.dirichlet_sides]
    e = mesh.boundary_edges(sides)
    e = e[top.edge_cross[e] < 0]
    if len(e) == 0:
        return []
    a = mesh.nodes[mesh.edges[e, 0]]
    b = mesh.nodes[mesh.edges[e, 1]]
    X = a[:, None] + LINE_S[None, :, None] * (b - a)[:, None]
    n = mesh.edge_outward_normal(e, mesh.edge_elems[e, 0])
    g = bc.g_N(X, np.broadcast_to(n[:, None], X.shape))
    w = mesh.edge_length[e][:, None] * LINE_W
    phi = np.stack([1 - LINE_S, LINE_S], axis=1)                       # (q, 2)
    return [VecTerm(mesh.edges[e], np.einsum("nq,nq,qp->np", w, g, phi))]


def assemble(disc, spec, with_derivatives=False):
    """Assemble the global system of one forward problem."""
    mesh = disc.mesh
    bc = spec.bc
    n = mesh.n_nodes
    f = spec.f
    mats, vecs = volume_terms(disc, f, spec.grad_f, with_derivatives)
    m2, v2 = edge_terms(disc, spec, with_derivatives)
    mats += m2
    vecs += v2 + neumann_plain_loads(disc, spec)
    A_full = terms_to_matrix(mats, n)
    F_full = terms_to_vector(vecs, n)
    g = np.zeros(n)
    if bc.pure_neumann:
        if bc.u0 is None:
            raise ContractViolation("pure Neumann problem without a normalization value")
        r_terms = normalization_terms(disc, with_derivatives)
        R = terms_to_vector(r_terms, n)
        A = sp.bmat([[A_full, sp.csr_matrix(R[:, None])], [sp.csr_matrix(R[None, :]), None]]).tocsr()
        F = np.append(F_full, bc.u0)
        return AssembledSystem("neumann", A, F, A_full, F_full, np.arange(n), np.zeros(0, int), g,
                               mats, vecs, r_terms, R, bc.u0, disc.stamp)
    dn = dirichlet_nodes(mesh, bc.dirichlet_sides)
    free = np.setdiff1d(np.arange(n), dn)
    g[dn] = bc.g_D(mesh.nodes[dn]) if bc.g_D is not None else 0.0
    lift = A_full @ g
    A = A_full[free][:, free].tocsr()
    F = F_full[free] - lift[free]
    return AssembledSystem("mixed", A, F, A_full, F_full, free, dn, g, mats, vecs, [],
                           stamp=disc.stamp)


# ------------------------------------------------------------ local views
def local_stiffness(vertices, beta=1.0, geom=None, beta_minus=1.0, beta_plus=1.0):
    """3x3 stiffness of one element (IFE if ``geom`` is given)."""
    if geom is None:
        G, area2 = p1_gradients(np.asarray(vertices, float))
        return beta * 0.5 * area2 * G @ G.T
    b = geom.batch(beta_minus, beta_plus)
    K = np.zeros((3, 3))
    for m in range(3):
        side_minus = b.sub_minus[0, m]
        W = b.Wm[0] if side_minus else b.Wp[0]
        gr = W @ b.G[0]
        K += (beta_minus if side_minus else beta_plus) * 0.5 * b.sub_det[0, m] * gr @ gr.T
    return K
