"""Cartesian triangulation of (-1, 1)^2 and interface classification."""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (CurveOutsideDomainError, DegenerateGeometryError, GeometryError,
                     InvalidArgument, MeshTooCoarseError, TangencyError)
from .geometry import IntersectionRecord, curves_disjoint

# boundary side markers
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4
SIDE_NAMES = {"bottom": BOTTOM, "right": RIGHT, "top": TOP, "left": LEFT}


class Mesh:
    """Uniform N x N square grid, each square cut along its rising diagonal.

    Node k = j (N + 1) + i sits at (-1 + i h, -1 + j h), h = 2 / N.  Square
    (i, j) yields elements 2 (j N + i) = (ll, lr, ur) and 2 (j N + i) + 1 =
    (ll, ur, ul), both counterclockwise.  Local edge k of an element joins
    vertices k and k + 1 (mod 3).
    """

    def __init__(self, N):
        if int(N) != N or N < 2:
            raise InvalidArgument("mesh subdivision N must be an integer >= 2")
        N = int(N)
        self.N = N
        self.h = 2.0 / N
        x = np.linspace(-1.0, 1.0, N + 1)
        X, Y = np.meshgrid(x, x)
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])
        i, j = np.meshgrid(np.arange(N), np.arange(N))
        ll = (j * (N + 1) + i).ravel()
        lr, ul = ll + 1, ll + N + 1
        ur = ul + 1
        el = np.empty((2 * N * N, 3), dtype=int)
        el[0::2] = np.column_stack([ll, lr, ur])
        el[1::2] = np.column_stack([ll, ur, ul])
        self.elements = el

        loc = np.stack([el[:, [0, 1]], el[:, [1, 2]], el[:, [2, 0]]], axis=1)  # (Ne, 3, 2)
        key = np.sort(loc, axis=2)
        flat = key.reshape(-1, 2)
        uniq, inv = np.unique(flat[:, 0] * self.n_nodes + flat[:, 1], return_inverse=True)
        self.edges = np.column_stack([uniq // self.n_nodes, uniq % self.n_nodes])
        self.elem_edges = inv.reshape(-1, 3)
        self._edge_keys = uniq
        ne = len(self.edges)
        ee = -np.ones((ne, 2), dtype=int)
        # first and second occurrence of each edge
        order = np.argsort(inv, kind="stable")
        elem_of = order // 3
        sorted_edges = inv[order]
        first = np.r_[True, sorted_edges[1:] != sorted_edges[:-1]]
        ee[sorted_edges[first], 0] = elem_of[first]
        ee[sorted_edges[~first], 1] = elem_of[~first]
        self.edge_elems = ee

        p = self.nodes[self.edges]
        side = np.zeros(ne, dtype=int)
        tol = 1e-12
        side[np.all(np.abs(p[:, :, 1] + 1) < tol, axis=1)] = BOTTOM
        side[np.all(np.abs(p[:, :, 0] - 1) < tol, axis=1)] = RIGHT
        side[np.all(np.abs(p[:, :, 1] - 1) < tol, axis=1)] = TOP
        side[np.all(np.abs(p[:, :, 0] + 1) < tol, axis=1)] = LEFT
        self.edge_boundary = side
        vec = p[:, 1] - p[:, 0]
        self.edge_length = np.hypot(vec[:, 0], vec[:, 1])
        self.edge_tangent = vec / self.edge_length[:, None]
        nb = np.zeros(self.n_nodes, dtype=bool)
        nb[self.edges[side > 0].ravel()] = True
        self.node_on_boundary = nb

        for a in (self.nodes, self.elements, self.edges, self.edge_elems,
                  self.elem_edges, self.edge_boundary, self.edge_length, self.edge_tangent):
            a.setflags(write=False)

    @property
    def n_nodes(self):
        return (self.N + 1) ** 2

    @property
    def n_elements(self):
        return 2 * self.N * self.N

    @property
    def n_edges(self):
        return len(self.edges)

    def node_id(self, i, j):
        return j * (self.N + 1) + i

    def edge_id(self, a, b):
        """Edge index of node pairs (vectorized)."""
        a, b = np.asarray(a), np.asarray(b)
        key = np.minimum(a, b) * self.n_nodes + np.maximum(a, b)
        k = np.searchsorted(self._edge_keys, key)
        k = np.clip(k, 0, len(self._edge_keys) - 1)
        if np.any(self._edge_keys[k] != key):
            raise InvalidArgument("node pair is not a mesh edge")
        return k

    def element_areas(self):
        P = self.nodes[self.elements]
        d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_outward_normal(self, e, elem):
        """Unit normal of edge e pointing out of element elem."""
        a, b = self.nodes[self.edges[e, 0]], self.nodes[self.edges[e, 1]]
        el = np.asarray(self.elements[elem])
        # third vertex: the one not on the edge
        c = np.where((el != self.edges[e, 0][..., None]) & (el != self.edges[e, 1][..., None]),
                     el, -1).max(axis=-1)
        t = b - a
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        s = np.sign(np.sum((a - self.nodes[c]) * n, axis=-1))
        return n * s[..., None]

    def boundary_edges(self, sides):
        return np.flatnonzero(np.isin(self.edge_boundary, list(sides)))


def build_cartesian_mesh(N):
    return Mesh(N)


def refine_uniform(mesh):
    return Mesh(2 * mesh.N)


# ---------------------------------------------------------------- topology
@dataclass
class InterfaceTopology:
    """Result of classifying a mesh against one or more curves.

    ``node_region`` is 0 outside every curve and c + 1 inside curve c (below
    it for an open curve).  The minus side of curve c is its inside.
    Interface element k has vertices ``ie_nodes[k]`` permuted so that A1 is
    the vertex cut off by the curve, P lies on A1A2 and Q on A1A3.
    """
    mesh: Mesh
    n_curves: int
    t_hat: np.ndarray          # (Ni,)
    points: np.ndarray         # (Ni, 2)
    edge_of: np.ndarray        # (Ni,) edge id
    piece_of: np.ndarray       # (Ni,) spline piece
    curve_of: np.ndarray       # (Ni,)
    edge_cross: np.ndarray     # (n_edges,) intersection id or -1
    node_region: np.ndarray    # (Nn,)
    elem_region: np.ndarray    # (Ne,) region for non-interface, -1 for interface
    ie_elem: np.ndarray        # (Nie,)
    ie_nodes: np.ndarray       # (Nie, 3) permuted vertex ids
    ie_P: np.ndarray           # (Nie,) intersection id on A1A2
    ie_Q: np.ndarray           # (Nie,) intersection id on A1A3
    ie_curve: np.ndarray       # (Nie,)
    ie_minus: np.ndarray       # (Nie, 3) bool, vertex in I-
    elem_ie: np.ndarray = field(default=None)   # (Ne,) interface index or -1

    def __post_init__(self):
        if self.elem_ie is None:
            self.elem_ie = -np.ones(self.mesh.n_elements, dtype=int)
            self.elem_ie[self.ie_elem] = np.arange(len(self.ie_elem))

    @property
    def n_intersections(self):
        return len(self.t_hat)

    @property
    def interface_elements(self):
        return self.ie_elem

    @property
    def interface_edges(self):
        return np.flatnonzero(self.edge_cross >= 0)

    def records(self):
        return [IntersectionRecord(float(self.t_hat[i]), tuple(self.points[i]), int(self.edge_of[i]),
                                   int(self.piece_of[i]), False, int(self.curve_of[i]))
                for i in range(self.n_intersections)]

    def index_sets(self, k):
        """(I-, I+) as 1-based local vertex labels of interface element k."""
        m = self.ie_minus[k]
        return [i + 1 for i in range(3) if m[i]], [i + 1 for i in range(3) if not m[i]]

    def signature(self):
        """Hashable summary of the cut structure (for topology-stability checks)."""
        return (tuple(self.edge_cross >= 0), tuple(self.node_region))


def _line_families(mesh):
    """(normal, offsets, locate) for horizontal, vertical and diagonal lines."""
    N, h = mesh.N, mesh.h
    grid = -1.0 + h * np.arange(N + 1)

    def loc_h(j, X):  # line y = grid[j], coordinate along x
        u = (X[0] + 1.0) / h
        i = min(max(int(np.floor(u)), 0), N - 1)
        return mesh.node_id(i, j), mesh.node_id(i + 1, j), u - i

    def loc_v(i, X):
        u = (X[1] + 1.0) / h
        j = min(max(int(np.floor(u)), 0), N - 1)
        return mesh.node_id(i, j), mesh.node_id(i, j + 1), u - j

    dvals = np.arange(-(N - 1), N)

    def loc_d(k, X):
        d = dvals[k]
        u = (X[0] + 1.0) / h
        lo, hi = max(0, -d), min(N - 1, N - 1 - d)
        i = min(max(int(np.floor(u)), lo), hi)
        return mesh.node_id(i, i + d), mesh.node_id(i + 1, i + d + 1), u - i

    s2 = np.sqrt(0.5)
    return [
        (np.array([0.0, 1.0]), grid.copy(), loc_h, np.abs(grid) > 1 - 1e-12),
        (np.array([1.0, 0.0]), grid.copy(), loc_v, np.abs(grid) > 1 - 1e-12),
        (np.array([-s2, s2]), s2 * h * dvals, loc_d, np.zeros(len(dvals), bool)),
    ]


def _curve_crossings(mesh, curve, cid, eps):
    """All curve/edge crossings as a list of tuples."""
    out = []
    for normal, offsets, locate, is_bnd in _line_families(mesh):
        for piece in range(curve.pieces):
            lo, hi = curve.projection_range(normal, piece)
            ks = np.flatnonzero((offsets >= lo - 1e-12) & (offsets <= hi + 1e-12))
            for k in ks:
                for t in curve.line_roots(normal, offsets[k], piece):
                    if not curve.closed:
                        t = min(max(t, 0.0), 1.0)
                    X = curve.eval(t)
                    if np.any(np.abs(X) > 1 + 1e-12):
                        continue
                    a, b, tau = locate(k, X)
                    if tau < -1e-9 or tau > 1 + 1e-9:
                        continue
                    e = int(mesh.edge_id(a, b))
                    L = mesh.edge_length[e]
                    if tau * L < eps or (1 - tau) * L < eps:
                        node = a if tau * L < eps else b
                        raise DegenerateGeometryError(
                            f"curve passes through mesh node {node} at {mesh.nodes[node]}")
                    g = curve.tangent(t)
                    tang = abs(normal @ g) <= 1e-10 * np.hypot(*g)
                    # project exactly onto the edge line
                    A = mesh.nodes[mesh.edges[e, 0]]
                    X = A + ((X - A) @ mesh.edge_tangent[e]) * mesh.edge_tangent[e]
                    out.append((float(t), X, e, piece, tang, cid, bool(is_bnd[k])))
    # remove duplicates at piece junctions
    out.sort(key=lambda r: (r[2], r[0]))
    uniq = []
    for r in out:
        if uniq and uniq[-1][2] == r[2]:
            dt = abs(uniq[-1][0] - r[0])
            if curve.closed:
                dt = min(dt, 1 - dt)
            if dt < 1e-9 or np.hypot(*(uniq[-1][1] - r[1])) < 1e-12:
                continue
        uniq.append(r)
    return uniq


def classify(mesh, curves):
    """Locate the curve(s) on the mesh.

    Parameters
    ----------
    mesh : Mesh
    curves : SplineCurve or list of SplineCurve

    Returns
    -------
    InterfaceTopology
    """
    if not isinstance(curves, (list, tuple)):
        curves = [curves]
    for a in range(len(curves)):
        for b in range(a + 1, len(curves)):
            if not curves_disjoint(curves[a], curves[b]):
                raise GeometryError("interface curves intersect each other")
            gap = cKDTree(curves[a].sample(64 * curves[a].pieces)).query(
                curves[b].sample(64 * curves[b].pieces))[0].min()
            if gap < 2 * mesh.h:
                raise MeshTooCoarseError(f"curves {a} and {b} are closer than 2h ({gap:.3g})")
    eps = 1e-10 * mesh.h
    recs = []
    for cid, curve in enumerate(curves):
        rc = _curve_crossings(mesh, curve, cid, eps)
        if curve.closed and any(r[6] for r in rc):
            raise CurveOutsideDomainError(f"closed curve {cid} leaves the domain")
        if curve.closed and np.abs(curve.sample(16 * curve.pieces)).max() >= 1.0:
            raise CurveOutsideDomainError(f"closed curve {cid} is not inside the domain")
        recs.extend(rc)
    for r in recs:
        if r[4]:
            raise TangencyError(f"curve {r[5]} tangent to edge {r[2]} at {r[1]}")
    ne = mesh.n_edges
    edge_cross = -np.ones(ne, dtype=int)
    for k, r in enumerate(recs):
        if edge_cross[r[2]] >= 0:
            raise MeshTooCoarseError(f"edge {r[2]} is crossed more than once")
        edge_cross[r[2]] = k
    Ni = len(recs)
    t_hat = np.array([r[0] for r in recs])
    points = np.array([r[1] for r in recs]).reshape(Ni, 2)
    edge_of = np.array([r[2] for r in recs], dtype=int)
    piece_of = np.array([r[3] for r in recs], dtype=int)
    curve_of = np.array([r[5] for r in recs], dtype=int)

    node_region = _node_regions(mesh, curves, points, edge_of, curve_of)

    # consistency: an edge is cut iff its end nodes lie in different regions
    ends = node_region[mesh.edges]
    if np.any((ends[:, 0] != ends[:, 1]) != (edge_cross >= 0)):
        bad = np.flatnonzero((ends[:, 0] != ends[:, 1]) != (edge_cross >= 0))[0]
        raise MeshTooCoarseError(f"inconsistent side labels across edge {bad}")

    cut = edge_cross[mesh.elem_edges] >= 0           # (Ne, 3)
    ncut = cut.sum(axis=1)
    if np.any(ncut == 1) or np.any(ncut == 3):
        raise MeshTooCoarseError("element crossed an odd number of times")
    ie_elem = np.flatnonzero(ncut == 2)
    el = mesh.elements[ie_elem]
    c = cut[ie_elem]
    # A1 is the vertex shared by both cut edges: local edges (k-1) and k meet at vertex k
    a1 = np.where(c[:, 0] & c[:, 2], 0, np.where(c[:, 0] & c[:, 1], 1, 2))
    perm = (a1[:, None] + np.arange(3)[None, :]) % 3
    ie_nodes = np.take_along_axis(el, perm, axis=1)
    eP = mesh.edge_id(ie_nodes[:, 0], ie_nodes[:, 1])
    eQ = mesh.edge_id(ie_nodes[:, 0], ie_nodes[:, 2])
    ie_P = edge_cross[eP]
    ie_Q = edge_cross[eQ]
    ie_curve = curve_of[ie_P]
    if np.any(curve_of[ie_Q] != ie_curve):
        raise MeshTooCoarseError("element crossed by two different curves")
    reg = node_region[ie_nodes]
    ie_minus = reg == (ie_curve[:, None] + 1)
    outside_ok = np.all(ie_minus | (reg == 0), axis=1)
    if not np.all(outside_ok):
        raise MeshTooCoarseError("curves closer than one element")
    elem_region = node_region[mesh.elements[:, 0]].copy()
    elem_region[ie_elem] = -1
    return InterfaceTopology(mesh, len(curves), t_hat, points, edge_of, piece_of, curve_of,
                             edge_cross, node_region, elem_region, ie_elem, ie_nodes,
                             ie_P, ie_Q, ie_curve, ie_minus)


def _node_regions(mesh, curves, points, edge_of, curve_of):
    """Region label of every node by crossing parity along grid rows."""
    N, h = mesh.N, mesh.h
    region = np.zeros(mesh.n_nodes, dtype=int)
    xs = mesh.nodes[:, 0].reshape(N + 1, N + 1)
    ys = -1.0 + h * np.arange(N + 1)
    horiz = np.abs(mesh.edge_tangent[:, 1]) < 1e-12
    for cid, curve in enumerate(curves):
        sel = (curve_of == cid) & horiz[edge_of] if len(edge_of) else np.zeros(0, bool)
        px, row = points[sel, 0], np.rint((points[sel, 1] + 1) / h).astype(int)
        if curve.closed:
            start = np.zeros(N + 1, dtype=bool)      # left boundary is outside
        else:
            ends = curve.eval(np.array([0.0, 1.0]))
            if np.any(np.max(np.abs(ends), axis=1) < 1 - 1e-12):
                raise GeometryError("open curves must end on the domain boundary")
            # minus side contains the corner (-1, -1); walk up the left boundary
            left = (curve_of == cid) & (mesh.edge_boundary[edge_of] == LEFT)
            cy = np.sort(points[left, 1])
            start = np.searchsorted(cy, ys, side="left") % 2 == 0
        inside = np.zeros((N + 1, N + 1), dtype=bool)
        for j in range(N + 1):
            cx = np.sort(px[row == j])
            cnt = np.searchsorted(cx, xs[j], side="left")
            inside[j] = start[j] ^ (cnt % 2 == 1)
        inside = inside.ravel()
        if np.any(region[inside] != 0):
            raise GeometryError("nested interface curves are not supported")
        region[inside] = cid + 1
    return region
