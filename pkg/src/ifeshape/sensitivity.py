"""Shape sensitivities of the discrete IFE system.

The discrete problem depends on the design vector only through the
positions of the curve/edge intersection points.  Each intersection moves
along its (fixed) mesh edge, so its velocity is a scalar speed times the
edge's unit tangent.  Local derivative kernels are therefore computed once per
element with respect to the speeds of P and Q ("slots"), and the derivative
with respect to design variable j is the contraction with the speeds
sigma[:, j] obtained from the curve.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidArgument, TangencyError


# ------------------------------------------------------ intersection speeds
def intersection_velocities(curves, topology):
    """Velocities D_alpha X of every intersection point.

    Solves, per intersection on edge (A, B),
        [[yB - yA, -(xB - xA)], [y_t, -x_t]] DX = [0, y_t x_alpha - x_t y_alpha].

    Returns
    -------
    DX : (Ni, 2, n_design) velocities
    speed : (Ni, n_design) components along the edge tangent (node0 -> node1)
    """
    if not isinstance(curves, (list, tuple)):
        curves = [curves]
    mesh = topology.mesh
    offsets = np.cumsum([0] + [c.n_design for c in curves])
    nd = offsets[-1]
    Ni = topology.n_intersections
    DX = np.zeros((Ni, 2, nd))
    for cid, curve in enumerate(curves):
        sel = np.flatnonzero(topology.curve_of == cid)
        if len(sel) == 0:
            continue
        t = topology.t_hat[sel]
        g = curve.tangent(t)                                  # (k, 2)
        da = curve.d_alpha(t)                                 # (k, 2, nd_c)
        e = topology.edge_of[sel]
        ev = mesh.nodes[mesh.edges[e, 1]] - mesh.nodes[mesh.edges[e, 0]]
        M = np.zeros((len(sel), 2, 2))
        M[:, 0, 0], M[:, 0, 1] = ev[:, 1], -ev[:, 0]
        M[:, 1, 0], M[:, 1, 1] = g[:, 1], -g[:, 0]
        det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
        gn = np.hypot(g[:, 0], g[:, 1])
        bad = np.abs(det) <= 1e-10 * gn * mesh.edge_length[e]
        if np.any(bad):
            k = sel[np.flatnonzero(bad)[0]]
            raise TangencyError(f"curve tangent to edge {topology.edge_of[k]} at intersection {k}")
        rhs = np.zeros((len(sel), 2, curve.n_design))
        rhs[:, 1] = g[:, 1, None] * da[:, 0] - g[:, 0, None] * da[:, 1]
        DX[sel, :, offsets[cid]:offsets[cid + 1]] = np.linalg.solve(M, rhs)
    tang = mesh.edge_tangent[topology.edge_of]
    speed = np.einsum("id,idj->ij", tang, DX)
    return DX, speed


# ------------------------------------------------------- IFE derivatives
@dataclass
class IfeDerivatives:
    """Derivatives of IfeBatch quantities w.r.t. unit speeds of P (slot 0) and Q (slot 1).

    Arrays carry a slot axis right after the batch axis.
    """
    dP: np.ndarray       # (n, 2, 2)
    dQ: np.ndarray
    dnbar: np.ndarray    # (n, 2, 2)
    dLA: np.ndarray      # (n, 2, 3)
    dgamma: np.ndarray   # (n, 2, 3)
    dD: np.ndarray       # (n, 2)
    dc0: np.ndarray      # (n, 2, 3)
    dWp: np.ndarray      # (n, 2, 3, 3)
    dWm: np.ndarray
    dJ: np.ndarray       # (n, 2, 3, 2, 2) sub-triangle Jacobian derivatives
    ddet: np.ndarray     # (n, 2, 3)

    def W(self, minus):
        """dW for the given side per element, shape (n, 2, 3, 3)."""
        return np.where(np.asarray(minus)[:, None, None, None], self.dWm, self.dWp)


def ife_derivatives(batch, tP, tQ):
    """Shape-derivative kernels of a batch for unit speeds along tP and tQ."""
    n = len(batch)
    z = np.zeros((n, 2))
    dP = np.stack([tP, z], axis=1)
    dQ = np.stack([z, tQ], axis=1)
    return ife_derivatives_general(batch, dP, dQ)


def ife_derivatives_general(batch, dP, dQ):
    """Derivatives for arbitrary point velocities dP, dQ of shape (n, s, 2)."""
    nb, tb, d = batch.nbar, batch.tbar, batch.dist
    proj = np.einsum("nd,nsd->ns", nb, dP - dQ)
    dn = -tb[:, None, :] * (proj / d[:, None])[..., None]
    AP = batch.A - batch.P[:, None, :]
    dLA = np.einsum("nsd,nid->nsi", dn, AP) - np.einsum("nd,nsd->ns", nb, dP)[:, :, None]
    dgam = np.einsum("nid,nsd->nsi", batch.G, dn)
    m = batch.minus.astype(float)[:, None, :]
    mu = batch.mu[:, None]
    LA = batch.LA[:, None, :]
    gam = batch.gamma[:, None, :]
    D = batch.D[:, None]
    dD = mu * np.sum(m * (dgam * LA + gam * dLA), axis=2)
    dc0 = mu[..., None] * (dgam * D[..., None] - gam * dD[..., None]) / D[..., None] ** 2
    c0 = batch.c0[:, None, :, None]
    dWp = -(dc0[..., :, None] * (m * LA)[:, :, None, :] + c0 * (m * dLA)[:, :, None, :])
    dWm = dc0[..., :, None] * ((1 - m) * LA)[:, :, None, :] + c0 * ((1 - m) * dLA)[:, :, None, :]
    zero = np.zeros_like(dP)
    col1 = np.stack([dP, dQ, dQ], axis=2)                 # (n, s, 3, 2)
    col2 = np.stack([dQ, dP, zero], axis=2)
    dJ = np.stack([col1, col2], axis=-1)
    c1 = batch.sub_J[..., 0][:, None]
    c2 = batch.sub_J[..., 1][:, None]
    ddet = (col1[..., 0] * c2[..., 1] + c1[..., 0] * col2[..., 1]
            - col1[..., 1] * c2[..., 0] - c1[..., 1] * col2[..., 0])
    return IfeDerivatives(dP, dQ, dn, dLA, dgam, dD, dc0, dWp, dWm, dJ, ddet)


# ----------------------------------------------- velocity field (one element)
@dataclass
class VelocityField:
    """Piecewise-affine velocity V(X) = dJ_m J_m^{-1} (X - A_m) on T1, T2, T3."""
    base: np.ndarray      # (3, 2)
    J: np.ndarray         # (3, 2, 2)
    dJ: np.ndarray        # (3, 2, 2)

    def piece(self, X):
        """Index of the sub-triangle containing X (by reference coordinates)."""
        X = np.asarray(X, float)
        ref = np.einsum("mcd,md->mc", np.linalg.inv(self.J), X[None] - self.base)
        score = np.minimum(np.minimum(ref[:, 0], ref[:, 1]), 1 - ref.sum(axis=1))
        return int(np.argmax(score))

    def __call__(self, X, m=None):
        X = np.asarray(X, float)
        if m is None:
            m = self.piece(X)
        return self.dJ[m] @ np.linalg.solve(self.J[m], X - self.base[m])

    def divergence(self, m):
        return float(np.trace(self.dJ[m] @ np.linalg.inv(self.J[m])))


def velocity_field(batch, k, dP, dQ):
    """Velocity field of interface element k for point velocities dP, dQ."""
    d = ife_derivatives_general(batch, np.asarray(dP, float)[None, None].repeat(len(batch), 0),
                                np.asarray(dQ, float)[None, None].repeat(len(batch), 0))
    return VelocityField(batch.sub_base[k], batch.sub_J[k], d.dJ[k, 0])


@dataclass
class ShapeDerivativeBundle:
    """Shape derivatives of one element's IFE quantities for one direction."""
    dnbar: np.ndarray
    dL_at_vertices: np.ndarray
    dgamma: np.ndarray
    dc0: np.ndarray          # per basis function
    dWp: np.ndarray          # (3, 3)
    dWm: np.ndarray

    def dL(self, X, batch, k, dP):
        """Shape derivative of L(X) = nbar . (X - P) at fixed X."""
        return self.dnbar @ (np.asarray(X) - batch.P[k]) - batch.nbar[k] @ dP


def shape_derivatives(batch, k, dP, dQ):
    n = len(batch)
    d = ife_derivatives_general(batch, np.broadcast_to(np.asarray(dP, float), (n, 1, 2)),
                                np.broadcast_to(np.asarray(dQ, float), (n, 1, 2)))
    return ShapeDerivativeBundle(d.dnbar[k, 0], d.dLA[k, 0], d.dgamma[k, 0], d.dc0[k, 0],
                                 d.dWp[k, 0], d.dWm[k, 0])


# ------------------------------------------------------- global derivatives
def assemble_dA_dF(system, speed_j):
    """Derivatives of the reduced system matrix and load for one direction.

    ``speed_j`` holds the speed of every intersection point for design
    variable j.
    """
    from .assembly import terms_to_matrix, terms_to_vector
    import scipy.sparse as sp
    n = system.n_nodes
    dA = terms_to_matrix(system.mat_terms, n, "d", speed_j)
    dF = terms_to_vector(system.vec_terms, n, "d", speed_j)
    if system.kind == "neumann":
        dR = terms_to_vector(system.r_terms, n, "d", speed_j)
        A = sp.bmat([[dA, sp.csr_matrix(dR[:, None])], [sp.csr_matrix(dR[None, :]), None]]).tocsr()
        return A, np.append(dF, 0.0)
    free = system.free
    dFm = dF[free] - (dA @ system.g)[free]
    return dA[free][:, free].tocsr(), dFm


def adjoint_residual_speed(system, U, lam, Y_full, Y_lam, n_int):
    """Per-intersection Y . (dF - dA u) for one forward problem."""
    from .assembly import accumulate_mat, accumulate_vec
    rho = accumulate_vec(system.vec_terms, Y_full, n_int)
    rho -= accumulate_mat(system.mat_terms, Y_full, U, n_int)
    if system.kind == "neumann":
        rho -= lam * accumulate_vec(system.r_terms, Y_full, n_int)
        rho -= Y_lam * accumulate_vec(system.r_terms, U, n_int)
    return rho


def material_derivative(obj, disc, systems, states, adjoints, speed):
    """Gradient of the discrete objective by the adjoint route.

    Parameters
    ----------
    states : list of (U_full, lam)
    adjoints : list of (Y_full, Y_lam), solutions of A^T Y = dJ/du
    speed : (Ni, n_design) intersection speeds
    """
    from .objectives import dJ_dspeed_explicit
    if len(adjoints) != len(systems) or any(a is None for a in adjoints):
        raise ContractViolation("an adjoint state is missing")
    n_int = disc.n_intersections
    rho = dJ_dspeed_explicit(obj, disc, [s[0] for s in states])
    for S, (U, lam), (Y, Yl) in zip(systems, states, adjoints):
        rho += adjoint_residual_speed(S, U, lam, Y, Yl, n_int)
    return rho @ speed


def direct_gradient(obj, disc, systems, ops, states, speed, threads=1):
    """Gradient by solving for every D_j u explicitly (reference route)."""
    from .objectives import dJ_du, dJ_dspeed_explicit
    from .solver import solve
    Us = [s[0] for s in states]
    gJ = dJ_du(obj, disc, Us)
    expl = dJ_dspeed_explicit(obj, disc, Us) @ speed

    def one(j):
        tot = expl[j]
        for S, op, (U, lam), g in zip(systems, ops, states, gJ):
            dA, dF = assemble_dA_dF(S, speed[:, j])
            x = S.reduce(U)
            if S.kind == "neumann":
                x[-1] = lam
            else:
                x = U[S.free]
            du = solve(op, dF - dA @ x)
            tot += S.reduce(g) @ du
        return tot

    return np.array(parallel_map(one, range(speed.shape[1]), threads))


def parallel_map(fn, items, threads=1):
    """Order-preserving map, threaded when threads > 1."""
    items = list(items)
    if threads <= 1:
        return [fn(i) for i in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
