"""Objective functionals and their partial derivatives.

Each objective is an integral of a pointwise integrand J(X, u^k, grad u^k,
beta).  The integral is evaluated with the same cell quadrature as the
assembly (sub-triangles on interface elements), which makes the value, the
state gradient and the explicit shape derivative mutually consistent:

    D_j int J = int dJ/dalpha_j + int grad J . V_j + int J div V_j,

realized by moving the quadrature points with the velocity field.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, StaleStateError
from .geometry import enclosed_area, enclosed_area_gradient

DOMAIN_AREA = 4.0


@dataclass
class OutputLeastSquares:
    """int_{Omega0} (u - ubar)^2 for one Dirichlet problem."""
    ubar: Callable
    grad_ubar: Callable
    omega0: Optional[tuple] = None        # (xmin, xmax, ymin, ymax)
    n_states = 1

    def integrand(self, X, vals, grads, beta):
        e = vals[0] - self.ubar(X)
        return e * e, [2 * e], [None], -2 * e[..., None] * self.grad_ubar(X)


@dataclass
class KohnVogelius:
    """int |u1 - u2|^2 for a Dirichlet state u1 and a Neumann/mixed state u2."""
    n_states = 2
    omega0: Optional[tuple] = None

    def integrand(self, X, vals, grads, beta):
        e = vals[0] - vals[1]
        return e * e, [2 * e, -2 * e], [None, None], None


@dataclass
class HeatDissipation:
    """int beta |grad u|^2 subject to |inside| <= theta |Omega|."""
    theta: float = 0.5
    n_states = 1
    omega0: Optional[tuple] = None

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise InvalidArgument("volume fraction must lie in (0, 1)")

    @property
    def area_bound(self):
        return self.theta * DOMAIN_AREA

    def integrand(self, X, vals, grads, beta):
        g = grads[0]
        J = beta * np.sum(g * g, axis=-1)
        return J, [None], [2 * beta[..., None] * g], None


def cell_mask(disc, omega0):
    """Cells whose parent element lies inside the axis-aligned box omega0."""
    c = disc.cells
    if omega0 is None:
        return np.ones(c.n, dtype=bool)
    x0, x1, y0, y1 = omega0
    cen = disc.mesh.nodes[disc.mesh.elements[c.elem]].mean(axis=1)
    return (cen[:, 0] > x0) & (cen[:, 0] < x1) & (cen[:, 1] > y0) & (cen[:, 1] < y1)


def _states_at(c, Us, idx):
    vals = [np.einsum("cqp,cp->cq", c.psi[idx], U[c.nodes[idx]]) for U in Us]
    grads = [np.broadcast_to(np.einsum("cpd,cp->cd", c.grad[idx], U[c.nodes[idx]])[:, None, :],
                             c.X[idx].shape) for U in Us]
    return vals, grads


def evaluate(obj, disc, Us, stamp=None):
    """Discrete objective value.

    ``stamp`` is the discretization stamp the states were computed on; a
    mismatch means the states are stale.
    """
    if stamp is not None and stamp != disc.stamp:
        raise StaleStateError("states were computed on a different interface discretization")
    if len(Us) != obj.n_states or any(len(U) != disc.n_nodes for U in Us):
        raise StaleStateError("state vectors do not match the discretization")
    c = disc.cells
    idx = np.flatnonzero(cell_mask(disc, obj.omega0))
    vals, grads = _states_at(c, Us, idx)
    beta = np.broadcast_to(c.beta[idx, None], c.w[idx].shape)
    J = obj.integrand(c.X[idx], vals, grads, beta)[0]
    return float(np.sum(c.w[idx] * J))


def dJ_du(obj, disc, Us):
    """Full-length nodal gradients dJ/dU^k, one per state."""
    c = disc.cells
    idx = np.flatnonzero(cell_mask(disc, obj.omega0))
    vals, grads = _states_at(c, Us, idx)
    beta = np.broadcast_to(c.beta[idx, None], c.w[idx].shape)
    _, dv, dg, _ = obj.integrand(c.X[idx], vals, grads, beta)
    out = []
    for k in range(len(Us)):
        loc = np.zeros((len(idx), 3))
        if dv[k] is not None:
            loc += np.einsum("cq,cq,cqp->cp", c.w[idx], dv[k], c.psi[idx])
        if dg[k] is not None:
            loc += np.einsum("cq,cqd,cpd->cp", c.w[idx], dg[k], c.grad[idx])
        g = np.zeros(len(Us[k]))
        np.add.at(g, c.nodes[idx].ravel(), loc.ravel())
        out.append(g)
    return out


def dJ_dspeed_explicit(obj, disc, Us):
    """Explicit shape derivative per intersection speed (states held fixed).

    Sums the terms int dJ/dalpha + int grad J . V + int J div V over
    interface cells inside Omega0.
    """
    c = disc.cells
    out = np.zeros(disc.n_intersections)
    o = c.n_plain
    mask = cell_mask(disc, obj.omega0)[o:]
    if c.n == o or not np.any(mask):
        return out
    sel = np.flatnonzero(mask)
    idx = o + sel
    vals, grads = _states_at(c, Us, idx)
    beta = np.broadcast_to(c.beta[idx, None], c.w[idx].shape)
    J, dv, dg, dX = obj.integrand(c.X[idx], vals, grads, beta)
    w, dw = c.w[idx], c.dw[sel]
    total = np.einsum("nsq,nq->ns", dw, J)
    for k, U in enumerate(Us):
        Ul = U[c.nodes[idx]]
        if dv[k] is not None:
            dval = np.einsum("nsqp,np->nsq", c.dpsi[sel], Ul)
            total += np.einsum("nq,nq,nsq->ns", w, dv[k], dval)
        if dg[k] is not None:
            dgrad = np.einsum("nspd,np->nsd", c.dgrad[sel], Ul)
            total += np.einsum("nq,nqd,nsd->ns", w, dg[k], dgrad)
    if dX is not None:
        total += np.einsum("nq,nqd,nsqd->ns", w, dX, c.dX[sel])
    np.add.at(out, c.slots[sel].ravel(), total.ravel())
    return out


def dJ_dalpha_explicit(obj, disc, Us, speed, j=None):
    e = dJ_dspeed_explicit(obj, disc, Us)
    return e @ speed if j is None else float(e @ speed[:, j])


def constraint(obj, curve):
    """Area constraint value |inside| - theta |Omega| and its design gradient."""
    if not isinstance(obj, HeatDissipation):
        raise InvalidArgument("only the heat objective carries an area constraint")
    return enclosed_area(curve) - obj.area_bound, enclosed_area_gradient(curve)
