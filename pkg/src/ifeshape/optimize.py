"""BFGS and SQP drivers for the shape-optimization loop.

Callbacks
---------
fg(alpha) -> (J, grad)         objective value and gradient; raises
                               GeometryError for inadmissible designs.
con(alpha) -> (c, dc)          single inequality c(alpha) <= 0 (SQP only).

Trial points that produce a geometry error (self-intersection, tangency,
curve leaving the domain, ...) are treated as rejections and the step is
halved.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .errors import ContractViolation, DegenerateGeometryError, GeometryError, InvalidArgument

FEAS_TOL = 1e-9          # constraint values up to this count as feasible


@dataclass
class OptOptions:
    max_iters: int = 150
    tol_g: float = 1e-6
    rel_tol: float = 1e-10          # relative decrease over ``rel_window`` iterations
    rel_window: int = 5
    c1: float = 1e-4
    c2: float = 0.9
    max_halvings: int = 30
    max_step: Optional[float] = None   # cap on max |alpha change| per iteration
    init_move: Optional[float] = None  # max |alpha change| of steps with a fresh Hessian (None: h)
    max_refinements: int = 0
    stall_rejections: int = 5
    stall_motion: float = 0.05      # in units of h; 0 disables
    stall_motion_iters: int = 3
    max_line_evals: int = 40

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class OptState:
    """Optimizer state between iterations."""
    it: int
    alpha: np.ndarray
    J: float
    g: np.ndarray
    H: np.ndarray                      # inverse Hessian (BFGS) or Hessian model (SQP)
    N: int = 0
    stall: int = 0
    motion_stall: int = 0
    lam: float = 0.0                   # SQP multiplier
    rho: float = 0.0                   # l1 merit weight
    c: float = 0.0
    dc: Optional[np.ndarray] = None
    step: float = 0.0
    log: List[dict] = field(default_factory=list)

    @property
    def merit(self):
        return self.J + self.rho * max(self.c, 0.0)


@dataclass
class Trajectory:
    alphas: List[np.ndarray]
    history: List[dict]
    status: str
    state: OptState

    @property
    def alpha(self):
        return self.state.alpha


class LineSearchFailure(Exception):
    pass


def _eval_on_line(fn, alpha, d, t, retries=3):
    """fn(alpha + t d), nudging t off degenerate vertex hits."""
    for k in range(retries + 1):
        try:
            return fn(alpha + t * d), t
        except DegenerateGeometryError:
            if k == retries:
                raise
            t *= 1 + 1e-7


def wolfe_search(fg, alpha, J0, g0, d, t0, opts):
    """Strong-Wolfe line search with bracketing and zoom.

    Returns (t, J, g, rejections).  Geometry errors shrink the step.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        raise LineSearchFailure("not a descent direction")
    c1, c2 = opts.c1, opts.c2
    rejections = 0

    def phi(t):
        nonlocal rejections
        (J, g), t = _eval_on_line(fg, alpha, d, t)
        return t, J, g, float(g @ d)

    def zoom(lo, hi):
        nonlocal rejections
        t_lo, f_lo, g_lo, d_lo = lo
        t_hi, f_hi = hi
        for _ in range(opts.max_line_evals):
            width = t_hi - t_lo
            den = 2 * (f_hi - f_lo - d_lo * width)
            t = t_lo - d_lo * width * width / den if np.isfinite(f_hi) and den > 0 else t_lo + 0.5 * width
            lo_b, hi_b = sorted((t_lo + 0.1 * width, t_hi - 0.1 * width))
            if not lo_b <= t <= hi_b:
                t = t_lo + 0.5 * width
            try:
                t, f, g, dd = phi(t)
            except GeometryError:
                rejections += 1
                t_hi, f_hi = t, np.inf
                continue
            if f > J0 + c1 * t * dphi0 or f >= f_lo:
                t_hi, f_hi = t, f
            else:
                if abs(dd) <= -c2 * dphi0:
                    return t, f, g
                if dd * (t_hi - t_lo) >= 0:
                    t_hi, f_hi = t_lo, f_lo
                t_lo, f_lo, g_lo, d_lo = t, f, g, dd
            if abs(t_hi - t_lo) < 1e-14 * max(1.0, abs(t_lo)):
                break
        if t_lo > 0:
            return t_lo, f_lo, g_lo           # sufficient decrease holds at t_lo
        raise LineSearchFailure("zoom did not find an acceptable step")

    prev = (0.0, J0, g0, dphi0)
    t = t0
    halvings = 0
    for i in range(opts.max_line_evals):
        try:
            t, f, g, dd = phi(t)
        except GeometryError:
            rejections += 1
            halvings += 1
            if halvings > opts.max_halvings:
                raise LineSearchFailure("step halved too often after geometry failures")
            t = prev[0] + 0.5 * (t - prev[0])
            continue
        if f > J0 + c1 * t * dphi0 or (i > 0 and f >= prev[1]):
            out = zoom(prev, (t, f))
            return out + (rejections,)
        if abs(dd) <= -c2 * dphi0:
            return t, f, g, rejections
        if dd >= 0:
            out = zoom((t, f, g, dd), (prev[0], prev[1]))
            return out + (rejections,)
        prev = (t, f, g, dd)
        t = 2 * t
    raise LineSearchFailure("line search exceeded its evaluation budget")


def _capped(d, opts, t0=1.0):
    m = np.abs(d).max()
    if opts.max_step is not None and m * t0 > opts.max_step:
        return opts.max_step / m
    return t0


def bfgs_step(state, fg, opts):
    """One BFGS iteration with a Wolfe line search; returns the new state.

    Raises LineSearchFailure when no acceptable step is found.
    """
    d = -state.H @ state.g
    if state.g @ d >= 0:
        state.H = np.eye(len(d))
        d = -state.g
    t0 = _capped(d, opts)
    if opts.init_move is not None and state.log and state.log[-1].get("fresh_H"):
        t0 = min(t0, opts.init_move / np.abs(d).max())
    t, J, g, rej = wolfe_search(fg, state.alpha, state.J, state.g, d, t0, opts)
    s = t * d
    yv = g - state.g
    H = state.H
    sy = float(s @ yv)
    if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
        if state.log and state.log[-1].get("fresh_H"):
            H = np.eye(len(s)) * sy / float(yv @ yv)
        r = 1.0 / sy
        V = np.eye(len(s)) - r * np.outer(s, yv)
        H = V @ H @ V.T + r * np.outer(s, s)
        H = 0.5 * (H + H.T)
    new = OptState(state.it + 1, state.alpha + s, J, g, H, state.N, state.stall,
                   state.motion_stall, step=float(t), log=state.log)
    new.log.append(dict(it=new.it, t=float(t), rejections=rej, updated=sy > 0))
    return new


# ------------------------------------------------------------------ SQP
def solve_qp(B, g, c, a):
    """min g.d + d.B.d / 2  s.t.  c + a.d <= 0, in closed form.

    Returns (d, lam).
    """
    Bg = np.linalg.solve(B, g)
    d = -Bg
    if c + a @ d <= 0:
        return d, 0.0
    Ba = np.linalg.solve(B, a)
    aBa = float(a @ Ba)
    if aBa <= 1e-14 * max(1.0, float(a @ a)):
        raise ContractViolation("infeasible subproblem: constraint gradient vanishes")
    lam = (c - a @ Bg) / aBa
    return -(Bg + lam * Ba), float(lam)


def project_feasible(con, alpha, max_iter=30, tol=FEAS_TOL):
    """Newton steps along the constraint gradient until c(alpha) <= tol."""
    a = np.asarray(alpha, float)
    for _ in range(max_iter):
        c, dc = con(a)
        if c <= tol:
            return a, c, dc
        a = a - c / float(dc @ dc) * dc
    c, dc = con(a)
    if c > tol:
        raise GeometryError("feasibility restoration failed")
    return a, c, dc


def constrained_step(state, fg, con, opts):
    """One SQP iteration: damped BFGS model, closed-form QP, l1-merit backtracking.

    Trial points are projected onto the feasible set c <= 0.
    """
    if state.dc is None:
        state.c, state.dc = con(state.alpha)
    d, lam = solve_qp(state.H, state.g, state.c, state.dc)
    rho = max(state.rho, 2 * lam, 1e-12)
    merit0 = state.J + rho * max(state.c, 0.0)
    D = float(state.g @ d) - rho * max(state.c, 0.0)
    if D >= 0 and np.abs(d).max() < 1e-14:
        raise LineSearchFailure("zero SQP step")
    t = _capped(d, opts)
    rejections = 0
    for _ in range(opts.max_halvings + 1):
        try:
            a1, c1, dc1 = project_feasible(con, state.alpha + t * d)
            (J1, g1), _ = _eval_on_line(fg, a1, np.zeros_like(a1), 0.0)
        except GeometryError:
            rejections += 1
            t *= 0.5
            continue
        m1 = J1 + rho * max(c1, 0.0)
        if m1 <= merit0 + opts.c1 * t * min(D, 0.0) and m1 <= merit0:
            break
        rejections += 1
        t *= 0.5
    else:
        raise LineSearchFailure("merit line search failed")
    # damped BFGS update of the Lagrangian Hessian model
    s = a1 - state.alpha
    yv = (g1 + lam * dc1) - (state.g + lam * state.dc)
    B = state.H
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs > 0:
        sy = float(s @ yv)
        theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
        r = theta * yv + (1 - theta) * Bs
        B = B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)
        B = 0.5 * (B + B.T)
    new = OptState(state.it + 1, a1, J1, g1, B, state.N, state.stall, state.motion_stall,
                   lam=lam, rho=rho, c=c1, dc=dc1, step=float(t), log=state.log)
    new.log.append(dict(it=new.it, t=float(t), rejections=rejections, lam=lam, merit=new.merit))
    return new


def kkt_residual(state):
    r = state.g + state.lam * state.dc if state.dc is not None else state.g
    return float(np.abs(r).max())


# ------------------------------------------------------------------ driver
def run(fg, alpha0, opts=None, con=None, refine=None, h=None, callback=None):
    """Run the optimization loop.

    Parameters
    ----------
    fg : callable alpha -> (J, grad)
    alpha0 : initial design
    con : optional constraint callable (switches to SQP)
    refine : optional callable () -> new mesh size h, invoked on a stall
        while refinements remain; the objective changes after it.
    h : current mesh size, for the curve-motion stall test and the default
        cap on steps taken with a fresh Hessian
    callback : called as callback(state, record) after every accepted iterate
    """
    opts = opts or OptOptions()
    auto_move = opts.init_move is None and h is not None
    if auto_move:
        opts = replace(opts, init_move=h)
    alpha = np.array(alpha0, float)
    if con is not None:
        alpha, c, dc = project_feasible(con, alpha)
    J, g = fg(alpha)
    n = len(alpha)
    H = np.eye(n)
    if con is not None:
        # scale the model so that the first step has unit length in max-norm
        H = np.eye(n) * max(np.abs(g).max(), 1e-12)
    state = OptState(0, alpha, J, g, H)
    state.log.append(dict(it=0, fresh_H=True))
    if con is not None:
        state.c, state.dc = c, dc
    alphas = [alpha.copy()]
    Js = [J]
    refinements = 0

    def record(st):
        gn = kkt_residual(st) if con is not None else float(np.abs(st.g).max())
        return dict(iter=st.it, J=st.J, gradnorm=gn, step=st.step, h=h,
                    merit=st.merit if con is not None else st.J,
                    area_c=st.c if con is not None else None)

    rec = record(state)
    history = [rec]
    if callback:
        callback(state, rec)
    status = "max_iters"
    while state.it < opts.max_iters:
        gnorm = history[-1]["gradnorm"]
        feasible = con is None or state.c <= FEAS_TOL
        if gnorm < opts.tol_g and feasible:
            status = "converged"
            break
        if len(Js) > opts.rel_window:
            ref = Js[-1 - opts.rel_window]
            if (ref - Js[-1]) <= opts.rel_tol * max(abs(ref), 1e-300):
                status = "stagnated"
                break
        stalled = False
        try:
            prev_alpha = state.alpha
            if con is None:
                state = bfgs_step(state, fg, opts)
            else:
                state = constrained_step(state, fg, con, opts)
            state.stall = 0
            motion = float(np.abs(state.alpha - prev_alpha).max())
            if h is not None and opts.stall_motion > 0 and motion < opts.stall_motion * h:
                state.motion_stall += 1
            else:
                state.motion_stall = 0
            if state.motion_stall >= opts.stall_motion_iters:
                stalled = True
            alphas.append(state.alpha.copy())
            Js.append(state.J)
            rec = record(state)
            history.append(rec)
            if callback:
                callback(state, rec)
        except LineSearchFailure as err:
            state.stall += 1
            state.log.append(dict(it=state.it, failure=str(err)))
            fresh = np.allclose(state.H, np.eye(n) * state.H[0, 0])
            if state.stall >= opts.stall_rejections or fresh:
                stalled = True
            else:
                state.H = np.eye(n) * (state.H[0, 0] if con is not None else 1.0)
                state.log.append(dict(it=state.it, fresh_H=True))
                continue
        if stalled:
            if refine is None or refinements >= opts.max_refinements:
                status = "stalled"
                break
            refinements += 1
            h = refine()
            if auto_move:
                opts = replace(opts, init_move=h)
            J, g = fg(state.alpha)
            state = OptState(state.it, state.alpha, J, g,
                             np.eye(n) * (max(np.abs(g).max(), 1e-12) if con is not None else 1.0),
                             lam=state.lam, rho=state.rho, c=state.c, dc=state.dc, log=state.log)
            state.log.append(dict(it=state.it, refined=h, fresh_H=True))
            Js = [J]
            rec = record(state)
            rec["refined"] = True
            history.append(rec)
            if callback:
                callback(state, rec)
            state.motion_stall = 0
    if status == "max_iters" and history[-1]["gradnorm"] < opts.tol_g and (con is None or state.c <= FEAS_TOL):
        status = "converged"
    return Trajectory(alphas, history, status, state)
