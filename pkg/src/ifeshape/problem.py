"""Design vector -> curves -> IFE states -> objective value and gradient."""
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .assembly import Discretization, Materials, assemble
from .errors import ContractViolation, DegenerateGeometryError, InvalidArgument
from .geometry import check_simple
from .mesh import Mesh
from .objectives import HeatDissipation, constraint, dJ_du, evaluate
from .sensitivity import direct_gradient, intersection_velocities, material_derivative
from .solver import factor, solve, solve_adjoint


@dataclass
class Evaluation:
    """Everything computed for one design vector on one mesh."""
    alpha: np.ndarray
    curves: list
    disc: Discretization
    systems: list
    ops: list
    states: list                  # (U_full, lam) per forward problem
    value: float
    speed: np.ndarray = None
    grad: Optional[np.ndarray] = None
    adjoints: Optional[list] = None


@dataclass
class ShapeProblem:
    """Shape-optimization problem on a fixed Cartesian mesh.

    Parameters
    ----------
    templates : list of SplineCurve
        Curves whose design coordinates are replaced by the design vector
        (concatenated in curve order).
    materials : Materials
    specs : list of ForwardProblemSpec, one per state of the objective
    objective : OutputLeastSquares, KohnVogelius or HeatDissipation
    N : mesh resolution
    """
    templates: List
    materials: Materials
    specs: List
    objective: object
    N: int = 40
    exact: Optional[object] = None          # ManufacturedField, for error norms
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.specs) != self.objective.n_states:
            raise InvalidArgument(f"objective needs {self.objective.n_states} forward problems")
        self.mesh = Mesh(self.N)
        self.offsets = np.cumsum([0] + [c.n_design for c in self.templates])

    # ------------------------------------------------------------ design
    @property
    def n_design(self):
        return int(self.offsets[-1])

    def initial_alpha(self):
        return np.concatenate([c.alpha for c in self.templates])

    def curves(self, alpha):
        alpha = np.asarray(alpha, float)
        if alpha.shape != (self.n_design,):
            raise InvalidArgument(f"design vector must have length {self.n_design}")
        out = []
        for k, c in enumerate(self.templates):
            cur = c.with_alpha(alpha[self.offsets[k]:self.offsets[k + 1]])
            check_simple(cur)
            out.append(cur)
        return out

    def set_mesh(self, N):
        """Switch to another resolution; cached evaluations are dropped."""
        self.N = int(N)
        self.mesh = Mesh(self.N)
        self._cache.clear()

    # ------------------------------------------------------------ forward
    def _forward(self, alpha):
        key = (self.N, np.asarray(alpha, float).tobytes())
        ev = self._cache.get(key)
        if ev is not None:
            return ev
        curves = self.curves(alpha)
        disc = Discretization(self.mesh, curves, self.materials, derivatives=True)
        systems, ops, states = [], [], []
        for spec in self.specs:
            S = assemble(disc, spec, with_derivatives=True)
            op = factor(S.A)
            states.append(S.expand(solve(op, S.F)))
            systems.append(S)
            ops.append(op)
        value = evaluate(self.objective, disc, [s[0] for s in states], systems[0].stamp)
        ev = Evaluation(np.array(alpha, float), curves, disc, systems, ops, states, value)
        self._cache.clear()
        self._cache[key] = ev
        return ev

    def evaluate(self, alpha):
        """Objective value and the evaluation record."""
        ev = self._forward(alpha)
        return ev.value, ev

    def value(self, alpha):
        return self._forward(alpha).value

    def adjoints(self, ev):
        if ev.adjoints is None:
            gJ = dJ_du(self.objective, ev.disc, [s[0] for s in ev.states])
            out = []
            for S, op, g in zip(ev.systems, ev.ops, gJ):
                y = solve_adjoint(op, S.reduce(g))
                Y, yl = S.expand(y)
                Y[S.dirichlet] = 0.0
                out.append((Y, yl if yl is not None else 0.0))
            ev.adjoints = out
        return ev.adjoints

    def gradient(self, alpha, method="adjoint", threads=1):
        """Objective value and design gradient.

        ``method`` is "adjoint" (one extra solve per state) or "direct"
        (one solve per design variable and state, for verification).
        """
        ev = self._forward(alpha)
        if ev.speed is None:
            ev.speed = intersection_velocities(ev.curves, ev.disc.topology)[1]
        if method == "adjoint":
            if ev.grad is None:
                adj = self.adjoints(ev)
                states = [(U, lam if lam is not None else 0.0) for U, lam in ev.states]
                ev.grad = material_derivative(self.objective, ev.disc, ev.systems, states, adj, ev.speed)
            return ev.value, ev.grad.copy()
        if method == "direct":
            states = [(U, lam if lam is not None else 0.0) for U, lam in ev.states]
            g = direct_gradient(self.objective, ev.disc, ev.systems, ev.ops, states, ev.speed, threads)
            return ev.value, g
        raise InvalidArgument(f"unknown gradient method {method!r}")

    # -------------------------------------------------------- constraint
    @property
    def constrained(self):
        return isinstance(self.objective, HeatDissipation)

    def constraint(self, alpha):
        """Area constraint c(alpha) <= 0 and its gradient (single curve)."""
        if not self.constrained:
            raise ContractViolation("problem has no constraint")
        return constraint(self.objective, self.curves(alpha)[0])

    # ------------------------------------------------------------- errors
    def error_norms(self, alpha, state=0):
        """L2 and broken H1-seminorm errors of a state against the exact field."""
        if self.exact is None:
            raise ContractViolation("no exact field attached")
        ev = self._forward(alpha)
        c = ev.disc.cells
        U = ev.states[state][0]
        uh = np.einsum("cqp,cp->cq", c.psi, U[c.nodes])
        gh = np.einsum("cpd,cp->cd", c.grad, U[c.nodes])
        e0 = np.sum(c.w * (uh - self.exact.u(c.X)) ** 2)
        e1 = np.sum(c.w * np.sum((gh[:, None, :] - self.exact.grad_u(c.X)) ** 2, axis=-1))
        return float(np.sqrt(e0)), float(np.sqrt(e1))


def perturbed_retry(fn, alpha, eps=1e-8, tries=3, seed=0):
    """Call fn(alpha); on a degenerate geometry retry with tiny perturbations."""
    rng = np.random.default_rng(seed)
    a = np.asarray(alpha, float)
    for k in range(tries + 1):
        try:
            return fn(a), a
        except DegenerateGeometryError:
            if k == tries:
                raise
            a = np.asarray(alpha, float) + eps * rng.standard_normal(a.shape)


def vertex_margin(problem, alpha):
    """Smallest intersection-to-vertex distance, in units of h."""
    top = problem._forward(alpha).disc.topology
    m = problem.mesh
    e = top.edge_of
    d0 = np.linalg.norm(top.points - m.nodes[m.edges[e, 0]], axis=1)
    d1 = np.linalg.norm(top.points - m.nodes[m.edges[e, 1]], axis=1)
    return float(np.minimum(d0, d1).min() / m.h) if len(e) else np.inf


def finite_difference_gradient(problem, alpha, delta=1e-5, min_delta=1e-8):
    """Central differences with a topology-stability check.

    If the interface classification at alpha +/- delta e_j differs from the
    one at alpha, the step is halved until it agrees (down to ``min_delta``).

    Returns (fd, deltas) where ``deltas[j]`` is the step actually used.
    """
    alpha = np.asarray(alpha, float)
    ref = problem._forward(alpha).disc.topology.signature()
    fd = np.zeros(len(alpha))
    used = np.zeros(len(alpha))
    for j in range(len(alpha)):
        d = delta
        while True:
            e = np.zeros_like(alpha)
            e[j] = d
            evp = problem._forward(alpha + e)
            sp_ = evp.disc.topology.signature()
            vp = evp.value
            evm = problem._forward(alpha - e)
            sm = evm.disc.topology.signature()
            vm = evm.value
            if (sp_ == ref and sm == ref) or d / 2 < min_delta:
                break
            d /= 2
        fd[j] = (vp - vm) / (2 * d)
        used[j] = d
    return fd, used


def relative_errors(g, fd):
    """|g - fd| / max(|fd_j|, 1e-2 max|fd|), elementwise."""
    fd = np.asarray(fd, float)
    den = np.maximum(np.abs(fd), 1e-2 * np.abs(fd).max())
    den = np.where(den > 0, den, 1.0)
    return np.abs(np.asarray(g) - fd) / den
