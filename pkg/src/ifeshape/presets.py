"""Named problem configurations (inverse and design cases).

Each preset builds a :class:`Case`: initial spline curves, materials, forward
problem data, the objective and (for inverse problems) the target curve.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import sympy as sym

from .assembly import BoundaryCondition, ForwardProblemSpec, Materials
from .errors import InvalidArgument
from .fields import ManufacturedField, integrate_field
from .geometry import SplineCurve, circle_points, ellipse_points
from .objectives import HeatDissipation, KohnVogelius, OutputLeastSquares
from .problem import ShapeProblem

x, y = sym.symbols("x y", real=True)
PI = sym.pi

# Constants of the named cases, kept in one place so tests can check them.
CONSTANTS = {
    "table1-case1": dict(beta_minus=1.0, beta_plus=20.0, N=120, n_ctrl=20,
                         init_center=(-0.6, -0.2), init_radius=np.pi / 9),
    "table1-case2": dict(betas=(1.0, 10.0, 100.0), N=80, n_ctrl=15,
                         init_semi_axes=(np.pi / 8, np.pi / 12), init_centers=((0.0, 0.5), (0.0, -0.5))),
    "table1-case3": dict(beta_minus=1.0, beta_plus=10.0, N=80, n_ctrl=20,
                         init_center=(0.4, 0.2), init_radius=np.pi / 6.28,
                         omega0=(-0.5, 1.0, 0.0, 1.0), semi_axes=(np.pi / 4, np.pi / 8), center=(0.0, 0.4)),
    "table2-case1": dict(beta_minus=1.0, beta_plus=10.0, N=80, n_ctrl=20,
                         init_center=(0.1, 0.0), init_radius=np.pi / 4,
                         semi_axes=(np.pi / 10, np.pi / 6), center=(0.4, -0.3)),
    "table2-case2": dict(beta_minus=1.0, beta_plus=2.0, N=80, n_ctrl=20, kidney_shift=0.5, kidney_const=0.1,
                         init_center=(0.5, 0.0), init_semi_axes=(np.pi / 8, np.pi / 4)),
    "table2-case3": dict(beta_minus=1.0, beta_plus=2.0, N=80, n_ctrl=10,
                         init_height=-0.15 / np.pi, neumann_sides=(1, 3)),
    "heat": dict(beta_minus=1.0, beta_plus=1e-3, theta=0.5, N=160, n_ctrl=20,
                 init_radius=0.82, source_half_width=0.1, source_value=-1.0),
}
NAMES = tuple(CONSTANTS)


@dataclass
class Case:
    """A fully specified shape-optimization problem."""
    name: str
    problem: ShapeProblem
    target: Optional[Callable] = None        # () -> list of (m, 2) polylines
    exact: Optional[ManufacturedField] = None
    max_refinements: int = 0
    params: dict = field(default_factory=dict)

    @property
    def templates(self):
        return self.problem.templates


# ------------------------------------------------------------ helpers
def _level_set_polylines(S, n=1201, box=(-1, 1, -1, 1), closed=True):
    """Zero level set of a numpy callable S as dense polylines."""
    from skimage.measure import find_contours
    xs = np.linspace(box[0], box[1], n)
    ys = np.linspace(box[2], box[3], n)
    Xg, Yg = np.meshgrid(xs, ys, indexing="ij")
    vals = S(np.stack([Xg, Yg], axis=-1))
    out = []
    for c in find_contours(vals, 0.0):
        px = np.interp(c[:, 0], np.arange(n), xs)
        py = np.interp(c[:, 1], np.arange(n), ys)
        out.append(np.column_stack([px, py]))
    return out


def _ellipse_polyline(center, ax, ay, m=2048):
    t = 2 * np.pi * np.arange(m + 1) / m
    return np.column_stack([center[0] + ax * np.cos(t), center[1] + ay * np.sin(t)])


def _np(expr):
    fn = sym.lambdify((x, y), expr, "numpy")
    return lambda X: np.asarray(fn(X[..., 0], X[..., 1]), float) * np.ones(X.shape[:-1])


def _dirichlet(fld, sides=(1, 2, 3, 4)):
    return ForwardProblemSpec(fld.f, fld.grad_f, BoundaryCondition(sides, fld.u, fld.grad_u))


def _neumann(fld, dirichlet_sides=()):
    u0 = integrate_field(fld.u, 200, 6) if not dirichlet_sides else None
    g_D = fld.u if dirichlet_sides else None
    g_Dg = fld.grad_u if dirichlet_sides else None
    return ForwardProblemSpec(fld.f, fld.grad_f,
                              BoundaryCondition(tuple(dirichlet_sides), g_D, g_Dg, fld.flux, fld.grad_flux, u0))


def _two_phase_field(phi, inside, bm, bp, C=0.0, name=""):
    return ManufacturedField(phi, lambda X: inside(X).astype(int), [bp, bm], C, name)


# ------------------------------------------------------------ presets
def _table1_case1(N, n, phase):
    k = CONSTANTS["table1-case1"]
    S = (x**2 + y**2)**2 + 0.8 * (6 * x**5 * y - 20 * x**3 * y**3 + 6 * x * y**5) / (x**2 + y**2) - sym.Rational(1, 10)
    Snp = _np(S)
    fld = _two_phase_field(S, lambda X: Snp(X) < 0, k["beta_minus"], k["beta_plus"], name="star")
    curve = SplineCurve(circle_points(k["init_center"], k["init_radius"], n, phase))

    def target():
        th = np.linspace(0, 2 * np.pi, 4097)
        r = (0.1 / (1 + 0.8 * np.sin(6 * th))) ** 0.25
        return [np.column_stack([r * np.cos(th), r * np.sin(th)])]
    obj = OutputLeastSquares(fld.u, fld.grad_u)
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    return [curve], mats, [_dirichlet(fld)], obj, fld, target, 0


def _table1_case2(N, n, phase):
    k = CONSTANTS["table1-case2"]
    b1, b2, b3 = k["betas"]
    S = 4 * sym.sin(PI * x) * sym.cos(PI * y + PI / 2) - 2
    Snp = _np(S)

    def region(X):
        pos = Snp(X) > 0
        return np.where(pos & (X[..., 1] > 0), 1, np.where(pos & (X[..., 1] <= 0), 2, 0))
    fld = ManufacturedField(S, region, [b3, b1, b2], 0.0, "two-blobs")
    ax, ay = k["init_semi_axes"]
    curves = [SplineCurve(ellipse_points(c, ax, ay, n, phase)) for c in k["init_centers"]]
    obj = OutputLeastSquares(fld.u, fld.grad_u)
    mats = Materials(b3, (b1, b2))
    return curves, mats, [_dirichlet(fld)], obj, fld, lambda: _level_set_polylines(Snp), 0


def _power_field(K, rexpr, bm, bp, name):
    phi = K * (rexpr ** sym.Rational(5, 2) - 1)
    rnp = _np(rexpr)
    return _two_phase_field(phi, lambda X: rnp(X) < 1, bm, bp, C=float(K) / bm, name=name)


def _table1_case3(N, n, phase):
    k = CONSTANTS["table1-case3"]
    r = (16 * x**2 + 64 * (y - sym.Rational(2, 5))**2) / PI**2
    fld = _power_field(1024 / PI**4, r, k["beta_minus"], k["beta_plus"], "ellipse-partial")
    curve = SplineCurve(circle_points(k["init_center"], k["init_radius"], n, phase))
    obj = OutputLeastSquares(fld.u, fld.grad_u, omega0=k["omega0"])
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    target = lambda: [_ellipse_polyline(k["center"], *k["semi_axes"])]
    return [curve], mats, [_dirichlet(fld)], obj, fld, target, 0


def _table2_case1(N, n, phase):
    k = CONSTANTS["table2-case1"]
    r = (100 * (x - sym.Rational(2, 5))**2 + 36 * (y + sym.Rational(3, 10))**2) / PI**2
    fld = _power_field(3600 / PI**4, r, k["beta_minus"], k["beta_plus"], "ellipse")
    curve = SplineCurve(circle_points(k["init_center"], k["init_radius"], n, phase))
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    target = lambda: [_ellipse_polyline(k["center"], *k["semi_axes"])]
    return [curve], mats, [_dirichlet(fld), _neumann(fld)], KohnVogelius(), fld, target, 2


def _table2_case2(N, n, phase):
    k = CONSTANTS["table2-case2"]
    rho2 = (x + sym.Rational(1, 2))**2 + y**2
    S = (2 * rho2 - x - sym.nsimplify(k["kidney_shift"]))**2 - rho2 + sym.nsimplify(k["kidney_const"])
    Snp = _np(S)
    fld = _two_phase_field(S, lambda X: Snp(X) < 0, k["beta_minus"], k["beta_plus"], name="kidney")
    curve = SplineCurve(ellipse_points(k["init_center"], *k["init_semi_axes"], n, phase))
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    return ([curve], mats, [_dirichlet(fld), _neumann(fld)], KohnVogelius(), fld,
            lambda: _level_set_polylines(Snp), 2)


def _table2_case3(N, n, phase):
    k = CONSTANTS["table2-case3"]
    S = sym.sin(PI * x) + PI / sym.Rational(3, 2) * y + sym.Rational(1, 10)
    Snp = _np(S)
    fld = _two_phase_field(S, lambda X: Snp(X) < 0, k["beta_minus"], k["beta_plus"], name="open")
    xs = np.linspace(-1.0, 1.0, n)
    curve = SplineCurve(np.column_stack([xs, np.full(n, k["init_height"])]), closed=False, design="y")
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    dir_sides = tuple(s for s in (1, 2, 3, 4) if s not in k["neumann_sides"])

    def target():
        t = np.linspace(-1, 1, 4097)
        return [np.column_stack([t, -1.5 / np.pi * (np.sin(np.pi * t) + 0.1)])]
    return ([curve], mats, [_dirichlet(fld), _neumann(fld, dir_sides)], KohnVogelius(), fld, target, 2)


def _heat(N, n, phase, theta=None):
    k = CONSTANTS["heat"]
    a, fv = k["source_half_width"], k["source_value"]

    def f(X):
        return fv * ((np.abs(X[..., 0]) <= a) & (np.abs(X[..., 1]) <= a)).astype(float)
    curve = SplineCurve(circle_points((0.0, 0.0), k["init_radius"], n, phase))
    mats = Materials(k["beta_plus"], (k["beta_minus"],))
    obj = HeatDissipation(k["theta"] if theta is None else theta)
    return [curve], mats, [ForwardProblemSpec(f, None, BoundaryCondition((1, 2, 3, 4)))], obj, None, None, 0


_BUILDERS = {
    "table1-case1": _table1_case1, "table1-case2": _table1_case2, "table1-case3": _table1_case3,
    "table2-case1": _table2_case1, "table2-case2": _table2_case2, "table2-case3": _table2_case3,
    "heat": _heat,
}


def make_case(name, N=None, n_ctrl=None, phase=0.0, max_refinements=None):
    """Build a named case; N and the control-point count default to the case's own values."""
    if name not in _BUILDERS:
        raise InvalidArgument(f"unknown case {name!r}; choose from {', '.join(NAMES)}")
    k = CONSTANTS[name]
    N = int(k["N"] if N is None else N)
    n = int(k["n_ctrl"] if n_ctrl is None else n_ctrl)
    curves, mats, specs, obj, fld, target, nref = _BUILDERS[name](N, n, phase)
    prob = ShapeProblem(curves, mats, specs, obj, N=N, exact=fld)
    return Case(name, prob, target, fld, nref if max_refinements is None else max_refinements,
                dict(N=N, n_ctrl=n, phase=phase))


def hausdorff(curves, polylines, m=2048):
    """Symmetric Hausdorff distance between spline curves and target polylines."""
    from scipy.spatial.distance import directed_hausdorff
    A = np.vstack([c.sample(m) for c in curves])
    B = np.vstack(polylines)
    return max(directed_hausdorff(A, B)[0], directed_hausdorff(B, A)[0])


def _resample_closed(P, n):
    """n points equally spaced in arc length along a closed polyline."""
    P = np.asarray(P, float)
    if np.linalg.norm(P[0] - P[-1]) > 1e-12:
        P = np.vstack([P, P[:1]])
    s = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    t = s[-1] * np.arange(n) / n
    return np.column_stack([np.interp(t, s, P[:, 0]), np.interp(t, s, P[:, 1])])


def target_curves(case, n=128):
    """Spline approximations of the true interface (for forward studies)."""
    if case.target is None:
        raise InvalidArgument(f"case {case.name!r} has no target interface")
    polys = case.target()
    tmpl = case.problem.templates
    out = []
    if not tmpl[0].closed:
        xs = np.linspace(-1, 1, n)
        P = polys[0]
        return [SplineCurve(np.column_stack([xs, np.interp(xs, P[:, 0], P[:, 1])]), closed=False)]
    # match each template (initial curve) with a target component by material order
    polys = sorted(polys, key=lambda P: -P[:, 1].mean())
    for P in polys:
        out.append(SplineCurve(_resample_closed(P, n)))
    return out
