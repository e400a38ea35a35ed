"""Shared builders for the test suite."""
import numpy as np
import sympy as sym

from ifeshape.assembly import BoundaryCondition, ForwardProblemSpec, Materials
from ifeshape.fields import ManufacturedField, integrate_field
from ifeshape.geometry import SplineCurve, circle_points
from ifeshape.ife import IfeBatch
from ifeshape.objectives import HeatDissipation, KohnVogelius, OutputLeastSquares
from ifeshape.problem import ShapeProblem

x, y = sym.symbols("x y", real=True)
BETA_IN, BETA_OUT = 1.0, 10.0


def ellipse_field():
    """Two-phase field with an elliptic interface centred at (0.4, -0.3)."""
    r = (100 * (x - sym.Rational(2, 5)) ** 2 + 36 * (y + sym.Rational(3, 10)) ** 2) / sym.pi ** 2
    phi = 3600 / sym.pi ** 4 * (r ** sym.Rational(5, 2) - 1)

    def region(X):
        X = np.asarray(X, float)
        return (((100 * (X[..., 0] - 0.4) ** 2 + 36 * (X[..., 1] + 0.3) ** 2) / np.pi ** 2) < 1).astype(int)
    return ManufacturedField(phi, region, [BETA_OUT, BETA_IN], C=3600 / np.pi ** 4 / BETA_IN)


def offset_circle(n=8, phase=0.1):
    """Initial circle whose intersections on N=20 stay away from mesh vertices."""
    return SplineCurve(circle_points((0.1, 0.013), np.pi / 4, n, phase=phase))


def heat_circle(n=8):
    return SplineCurve(circle_points((0.047, -0.049), 0.806, n, phase=0.284))


def dirichlet_spec(fld, sides=(1, 2, 3, 4)):
    return ForwardProblemSpec(fld.f, fld.grad_f, BoundaryCondition(sides, fld.u, fld.grad_u,
                                                                   fld.flux, fld.grad_flux))


def neumann_spec(fld):
    u0 = integrate_field(fld.u, 200, 6)
    return ForwardProblemSpec(fld.f, fld.grad_f, BoundaryCondition((), None, None, fld.flux, fld.grad_flux, u0))


def heat_source(X):
    return -((np.abs(X[..., 0]) <= 0.1) & (np.abs(X[..., 1]) <= 0.1)).astype(float)


def problem(kind, N=20, n=8, curve=None):
    """Small OLS / KV / heat problems for gradient checks."""
    if kind == "heat":
        curve = curve or heat_circle(n)
        return ShapeProblem([curve], Materials(1e-3, (1.0,)),
                            [ForwardProblemSpec(heat_source, None, BoundaryCondition((1, 2, 3, 4)))],
                            HeatDissipation(0.5), N=N)
    fld = ellipse_field()
    curve = curve or offset_circle(n)
    mats = Materials(BETA_OUT, (BETA_IN,))
    if kind == "ols":
        return ShapeProblem([curve], mats, [dirichlet_spec(fld)], OutputLeastSquares(fld.u, fld.grad_u), N=N)
    if kind == "ols-mixed":
        return ShapeProblem([curve], mats, [dirichlet_spec(fld, (2, 4))],
                            OutputLeastSquares(fld.u, fld.grad_u, omega0=(-0.5, 0.7, -0.9, 0.6)), N=N)
    if kind == "kv":
        return ShapeProblem([curve], mats, [dirichlet_spec(fld), neumann_spec(fld)], KohnVogelius(), N=N)
    raise ValueError(kind)


def random_cut_element(rng):
    """Random counterclockwise triangle with P on A1A2, Q on A1A3 and random data.

    Returns (A, P, Q, minus, beta_minus, beta_plus).
    """
    while True:
        A = rng.uniform(-1, 1, (3, 2))
        d1, d2 = A[1] - A[0], A[2] - A[0]
        cross = d1[0] * d2[1] - d1[1] * d2[0]
        if cross < 0:
            A = A[[0, 2, 1]]
            cross = -cross
        lengths = [np.linalg.norm(A[i] - A[(i + 1) % 3]) for i in range(3)]
        if cross > 0.1 * max(lengths) ** 2:
            break
    s, t = rng.uniform(0.05, 0.95, 2)
    P = A[0] + s * (A[1] - A[0])
    Q = A[0] + t * (A[2] - A[0])
    a1m = bool(rng.integers(2))
    minus = np.array([a1m, not a1m, not a1m])
    bm, bp = 10.0 ** rng.uniform(-2, 2, 2)
    return A, P, Q, minus, bm, bp


def batch_of(A, P, Q, minus, bm, bp):
    return IfeBatch(A[None], P[None], Q[None], minus[None], bm, bp)


def piece_values(batch, v, X, minus_side):
    """Value and gradient of the IFE function with nodal values v on one side."""
    from ifeshape.ife import barycentric
    W = batch.Wm[0] if minus_side else batch.Wp[0]
    w = v @ W
    lam = barycentric(batch.A[0], np.atleast_2d(X))
    return lam @ w, w @ batch.G[0]
