import numpy as np
import pytest

from ifeshape.errors import ContractViolation, GeometryError
from ifeshape.optimize import OptOptions, kkt_residual, run, solve_qp


def quadratic(A, b):
    def fg(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b
    return fg


def test_identity_hessian_one_step():
    b = np.array([0.3, -1.2, 2.0])
    tr = run(quadratic(np.eye(3), b), np.zeros(3), OptOptions(tol_g=1e-12))
    assert tr.status == "converged"
    assert tr.history[-1]["iter"] == 1
    assert np.allclose(tr.alpha, b)


def test_convex_quadratic_r5():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 5))
    A = M @ M.T + 5 * np.eye(5)
    b = rng.standard_normal(5)
    tr = run(quadratic(A, b), np.zeros(5), OptOptions(tol_g=1e-10, max_iters=12))
    assert tr.status == "converged"
    assert np.allclose(tr.alpha, np.linalg.solve(A, b), atol=1e-9)


def test_monotone_on_rosenbrock():
    def fg(x):
        f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
        g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
        return f, g
    tr = run(fg, np.array([-1.2, 1.0]), OptOptions(max_iters=200, tol_g=1e-8, stall_motion=0))
    J = [r["J"] for r in tr.history]
    assert np.all(np.diff(J) <= 0)
    assert np.allclose(tr.alpha, [1, 1], atol=1e-5)


def test_already_optimal():
    b = np.array([1.0, 2.0])
    tr = run(quadratic(np.eye(2), b), b.copy())
    assert tr.status == "converged" and tr.history[-1]["iter"] == 0


def test_geometry_errors_shrink_the_step():
    # trial points beyond |x| > 1.5 are rejected as invalid geometry
    A, b = np.eye(2), np.array([1.0, 0.5])
    base = quadratic(A, b)

    def fg(x):
        if np.linalg.norm(x) > 1.5:
            raise GeometryError("outside")
        return base(x)
    tr = run(fg, np.array([-1.0, -1.0]), OptOptions(tol_g=1e-9, stall_motion=0))
    assert tr.status == "converged"
    assert np.allclose(tr.alpha, b, atol=1e-8)


def test_stall_triggers_refinement():
    calls = []

    def fg(x):       # gradient of the wrong sign: no step can decrease J
        return float(x @ x), -2 * x + 1e-3

    def refine():
        calls.append(1)
        return 0.5 ** len(calls)
    tr = run(fg, np.array([1.0, 1.0]), OptOptions(max_refinements=2), refine=refine, h=1.0)
    assert tr.status == "stalled"
    assert len(calls) == 2
    assert sum(1 for r in tr.history if r.get("refined")) == 2


def test_qp_inactive_and_active():
    B = np.diag([2.0, 1.0])
    g = np.array([1.0, 1.0])
    d, lam = solve_qp(B, g, -10.0, np.array([1.0, 0.0]))
    assert lam == 0.0 and np.allclose(d, -np.linalg.solve(B, g))
    # gradient parallel to the active constraint gradient: stationary
    a = np.array([1.0, 2.0])
    d, lam = solve_qp(B, -3 * a, 0.0, a)
    assert np.allclose(d, 0, atol=1e-12) and lam == pytest.approx(3.0)
    with pytest.raises(ContractViolation):
        solve_qp(B, g, 1.0, np.zeros(2))


def test_sqp_on_disk_constraint():
    x0 = np.array([2.0, 0.5])

    def fg(x):
        return 0.5 * float((x - x0) @ (x - x0)), x - x0

    def con(x):
        return float(x @ x - 1.0), 2 * x
    tr = run(fg, np.array([0.1, 0.1]), OptOptions(tol_g=1e-9, max_iters=100), con=con)
    xs = x0 / np.linalg.norm(x0)
    assert np.allclose(tr.alpha, xs, atol=1e-6)
    assert kkt_residual(tr.state) < 1e-8
    merit = [r["merit"] for r in tr.history]
    assert np.all(np.diff(merit) <= 1e-12)
    assert all(r["area_c"] <= 1e-9 for r in tr.history)


def test_sqp_inactive_matches_unconstrained():
    b = np.array([0.2, 0.1])
    tr = run(quadratic(np.eye(2), b), np.zeros(2), OptOptions(tol_g=1e-10),
             con=lambda x: (float(x @ x - 1.0), 2 * x))
    assert np.allclose(tr.alpha, b, atol=1e-8)
    assert tr.state.lam == 0.0


def test_deterministic():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((4, 4))
    A, b = M @ M.T + np.eye(4), rng.standard_normal(4)
    t1 = run(quadratic(A, b), np.ones(4))
    t2 = run(quadratic(A, b), np.ones(4))
    assert [r["J"] for r in t1.history] == [r["J"] for r in t2.history]


def test_fresh_steps_capped_by_mesh_width():
    # steep quadratic: an uncapped first trial would move alpha by ~2e3
    seen = []

    def fg(a):
        seen.append(a.copy())
        return float(500 * a @ a), 1000 * a
    run(fg, np.array([1.0, -2.0]), OptOptions(max_iters=1), h=0.05)
    assert np.abs(seen[1] - seen[0]).max() <= 0.05 + 1e-12
    seen.clear()
    run(fg, np.array([1.0, -2.0]), OptOptions(max_iters=1))
    assert np.abs(seen[1] - seen[0]).max() > 1.0
