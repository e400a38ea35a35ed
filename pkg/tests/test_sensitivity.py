import numpy as np
import pytest

from ifeshape.assembly import assemble, terms_to_matrix
from ifeshape.errors import ContractViolation
from ifeshape.geometry import SplineCurve
from ifeshape.ife import IfeBatch
from ifeshape.mesh import Mesh, classify
from ifeshape.sensitivity import (assemble_dA_dF, intersection_velocities, material_derivative,
                                  parallel_map, shape_derivatives, velocity_field)

from helpers import batch_of, problem, random_cut_element

N_RANDOM = 200


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def test_translation_velocities_of_vertical_line():
    m = Mesh(10)
    c = SplineCurve(np.column_stack([np.full(6, 0.13), np.linspace(-1, 1, 6)]), closed=False,
                    design=list(range(6)))
    top = classify(m, c)
    DX, speed = intersection_velocities(c, top)
    total = DX.sum(axis=2)          # rigid translation in x: all x-coordinates move by one
    t = m.edge_tangent[top.edge_of]
    horizontal = np.abs(t[:, 1]) < 1e-12
    diagonal = np.abs(t[:, 0] - t[:, 1]) < 1e-12
    assert np.allclose(total[horizontal], [1.0, 0.0])
    assert np.allclose(total[diagonal], [1.0, 1.0])
    assert horizontal.sum() + diagonal.sum() == top.n_intersections
    # speed is the component along the edge tangent
    assert np.allclose(np.einsum("nd,ndj->nj", t, DX), speed)


def test_velocities_match_fd_of_intersections():
    P = problem("ols")
    a = P.initial_alpha()
    c = P.curves(a)[0]
    top = classify(P.mesh, c)
    DX, _ = intersection_velocities(c, top)
    for j in range(len(a)):
        e = np.zeros_like(a)
        e[j] = 1e-6
        tp = classify(P.mesh, P.curves(a + e)[0])
        tm = classify(P.mesh, P.curves(a - e)[0])
        assert np.array_equal(tp.edge_of, top.edge_of) and np.array_equal(tm.edge_of, top.edge_of)
        fd = (tp.points - tm.points) / 2e-6
        assert np.allclose(DX[:, :, j], fd, atol=1e-7)


def _moved_batch(A, P, Q, minus, bm, bp, dP, dQ, t):
    return batch_of(A, P + t * dP, Q + t * dQ, minus, bm, bp)


def velocity_suite(configs, seed=0):
    """Worst deviations of the velocity-field properties."""
    rng = np.random.default_rng(seed)
    worst = dict(vertices=0.0, points=0.0, parallel=0.0, divergence=0.0, continuity=0.0, jacobian=0.0)
    for A, P, Q, minus, bm, bp in configs:
        dP = rng.standard_normal() * (A[1] - A[0])
        dQ = rng.standard_normal() * (A[2] - A[0])
        b = batch_of(A, P, Q, minus, bm, bp)
        V = velocity_field(b, 0, dP, dQ)
        # zero at the vertices, from every sub-triangle containing them
        z = [V(A[0], 0), V(A[1], 1), V(A[1], 2), V(A[2], 2)]
        worst["vertices"] = max(worst["vertices"], np.abs(z).max())
        # interpolates the intersection velocities
        d = [V(P, 0) - dP, V(P, 1) - dP, V(Q, 0) - dQ, V(Q, 1) - dQ, V(Q, 2) - dQ]
        worst["points"] = max(worst["points"], np.abs(d).max())
        # tangential to the element edges
        s = rng.uniform(0, 1, 5)
        par = []
        for X0, X1, m, e in ((A[0], P, 0, A[1] - A[0]), (P, A[1], 1, A[1] - A[0]),
                             (A[0], Q, 0, A[2] - A[0]), (Q, A[2], 2, A[2] - A[0])):
            for si in s:
                par.append(_cross(V(X0 + si * (X1 - X0), m), e) / np.linalg.norm(e))
        for si in s:
            par.append(np.linalg.norm(V(A[1] + si * (A[2] - A[1]), 2)))
        worst["parallel"] = max(worst["parallel"], np.abs(par).max())
        # divergence equals the relative rate of change of the sub-triangle areas
        h = 1e-6
        bp_, bm_ = (_moved_batch(A, P, Q, minus, bm, bp, dP, dQ, t) for t in (h, -h))
        rate = (bp_.sub_det[0] - bm_.sub_det[0]) / (2 * h) / b.sub_det[0]
        div = np.array([V.divergence(m) for m in range(3)])
        worst["divergence"] = max(worst["divergence"], np.abs(div - rate).max() / (1 + np.abs(rate).max()))
        fdJ = (bp_.sub_J[0] - bm_.sub_J[0]) / (2 * h)
        worst["jacobian"] = max(worst["jacobian"], np.abs(V.dJ - fdJ).max())
        # continuity across the internal sub-triangle edges PQ and QA2
        cont = []
        for si in s:
            X = P + si * (Q - P)
            cont.append(V(X, 0) - V(X, 1))
            X = Q + si * (A[1] - Q)
            cont.append(V(X, 1) - V(X, 2))
        worst["continuity"] = max(worst["continuity"], np.abs(cont).max())
    return worst


def random_configs(n=N_RANDOM, seed=0):
    rng = np.random.default_rng(seed)
    return [random_cut_element(rng) for _ in range(n)]


def test_velocity_field_properties():
    w = velocity_suite(random_configs())
    for key in ("vertices", "points", "parallel", "continuity"):
        assert w[key] < 1e-12, (key, w[key])
    assert w["divergence"] < 1e-7
    assert w["jacobian"] < 1e-7


def test_velocity_field_only_on_interface_cells():
    P = problem("ols")
    ev = P.evaluate(P.initial_alpha())[1]
    c = ev.disc.cells
    top = ev.disc.topology
    # moving quadrature points exist only for cells of interface elements
    assert len(c.dX) == c.n - c.n_plain
    assert np.all(top.elem_ie[c.elem[:c.n_plain]] == -1)


def test_shape_derivatives_match_fd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A, P, Q, minus, bm, bp = random_cut_element(rng)
        dP = rng.standard_normal() * (A[1] - A[0])
        dQ = rng.standard_normal() * (A[2] - A[0])
        b = batch_of(A, P, Q, minus, bm, bp)
        d = shape_derivatives(b, 0, dP, dQ)
        h = 1e-6
        bp_, bm_ = (_moved_batch(A, P, Q, minus, bm, bp, dP, dQ, t) for t in (h, -h))
        assert np.allclose(d.dWp, (bp_.Wp[0] - bm_.Wp[0]) / (2 * h), atol=1e-6)
        assert np.allclose(d.dWm, (bp_.Wm[0] - bm_.Wm[0]) / (2 * h), atol=1e-6)
        assert np.allclose(d.dnbar, (bp_.nbar[0] - bm_.nbar[0]) / (2 * h), atol=1e-7)
        X = A.mean(axis=0)
        Lp = (X - (P + h * dP)) @ bp_.nbar[0]
        Lm = (X - (P - h * dP)) @ bm_.nbar[0]
        assert d.dL(X, b, 0, dP) == pytest.approx((Lp - Lm) / (2 * h), abs=1e-7)


@pytest.mark.parametrize("kind", ["ols", "heat"])
def test_dA_matches_fd(kind):
    P = problem(kind)
    a = P.initial_alpha()
    ev = P.evaluate(a)[1]
    P.gradient(a)
    S, speed = ev.systems[0], ev.speed
    n = S.n_nodes
    h = 1e-6
    for j in (0, 3, len(a) - 1):
        e = np.zeros_like(a)
        e[j] = h
        Ap = P.evaluate(a + e)[1].systems[0].A_full
        Am = P.evaluate(a - e)[1].systems[0].A_full
        fd = ((Ap - Am) / (2 * h)).toarray()
        dA = terms_to_matrix(S.mat_terms, n, "d", speed[:, j]).toarray()
        assert np.abs(dA - fd).max() < 1e-6 * max(1.0, np.abs(fd).max())
        assert np.abs(dA - dA.T).max() < 1e-12 * max(1.0, np.abs(dA).max())
        dAr, _ = assemble_dA_dF(S, speed[:, j])
        assert np.abs((dAr - dAr.T)).max() < 1e-12 * max(1.0, np.abs(dA).max())


@pytest.mark.parametrize("kind", ["ols", "ols-mixed", "kv", "heat"])
def test_adjoint_equals_direct(kind):
    P = problem(kind, N=10, n=6)
    a = P.initial_alpha()
    _, g = P.gradient(a)
    _, gd = P.gradient(a, "direct")
    assert np.max(np.abs(g - gd)) <= 1e-10 * max(1.0, np.abs(gd).max())


def test_direct_threads_match_serial():
    P = problem("kv", N=10, n=6)
    a = P.initial_alpha()
    g1 = P.gradient(a, "direct", threads=1)[1]
    g4 = P.gradient(a, "direct", threads=4)[1]
    assert np.array_equal(g1, g4)


def test_missing_adjoint_is_contract_violation():
    P = problem("ols", N=10, n=6)
    a = P.initial_alpha()
    ev = P.evaluate(a)[1]
    P.gradient(a)
    with pytest.raises(ContractViolation):
        material_derivative(P.objective, ev.disc, ev.systems, ev.states, [None], ev.speed)


def test_parallel_map_order():
    assert parallel_map(lambda i: i * i, range(20), threads=4) == [i * i for i in range(20)]


def global_velocity_continuity(P, alpha, samples=5):
    """Largest mismatch of V^j across element edges (zero outside interface elements)."""
    ev = P.evaluate(alpha)[1]
    d, m = ev.disc, P.mesh
    top = d.topology
    DX, _ = intersection_velocities(ev.curves, top)
    s = np.linspace(0.1, 0.9, samples)
    worst = 0.0
    for j in range(DX.shape[2]):
        fields = {int(top.ie_elem[k]): velocity_field(d.batch, k, DX[top.ie_P[k], :, j], DX[top.ie_Q[k], :, j])
                  for k in range(len(top.ie_elem))}
        for el, V in fields.items():
            for e in m.elem_edges[el]:
                a, b = m.nodes[m.edges[e]]
                other = [t for t in m.edge_elems[e] if t >= 0 and t != el]
                if not other:
                    continue        # boundary edge: tangential motion is allowed
                for si in s:
                    X = a + si * (b - a)
                    W = fields[other[0]](X) if other[0] in fields else np.zeros(2)
                    worst = max(worst, np.abs(V(X) - W).max())
    return worst


def test_velocity_field_globally_continuous():
    P = problem("ols", N=12, n=6)
    assert global_velocity_continuity(P, P.initial_alpha()) < 1e-12
