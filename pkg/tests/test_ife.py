import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifeshape.errors import DegenerateGeometryError, InvalidArgument
from ifeshape.ife import (LocalBasis, barycentric, build_geom, build_ife_shape, ife_coefficients,
                          p1_gradients)

from helpers import batch_of, random_cut_element

N_RANDOM = 200


def unit_normal(P, Q):
    d = P - Q
    return np.array([d[1], -d[0]]) / np.linalg.norm(d)


def test_p1_gradients_reference():
    G, a2 = p1_gradients(np.array([[0, 0], [1, 0], [0, 1]], float))
    assert a2 == pytest.approx(1.0)
    assert np.allclose(G, [[-1, -1], [1, 0], [0, 1]])


def test_barycentric_of_vertices():
    A = np.array([[0.1, 0.2], [0.9, 0.3], [0.4, 1.1]])
    assert np.allclose(barycentric(A, A), np.eye(3))


def test_build_geom_relabels_cut_vertex():
    V = np.array([[0, 0], [1, 0], [1, 1]], float)
    g = build_geom(V, (1, 0.4), (0.5, 0.0))    # edges (V1V2) and (V0V1): V1 is cut off
    assert np.allclose(g.vertices[0], V[1])
    assert g.Iminus == [1] and g.Iplus == [2, 3]
    assert g.sub_areas().sum() == pytest.approx(0.5)
    # P is on A1A2, Q on A1A3
    for X, B in ((g.P, g.vertices[1]), (g.Q, g.vertices[2])):
        d, p = B - g.vertices[0], X - g.vertices[0]
        assert abs(d[0] * p[1] - d[1] * p[0]) < 1e-14


def test_build_geom_rejects_same_edge_and_coincident():
    V = np.array([[0, 0], [1, 0], [1, 1]], float)
    with pytest.raises(DegenerateGeometryError):
        build_geom(V, (0.2, 0), (0.7, 0))
    with pytest.raises(DegenerateGeometryError):
        build_geom(V, (0.5, 0), (0.5, 0))


def test_equal_coefficients_give_p1():
    V = np.array([[0, 0], [1, 0], [1, 1]], float)
    g = build_geom(V, (1, 0.4), (0.5, 0.0))
    b = g.batch(3.0, 3.0)
    assert np.allclose(b.Wp, np.eye(3)) and np.allclose(b.Wm, np.eye(3))


def test_sherman_morrison_coefficients_match_batch():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A, P, Q, minus, bm, bp = random_cut_element(rng)
        g = build_geom(A, P, Q, a1_minus=bool(minus[0]))
        v = rng.standard_normal(3)
        s = build_ife_shape(g, bm, bp, v)
        co = ife_coefficients(g, bm, bp, v)
        assert co.c0 == pytest.approx(s.c0, rel=1e-10, abs=1e-12)


def test_local_basis_rejects_outside_point():
    lb = LocalBasis(np.array([[0, 0], [1, 0], [0, 1]], float))
    with pytest.raises(InvalidArgument):
        lb.shape_value(0, (1.0, 1.0))


def _elements(seed=0, n=N_RANDOM):
    rng = np.random.default_rng(seed)
    return [random_cut_element(rng) for _ in range(n)]


def ife_suite(elements):
    """Worst deviations of the IFE local properties over random elements."""
    worst = dict(delta=0.0, unity=0.0, continuity=0.0, flux=0.0, reproduction=0.0)
    rng = np.random.default_rng(1)
    for A, P, Q, minus, bm, bp in elements:
        b = batch_of(A, P, Q, minus, bm, bp)
        Wm, Wp, G = b.Wm[0], b.Wp[0], b.G[0]
        # nodal delta on each vertex's own side
        own = np.where(minus[None, :], Wm, Wp)
        worst["delta"] = max(worst["delta"], np.abs(own - np.eye(3)).max())
        # partition of unity on both pieces
        worst["unity"] = max(worst["unity"], np.abs(Wm.sum(0) - 1).max(), np.abs(Wp.sum(0) - 1).max())
        # continuity on the line through P and Q
        s = rng.uniform(-0.5, 1.5, 7)
        X = P[None] + s[:, None] * (Q - P)[None]
        lam = barycentric(A, X)
        worst["continuity"] = max(worst["continuity"], np.abs(lam @ Wm.T - lam @ Wp.T).max())
        # flux jump with an independently computed normal
        n = unit_normal(P, Q)
        fm = bm * (Wm @ G) @ n
        fp = bp * (Wp @ G) @ n
        scale = max(bm, bp) * np.abs(G).max()
        worst["flux"] = max(worst["flux"], np.abs(fm - fp).max() / scale)
        # reproduction of a jump-compatible piecewise-affine function
        gm = rng.standard_normal(2)
        sgn = -1.0 if minus[0] else 1.0
        n_plus = n * (np.sign((A[0] - P) @ n) * sgn)   # normal pointing into the plus side
        L = lambda Z: (Z - P) @ n_plus
        um = lambda Z: 0.3 + Z @ gm
        up = lambda Z: um(Z) + (bm / bp - 1.0) * (gm @ n_plus) * L(Z)
        v = np.array([um(A[i]) if minus[i] else up(A[i]) for i in range(3)])
        Z = rng.dirichlet(np.ones(3), 10) @ A
        on_minus = L(Z) < 0
        lamZ = barycentric(A, Z)
        uh = np.where(on_minus, lamZ @ (v @ Wm), lamZ @ (v @ Wp))
        ex = np.where(on_minus, um(Z), up(Z))
        worst["reproduction"] = max(worst["reproduction"], np.abs(uh - ex).max())
    return worst


def test_ife_properties_random():
    w = ife_suite(_elements())
    assert w["delta"] < 1e-12
    assert w["unity"] < 1e-12
    assert w["continuity"] < 1e-12
    assert w["flux"] < 1e-12
    assert w["reproduction"] < 1e-11


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ife_properties_hypothesis(seed):
    w = ife_suite(_elements(seed, 1))
    assert max(w.values()) < 1e-10


def test_shape_object_matches_batch():
    rng = np.random.default_rng(7)
    A, P, Q, minus, bm, bp = random_cut_element(rng)
    g = build_geom(A, P, Q, a1_minus=bool(minus[0]))
    lb = LocalBasis(None, g, bm, bp)
    for i in range(3):
        assert lb.shape_value(i, g.vertices[i]) == pytest.approx(1.0)
        assert lb.shape_value(i, g.vertices[(i + 1) % 3]) == pytest.approx(0.0, abs=1e-12)
