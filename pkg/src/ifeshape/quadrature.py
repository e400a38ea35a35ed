"""Quadrature rules on the reference triangle and interval."""
import numpy as np

# degree-4 symmetric 6-point rule; weights sum to 1 (multiply by area)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322

TRI_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1],
    [_A1, 1 - 2 * _A1, _A1],
    [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2],
    [_A2, 1 - 2 * _A2, _A2],
    [1 - 2 * _A2, _A2, _A2],
])
TRI_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])
# reference coordinates (xi, eta) of the affine map A + J (xi, eta)
TRI_REF = TRI_BARY[:, 1:]


def gauss_line(n=4):
    """Gauss-Legendre nodes on [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


LINE_S, LINE_W = gauss_line(4)


def triangle_rule(degree):
    """Collapsed Gauss rule of arbitrary degree on the reference triangle.

    Returns reference points (n, 2) and weights summing to 1/2.
    """
    n = degree // 2 + 1
    s, ws = gauss_line(n)
    xi = s[:, None] * (1 - s[None, :])
    eta = s[None, :] * np.ones_like(xi)
    # Duffy map (u, v) -> (u (1 - v), v), jacobian (1 - v)
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    w = (ws[:, None] * ws[None, :] * (1 - s[None, :])).ravel()
    return pts, w
