"""Reference quadrature rules on [0, 1], [0, 1]^2 and triangles."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_1d(n):
    """``n``-point Gauss-Legendre rule on [0, 1] (exact to degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_square(n):
    """Tensor Gauss rule on the unit square; points ordered with x fastest."""
    x, w = gauss_1d(n)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    return np.stack([X.ravel(), Y.ravel()], axis=-1), W.ravel()


@lru_cache(maxsize=None)
def _collapsed_triangle(n):
    # Duffy map of the square onto the reference triangle (0,0),(1,0),(0,1)
    s, ws = gauss_1d(n)
    S, T = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws * (1 - s), ws)
    pts = np.stack([S.ravel(), ((1 - S) * T).ravel()], axis=-1)
    return pts, W.ravel()


def triangle_rule(p0, p1, p2, n=5):
    """Points and weights on the triangle ``p0 p1 p2``; exact to total degree 2n-2."""
    ref, w = _collapsed_triangle(n)
    p0 = np.asarray(p0, dtype=float)
    e1 = np.asarray(p1, dtype=float) - p0
    e2 = np.asarray(p2, dtype=float) - p0
    area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
    pts = p0 + ref[:, :1] * e1 + ref[:, 1:] * e2
    return pts, w * area2


def segment_rule(a, b, n=5):
    x, w = gauss_1d(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    return a + x[:, None] * (b - a), w * length
