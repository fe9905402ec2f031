"""Lagrange shape functions on the unit reference square.

Q2 functions are ordered ``b * 3 + a`` for the node at ``(a / 2, b / 2)``,
Q1 functions ``b * 2 + a`` for the node at ``(a, b)``.
"""
import numpy as np


def _q2_1d(s):
    return np.stack([2 * (s - 0.5) * (s - 1), -4 * s * (s - 1), 2 * s * (s - 0.5)], axis=-1)


def _q2_1d_deriv(s):
    return np.stack([4 * s - 3, 4 - 8 * s, 4 * s - 1], axis=-1)


def _q1_1d(s):
    return np.stack([1 - s, s], axis=-1)


def _q1_1d_deriv(s):
    return np.stack([-np.ones_like(s), np.ones_like(s)], axis=-1)


class ShapeFunctionSet:
    """Tensor-product Lagrange family; ``degree`` 1 (Q1) or 2 (Q2)."""

    def __init__(self, degree):
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree}")
        self.degree = degree
        self.n = (degree + 1) ** 2
        if degree == 2:
            self._f, self._df = _q2_1d, _q2_1d_deriv
        else:
            self._f, self._df = _q1_1d, _q1_1d_deriv

    @property
    def family(self):
        return "Q2" if self.degree == 2 else "Q1"

    def nodes(self):
        s = np.linspace(0.0, 1.0, self.degree + 1)
        return np.array([(a, b) for b in s for a in s])

    def values(self, xref):
        """Values at reference points ``xref[..., 2]`` -> ``(..., n)``."""
        xref = np.asarray(xref, dtype=float)
        fx = self._f(xref[..., 0])
        fy = self._f(xref[..., 1])
        return (fy[..., :, None] * fx[..., None, :]).reshape(xref.shape[:-1] + (self.n,))

    def gradients(self, xref, h=1.0):
        """Physical gradients on a cell of size ``h`` -> ``(..., n, 2)``."""
        xref = np.asarray(xref, dtype=float)
        fx, fy = self._f(xref[..., 0]), self._f(xref[..., 1])
        dx, dy = self._df(xref[..., 0]), self._df(xref[..., 1])
        shape = xref.shape[:-1] + (self.n,)
        gx = (fy[..., :, None] * dx[..., None, :]).reshape(shape)
        gy = (dy[..., :, None] * fx[..., None, :]).reshape(shape)
        return np.stack([gx, gy], axis=-1) / h


Q1 = ShapeFunctionSet(1)
Q2 = ShapeFunctionSet(2)
