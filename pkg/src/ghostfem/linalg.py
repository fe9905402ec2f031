"""Sparse storage helpers, direct solves and the largest generalized eigenvalue."""
from __future__ import annotations

import logging
import os
import tempfile
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergenceError, SingularMatrixError

log = logging.getLogger(__name__)


def from_triplets(rows, cols, vals, shape):
    """Compressed sparse rows from triplets; duplicates are summed."""
    A = sp.coo_matrix((np.asarray(vals, float), (np.asarray(rows), np.asarray(cols))), shape=shape)
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


class Factorization:
    """Sparse LU (SuperLU) of a square matrix.

    The saddle-point matrices have a symmetric pattern and a dominant
    diagonal, so a minimum-degree ordering on ``A + A^T`` with threshold
    partial pivoting that prefers the diagonal keeps the fill low.
    """

    def __init__(self, A, names=None, pivot_threshold=1e-3):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix is not square: {A.shape}")
        self.shape = A.shape
        self.nnz = A.nnz
        t0 = time.perf_counter()
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=pivot_threshold,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            row = _singular_row(A)
            label = names(row) if (names is not None and row is not None) else row
            raise SingularMatrixError(f"singular matrix ({exc}); first empty/zero pivot at dof {label}",
                                      row=row) from exc
        self.factor_seconds = time.perf_counter() - t0
        self.fill = (self._lu.L.nnz + self._lu.U.nnz) / max(A.nnz, 1)
        self._A = A

    def solve(self, b):
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("non-finite solution from factorization")
        return x

    def residual(self, x, b):
        """Relative residual ``|Ax - b| / (|A| |x| + |b|)`` in the max norm."""
        r = self._A @ x - b
        scale = abs(self._A).max() * np.abs(x).max() + np.abs(b).max()
        return float(np.abs(r).max() / scale) if scale > 0 else 0.0


def _singular_row(A):
    A = sp.csr_matrix(A)
    empty = np.flatnonzero(np.diff(A.indptr) == 0)
    if len(empty):
        return int(empty[0])
    Ac = sp.csc_matrix(A)
    empty = np.flatnonzero(np.diff(Ac.indptr) == 0)
    if len(empty):
        return int(empty[0])
    return None


def solve(A, b):
    fac = Factorization(A)
    return fac.solve(b)


def max_generalized_eig(K, M, nullspace=None, dense_limit=4000, tol=1e-10, max_iter=5000):
    """Largest ``Lambda`` of ``K v = Lambda M v`` for symmetric positive semidefinite
    ``K`` and ``M`` with a common kernel spanned by the columns of ``nullspace``.

    Rows/columns where ``K`` vanishes identically are eliminated exactly by a
    Schur complement of ``M``, so the result is the maximum over the full
    space.  Returns ``(Lambda, v)`` with ``v`` M-normalised.
    """
    K = sp.csr_matrix(K)
    M = sp.csr_matrix(M)
    n = K.shape[0]
    Z = None if nullspace is None else np.asarray(nullspace, float).reshape(n, -1)
    touched = np.zeros(n, dtype=bool)
    touched[np.unique(K.nonzero()[0])] = True
    B = np.flatnonzero(touched)
    I = np.flatnonzero(~touched)
    if len(B) == 0:
        return 0.0, np.zeros(n)
    KBB = K[B][:, B].toarray()
    MBB = M[B][:, B]
    if len(I):
        MII = sp.csc_matrix(M[I][:, I])
        MIB = M[I][:, B].toarray()
        lu = spla.splu(MII)
        X = lu.solve(MIB)
        S = MBB.toarray() - M[B][:, I] @ X
    else:
        X = np.zeros((0, len(B)))
        S = MBB.toarray()
    S = 0.5 * (S + S.T)
    if Z is not None:
        # kernel shift: K vanishes on Z, so adding Z Z^T leaves the maximum intact
        ZB = Z[B]
        S = S + ZB @ ZB.T * (np.abs(S).max() / max(np.abs(ZB).max() ** 2, 1e-300))
    if len(B) <= dense_limit:
        try:
            w, V = sla.eigh(KBB, S, subset_by_index=[len(B) - 1, len(B) - 1])
            lam, vB = float(w[-1]), V[:, -1]
        except sla.LinAlgError:
            lam, vB = _truncated_pencil(KBB, S)
    else:
        lam, vB = _power_iteration(KBB, S, tol, max_iter)
    v = np.zeros(n)
    v[B] = vB
    if len(I):
        v[I] = -X @ vB
    mn = float(v @ (M @ v))
    if mn > 0:
        v /= np.sqrt(mn)
    return lam, v


def _truncated_pencil(K, S, rtol=1e-13):
    # S is singular to working precision (nearly empty cut cells): drop its
    # numerical kernel, i.e. the infinite eigenvalues, and solve on the range
    d, Q = np.linalg.eigh(S)
    keep = d > rtol * d.max()
    log.warning("mass pencil singular to working precision; dropped %d of %d directions",
                int((~keep).sum()), len(d))
    T = Q[:, keep] / np.sqrt(d[keep])
    w, V = np.linalg.eigh(T.T @ K @ T)
    return float(w[-1]), T @ V[:, -1]


def _power_iteration(K, S, tol, max_iter):
    try:
        c, low = sla.cho_factor(S)
    except sla.LinAlgError:
        return _truncated_pencil(K, S)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(K.shape[0])
    lam = 0.0
    for k in range(max_iter):
        w = sla.cho_solve((c, low), K @ v)
        nrm = np.sqrt(w @ (S @ w))
        if nrm == 0:
            return 0.0, w
        v = w / nrm
        new = float(v @ (K @ v))
        if abs(new - lam) <= tol * abs(new):
            return new, v
        lam = new
    raise NonConvergenceError("power iteration for the largest generalized eigenvalue did not converge",
                              iterations=max_iter, residual=abs(new - lam))


def write_coo(matrix, path):
    """Write ``row col value`` lines (0-based, 17 significant digits) atomically."""
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="\n") as fh:
        fh.write(f"% {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")
    os.replace(tmp, path)


def read_coo(path):
    with open(path) as fh:
        header = fh.readline().split()
        nr, nc = int(header[1]), int(header[2])
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((nr, nc))
    return from_triplets(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2], (nr, nc))
