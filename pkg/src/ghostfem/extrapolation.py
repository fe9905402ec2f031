"""PDE-based extension of nodal fields across the immersed boundary.

A field known on the active nodes of one snapshot is extended along the
normals ``n = grad(phi)/|grad(phi)|`` into the obstacle by the cascade

    u_nn:  d/dtau u_nn + chi n.grad u_nn = 0
    u_n:   d/dtau u_n  + chi (n.grad u_n - u_nn) = 0
    u:     d/dtau u    + chi (n.grad u - u_n) = 0

where ``chi`` is 0 on the known nodes and 1 elsewhere.  Everything here
works on the full Q2 node lattice of the background grid, with global ids
``j (2 Nx + 1) + i``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import quadrature
from .errors import ConfigError
from .fem.basis import Q2
from .mesh import CartesianGrid, MeshSnapshot

log = logging.getLogger(__name__)

DERIVATIVE_METHODS = ("lumped", "nodal")
SOLVERS = ("direct", "pseudo_time")


@dataclass(frozen=True)
class BandField:
    """Indicator, band and normals for one extension problem."""

    grid: CartesianGrid
    chi: np.ndarray        # 1 where the field is unknown
    band: np.ndarray       # unknown nodes within ``width`` of the boundary
    normal: np.ndarray     # (n_nodes, 2), unit on the band
    width: float
    cells: np.ndarray      # background cells touching the band
    deriv_cells: np.ndarray

    @property
    def known(self):
        return self.chi == 0

    @property
    def n_band(self):
        return int(self.band.sum())


def build_band(mesh: MeshSnapshot, width=None, t=None) -> BandField:
    """Band of the snapshot ``mesh``.

    The known nodes are those of its internal cells.  Ghost values and the
    values in cut cells are not trusted: a node whose support barely meets
    the fluid is weakly controlled by the discrete problem.
    """
    grid = mesh.grid
    h = grid.h
    width = 3 * h if width is None else float(width)
    if width <= 0:
        raise ConfigError("extension band width must be positive", "extrapolation.band")
    t = mesh.t if t is None else t
    X, Y = grid.v_coords()
    x, y = X.ravel(), Y.ravel()
    gx, gy = mesh.ls.grad(x, y, t)
    g = np.hypot(gx, gy)
    ok = g > 1e-12
    normal = np.zeros((len(x), 2))
    normal[ok, 0] = gx[ok] / g[ok]
    normal[ok, 1] = gy[ok] / g[ok]
    nodes = grid.cell_v_nodes()
    internal = np.asarray(mesh.active_cells)[~np.asarray(mesh.is_cut)]
    chi = np.ones(len(x), dtype=np.int8)
    chi[nodes[internal].ravel()] = 0
    dist = np.full(len(x), np.inf)
    cand = np.flatnonzero(chi == 1)
    pts = np.stack([x[cand], y[cand]], axis=-1)
    dist[cand], closest = distance_to_segments(pts, mesh, return_points=True)
    # where grad(phi) vanishes (e.g. the centre of an ellipse) take the
    # direction away from the nearest boundary point instead
    bad = cand[~ok[cand] & (dist[cand] > 0)]
    if len(bad):
        sel = ~ok[cand] & (dist[cand] > 0)
        d = (pts[sel] - closest[sel]) / dist[bad][:, None]
        side = np.where(mesh.ls.phi(x[bad], y[bad], t) >= 0, 1.0, -1.0)
        normal[bad] = d * side[:, None]
        ok[bad] = True
    band = (chi == 1) & (dist <= width) & ok
    cells = np.flatnonzero(band[nodes].any(axis=1))
    return BandField(grid, chi, band, normal, width, cells, internal)


def distance_to_segments(points, mesh: MeshSnapshot, chunk=4096, return_points=False):
    """Euclidean distance from ``points`` (n, 2) to the polygonal boundary of ``mesh``.

    With ``return_points`` also returns the closest boundary points.
    """
    points = np.asarray(points, float).reshape(-1, 2)
    out = np.full(len(points), np.inf)
    closest = np.full((len(points), 2), np.nan)
    if mesh.cut_geometry:
        a = np.array([g.segment.a for g in mesh.cut_geometry])
        b = np.array([g.segment.b for g in mesh.cut_geometry])
        ab = b - a
        ll = np.maximum((ab ** 2).sum(axis=1), 1e-300)
        for s in range(0, len(points), chunk):
            p = points[s:s + chunk, None, :]
            tt = np.clip(((p - a) * ab).sum(axis=-1) / ll, 0.0, 1.0)
            foot = a + tt[..., None] * ab
            d2 = ((p - foot) ** 2).sum(axis=-1)
            k = d2.argmin(axis=1)
            rows = np.arange(len(k))
            out[s:s + chunk] = np.sqrt(d2[rows, k])
            closest[s:s + chunk] = foot[rows, k]
    if return_points:
        return out, closest
    return out


@dataclass(frozen=True)
class DirectionalDerivatives:
    u_n: np.ndarray
    u_nn: np.ndarray


class _CellOps:
    """Cell-local Q2 data on a set of full background cells."""

    def __init__(self, grid: CartesianGrid, cells, normal_fn, n_gauss=3):
        self.grid = grid
        self.cells = np.asarray(cells, dtype=np.int64)
        h = grid.h
        ref, w = quadrature.gauss_square(n_gauss)
        self.v = Q2.values(ref)                    # (q, 9)
        self.dv = Q2.gradients(ref, h)             # (q, 9, 2)
        self.w = w * h * h
        self.nodes = grid.cell_v_nodes()[self.cells]
        origin = grid.cell_origin()[self.cells]
        self.xq = origin[:, None, :] + h * ref[None]
        nrm = normal_fn(self.xq[..., 0], self.xq[..., 1])
        self.nq = np.stack(nrm, axis=-1)           # (c, q, 2)


def _nodal_normal_fn(ls, t):
    def fn(x, y):
        gx, gy = ls.grad(x, y, t)
        g = np.hypot(gx, gy)
        g = np.where(g > 1e-12, g, 1.0)
        return gx / g, gy / g
    return fn


def directional_derivatives(u, band: BandField, mesh: MeshSnapshot, method="nodal"):
    """``u_n = n.grad u`` and ``u_nn = n.grad u_n`` at the known nodes.

    ``u`` is a field on the full node lattice (values off the known nodes
    are ignored).  ``lumped`` is the row-sum lumped L2 projection; ``nodal``
    averages the cell gradients evaluated at each node, which is exact at
    the nodes for fields in the Q2 space.
    """
    if method not in DERIVATIVE_METHODS:
        raise ConfigError(f"unknown derivative method {method!r}", "extrapolation.derivatives")
    grid = band.grid
    nn = band.normal.shape[0]
    cells = band.deriv_cells
    nodes = grid.cell_v_nodes()[cells]
    if method == "lumped":
        ops = _CellOps(grid, cells, _nodal_normal_fn(mesh.ls, mesh.t))
        wv = ops.w[:, None] * ops.v                                # (q, 9)
        mass = np.bincount(nodes.ravel(), weights=np.broadcast_to(wv.sum(0), nodes.shape).ravel(),
                           minlength=nn)

        def deriv(f):
            fe = f[nodes]                                          # (c, 9)
            g = np.einsum("qid,ci->cqd", ops.dv, fe)
            dn = np.einsum("cqd,cqd->cq", g, ops.nq)
            r = np.einsum("cq,qi->ci", dn, wv)
            out = np.bincount(nodes.ravel(), weights=r.ravel(), minlength=nn)
            known = mass > 0
            out[known] /= mass[known]
            return out
    else:
        ref = Q2.nodes()
        dv = Q2.gradients(ref, grid.h)                             # (9 nodes, 9 fns, 2)
        count = np.bincount(nodes.ravel(), minlength=nn).astype(float)
        nrm = band.normal[nodes]                                   # (c, 9, 2)

        def deriv(f):
            fe = f[nodes]
            g = np.einsum("kid,ci->ckd", dv, fe)
            dn = np.einsum("ckd,ckd->ck", g, nrm)
            out = np.bincount(nodes.ravel(), weights=dn.ravel(), minlength=nn)
            known = count > 0
            out[known] /= count[known]
            return out

    u = np.asarray(u, dtype=float)
    u_n = deriv(np.where(band.known, u, 0.0))
    u_nn = deriv(u_n)
    return DirectionalDerivatives(u_n, u_nn)


class BandTransport:
    """Galerkin operator of ``n.grad u = s`` restricted to the band rows.

    The unknowns are the band nodes plus the unknown nodes of the cells
    touching the band (one layer of padding whose values are discarded); all
    those cells are integrated in full.  ``supg > 0`` adds the streamline test-function
    term ``supg * h * n.grad w``.
    """

    def __init__(self, band: BandField, ls, t, supg=0.5):
        grid = band.grid
        self.band = band
        nn = band.normal.shape[0]
        ops = _CellOps(grid, band.cells, _nodal_normal_fn(ls, t))
        nodes = ops.nodes                                          # (c, 9)
        work = np.zeros(nn, dtype=bool)
        work[nodes.ravel()] = True
        work &= band.chi == 1
        self.rows = np.flatnonzero(work)
        adv = np.einsum("cqd,qjd->cqj", ops.nq, ops.dv)            # n . grad phi_j
        test = np.broadcast_to(ops.v[None], adv.shape)
        if supg > 0:
            test = test + supg * grid.h * adv
        w = ops.w[None, :, None]
        C = np.einsum("cqi,cqj->cij", test * w, adv)
        Mt = np.einsum("cqi,qj->cij", test * w, ops.v)
        rr = np.broadcast_to(nodes[:, :, None], C.shape).ravel()
        cc = np.broadcast_to(nodes[:, None, :], C.shape).ravel()
        self.C = sp.csr_matrix((C.ravel(), (rr, cc)), shape=(nn, nn))
        self.Ms = sp.csr_matrix((Mt.ravel(), (rr, cc)), shape=(nn, nn))
        self.Cr = self.C[self.rows].tocsr()
        self.Mr = self.Ms[self.rows].tocsr()
        self._lu = None
        self._step_lu = {}

    def residual(self, u, source):
        r = self.Cr @ u
        if source is not None:
            r = r - self.Mr @ source
        return r

    def pseudo_step(self, u, source, dtau):
        """One backward-Euler pseudo-time step ``(M/dtau + C) du = -(C u - M s)``."""
        rows = self.rows
        lu = self._step_lu.get(dtau)
        if lu is None:
            A = self.Mr[:, rows] / dtau + self.Cr[:, rows]
            lu = self._step_lu[dtau] = spla.splu(A.tocsc())
        du = lu.solve(-self.residual(u, source))
        out = u.copy()
        out[rows] += du
        return out, du

    def solve_steady(self, u, source):
        """Direct solve of the band rows with the known values as inflow data."""
        rows = self.rows
        if self._lu is None:
            self._lu = spla.splu(self.Cr[:, rows].tocsc())
        fixed = u.copy()
        fixed[rows] = 0.0
        rhs = -(self.Cr @ fixed)
        if source is not None:
            rhs = rhs + self.Mr @ source
        out = u.copy()
        out[rows] = self._lu.solve(rhs)
        return out


def transport_to_steady(field, source, band: BandField, ls, t, dtau=None, tol=None,
                        max_iter=None, supg=0.5, solver="direct", operator=None,
                        keep_padding=False):
    """Steady state of ``d/dtau u + chi (n.grad u - source) = 0`` on the band.

    ``direct`` solves the steady Galerkin system at once; ``pseudo_time``
    marches it with backward Euler steps ``dtau`` until the band update is
    below ``tol`` (same limit).

    Returns ``(u, info)``.  Known nodes are returned bitwise unchanged and
    nodes outside the band keep their input values unless ``keep_padding``.
    """
    if solver not in SOLVERS:
        raise ConfigError(f"unknown extension solver {solver!r}", "extrapolation.solver")
    h = band.grid.h
    u = np.array(field, dtype=float, copy=True)
    if band.n_band == 0:
        return u, {"iterations": 0, "update": 0.0, "converged": True}
    op = operator or BandTransport(band, ls, t, supg)
    rows = op.rows
    dtau = 0.25 * h if dtau is None else float(dtau)
    if not dtau > 0:
        raise ConfigError(f"pseudo time step must be positive, got {dtau}", "extrapolation.dtau")
    known = band.known
    scale = np.abs(u[known]).max() if known.any() else 0.0
    tol = 1e-8 * (1 + scale) if tol is None else float(tol)
    if max_iter is None:
        max_iter = math.ceil(band.width / dtau) * 5
    if solver == "direct":
        out = op.solve_steady(u, source)
        info = {"iterations": 1, "update": 0.0, "converged": True}
    else:
        out = u
        upd = np.inf
        k = 0
        inband = band.band[rows]
        for k in range(1, max_iter + 1):
            out, du = op.pseudo_step(out, source, dtau)
            upd = float(np.abs(du[inband]).max()) if inband.any() else 0.0
            if not np.isfinite(upd) or upd <= tol:
                break
        converged = bool(upd <= tol)
        if not converged and upd > 10 * tol:
            log.warning("extension did not reach steady state: update %.3e after %d iterations",
                        upd, k)
        info = {"iterations": k, "update": upd, "converged": converged}
    if not keep_padding:
        outside = ~band.band & ~known
        out[outside] = u[outside]
    out[known] = u[known]
    return out, info


def extrapolate_quadratic(u, band: BandField, mesh: MeshSnapshot, method="nodal",
                          solver="direct", dtau=None, tol=None, supg=0.5, operator=None):
    """Quadratic extension of ``u`` (full lattice) from the known nodes into the band."""
    op = operator or BandTransport(band, mesh.ls, mesh.t, supg)
    u = np.array(u, dtype=float, copy=True)
    d = directional_derivatives(u, band, mesh, method)
    kw = dict(dtau=dtau, tol=tol, supg=supg, solver=solver, operator=op)
    ls, t = mesh.ls, mesh.t
    u_nn, _ = transport_to_steady(_seed(d.u_nn, op), None, band, ls, t, keep_padding=True, **kw)
    u_n, _ = transport_to_steady(_seed(d.u_n, op), u_nn, band, ls, t, keep_padding=True, **kw)
    out, _ = transport_to_steady(_seed(u, op), u_n, band, ls, t, keep_padding=True, **kw)
    outside = ~band.band & ~band.known
    out[outside] = u[outside]
    return out


def _seed(f, op: BandTransport):
    """Zero initial values on the transport unknowns."""
    g = np.array(f, dtype=float, copy=True)
    g[op.rows] = 0.0
    return g


# ----------------------------------------------------------------------
# state transfer between snapshots

def to_lattice(values, mesh: MeshSnapshot, fill=0.0):
    """Scatter a velocity-dof vector of ``mesh`` onto the full Q2 lattice."""
    out = np.full(mesh.grid.v_shape[0] * mesh.grid.v_shape[1], fill, dtype=float)
    out[mesh.nodes.v_nodes] = values
    return out


def pressure_to_lattice(p, mesh: MeshSnapshot, fill=0.0):
    """Bilinear interpolation of a pressure-dof vector onto the Q2 lattice."""
    grid = mesh.grid
    npx, npy = grid.nx + 1, grid.ny + 1
    P = np.full(npx * npy, np.nan)
    P[mesh.nodes.p_nodes] = p
    P = P.reshape(npy, npx)
    ny2, nx2 = grid.v_shape
    Q = np.full((ny2, nx2), np.nan)
    Q[::2, ::2] = P
    Q[::2, 1::2] = 0.5 * (P[:, :-1] + P[:, 1:])
    Q[1::2, ::2] = 0.5 * (P[:-1, :] + P[1:, :])
    Q[1::2, 1::2] = 0.25 * (P[:-1, :-1] + P[1:, :-1] + P[:-1, 1:] + P[1:, 1:])
    Q = Q.ravel()
    # a value is known where it is a pressure node or lies in a cell with all
    # four pressure corners active
    return np.where(np.isfinite(Q), Q, fill)


def lattice_pressure_nodes(grid: CartesianGrid):
    """Q2 lattice ids of the pressure nodes, in pressure-node order."""
    npx, npy = grid.nx + 1, grid.ny + 1
    j, i = np.divmod(np.arange(npx * npy), npx)
    return 2 * j * (2 * grid.nx + 1) + 2 * i


def extend_state(u, p, old: MeshSnapshot, new: MeshSnapshot, width=None, **kw):
    """Carry ``(u, p)`` from ``old`` onto the active nodes of ``new``.

    Returns ``(u_new, p_new, report)``; raises ``BandViolationError`` when a
    node needed by ``new`` is neither known nor inside the band.
    """
    from .errors import BandViolationError

    band = build_band(old, width)
    need = np.zeros(len(band.chi), dtype=bool)
    need[new.nodes.v_nodes] = True
    missing = need & (band.chi == 1) & ~band.band
    if missing.any():
        X, Y = new.grid.v_coords()
        x, y = X.ravel()[missing], Y.ravel()[missing]
        dist = float(distance_to_segments(np.stack([x, y], axis=-1), old).max())
        raise BandViolationError(
            f"{int(missing.sum())} newly active nodes lie outside the extension band "
            f"(max distance {dist:.3g} > {band.width:.3g}); reduce the time step",
            distance=dist, band=band.width)
    fresh = need & (band.chi == 1)
    before = np.zeros(len(band.chi), dtype=bool)
    before[old.nodes.v_nodes] = True
    nv = old.n_v
    kw.setdefault("operator", BandTransport(band, old.ls, old.t, kw.get("supg", 0.5)))
    comps = []
    for c in range(2):
        f = extrapolate_quadratic(to_lattice(u[c * nv:(c + 1) * nv], old), band, old, **kw)
        comps.append(f[new.nodes.v_nodes])
    pl = extrapolate_quadratic(pressure_to_lattice(p, old), band, old, **kw)
    pid = lattice_pressure_nodes(new.grid)[new.nodes.p_nodes]
    pbefore = np.zeros(len(band.chi), dtype=bool)
    pbefore[lattice_pressure_nodes(old.grid)[old.nodes.p_nodes]] = True
    report = {"new_velocity_nodes": int((need & ~before).sum()),
              "new_pressure_nodes": int((~pbefore[pid]).sum()),
              "extended_velocity_nodes": int(fresh.sum()),
              "band_nodes": band.n_band}
    return np.concatenate(comps), pl[pid], report
