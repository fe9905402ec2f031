"""Assembly of the semi-discrete Navier-Stokes operators on an active mesh.

Unknown layout is ``[u_x (D_v), u_y (D_v), p (D_p)]``.  The weak form is

    (du/dt, w) + nu a_h(u, w) + b_h(p, w) + c_h(u, u, w) = (f, w) + nu l_h(g; w)
    b_h(q, u) = (q n, g)_Gamma

with ``a_h`` the symmetric Nitsche form on the Dirichlet part of the
boundary and ``l_h(g; w) = lambda (g, w) - (g, dw/dn)``.  Walls of kind
``do_nothing`` carry no boundary term at all.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError
from ..geometry import project_to_boundary
from ..linalg import write_coo
from ..mesh import MeshSnapshot, QuadGroup
from .basis import Q1, Q2

WALL_KINDS = ("dirichlet", "do_nothing")
SBM_MODES = ("taylor", "project", "off")


@dataclass
class BoundaryData:
    """Dirichlet data and wall kinds of a scenario.

    ``body(x, y, t)`` gives the velocity on the immersed boundary,
    ``wall(x, y, t, tag)`` on the box walls (tag indexes ``mesh.WALLS``).
    Missing callbacks mean homogeneous data.
    """

    body: Optional[Callable] = None
    wall: Optional[Callable] = None
    wall_kinds: Sequence[str] = ("dirichlet",) * 4
    sbm: str = "off"

    def __post_init__(self):
        self.wall_kinds = tuple(self.wall_kinds)
        if len(self.wall_kinds) != 4 or any(k not in WALL_KINDS for k in self.wall_kinds):
            raise ConfigError(f"wall kinds must be 4 of {WALL_KINDS}", "physics.walls")
        if self.sbm not in SBM_MODES:
            raise ConfigError(f"unknown boundary-data mode {self.sbm!r}", "physics.sbm")

    @property
    def is_homogeneous(self):
        return self.body is None and self.wall is None


class GroupData:
    """Basis values, gradients and dof maps at the points of one quadrature group."""

    def __init__(self, mesh: MeshSnapshot, group: QuadGroup, boundary=False):
        self.group = group
        self.w = group.w
        self.x = group.x
        self.v = Q2.values(group.xref)
        self.dv = Q2.gradients(group.xref, mesh.h)
        self.p = Q1.values(group.xref)
        self.dofs_v = np.asarray(mesh.cell_v[group.cell])
        self.dofs_p = np.asarray(mesh.cell_p[group.cell])
        self.normal = group.normal
        self.tag = group.tag
        if boundary:
            # normal derivatives of the velocity basis
            self.dn = np.einsum("nqid,nd->nqi", self.dv, group.normal)

    def __len__(self):
        return len(self.group)


def _cache(mesh):
    c = mesh.__dict__.get("_fem_cache")
    if c is None:
        c = {}
        mesh.__dict__["_fem_cache"] = c
    return c


def volume_data(mesh):
    c = _cache(mesh)
    if "volume" not in c:
        c["volume"] = [GroupData(mesh, g) for g in mesh.volume_groups()]
    return c["volume"]


def boundary_data(mesh, wall_kinds=("dirichlet",) * 4):
    """Dirichlet boundary groups: cut segments plus the walls of kind ``dirichlet``."""
    c = _cache(mesh)
    key = ("boundary", tuple(wall_kinds))
    if key not in c:
        groups = []
        if len(mesh.bnd_cut):
            groups.append(("body", GroupData(mesh, mesh.bnd_cut, boundary=True)))
        walls = mesh.bnd_wall
        if len(walls):
            keep = np.array([wall_kinds[t] == "dirichlet" for t in walls.tag], dtype=bool)
            if keep.any():
                groups.append(("wall", GroupData(mesh, walls.subset(keep), boundary=True)))
        c[key] = groups
    return c[key]


def _scatter(rdofs, cdofs, blocks, shape):
    n, k = rdofs.shape
    m = cdofs.shape[1]
    rows = np.broadcast_to(rdofs[:, :, None], (n, k, m)).ravel()
    cols = np.broadcast_to(cdofs[:, None, :], (n, k, m)).ravel()
    return sp.csr_matrix((np.ravel(blocks), (rows, cols)), shape=shape)


def _scatter_vec(dofs, blocks, n):
    return np.bincount(dofs.ravel(), weights=np.ravel(blocks), minlength=n)


def _wprod(w, a, b):
    # sum_q w a_i b_j
    return np.einsum("nqi,nqj->nij", a * w[..., None], b, optimize=True)


def assemble_mass(mesh: MeshSnapshot):
    """Scalar Q2 mass matrix ``M_ij = (phi_i, phi_j)`` over the fluid polygons."""
    n = mesh.n_v
    M = sp.csr_matrix((n, n))
    for d in volume_data(mesh):
        M = M + _scatter(d.dofs_v, d.dofs_v, _wprod(d.w, d.v, d.v), (n, n))
    return M


def assemble_stiffness(mesh: MeshSnapshot):
    n = mesh.n_v
    K = sp.csr_matrix((n, n))
    for d in volume_data(mesh):
        blk = np.einsum("nqid,nqjd->nij", d.dv * d.w[..., None, None], d.dv, optimize=True)
        K = K + _scatter(d.dofs_v, d.dofs_v, blk, (n, n))
    return K


def _shifted_trace(mesh, kind, d, sbm):
    """``phi_i + grad(phi_i) . (z - x)``: the trace extrapolated to the closest point."""
    if kind != "body" or sbm != "taylor":
        return d.v
    c = _cache(mesh)
    if "shifted_trace" not in c:
        dist = _boundary_points(mesh, kind, d, sbm) - d.x
        c["shifted_trace"] = d.v + np.einsum("nqid,nqd->nqi", d.dv, dist)
    return c["shifted_trace"]


def assemble_nitsche(mesh: MeshSnapshot, lam, wall_kinds=("dirichlet",) * 4, sbm="off"):
    """Boundary part ``-(du/dn, w) - (Su, dw/dn) + lam (Su, Sw)`` on the Dirichlet boundary.

    ``S`` is the identity except in ``taylor`` mode, where on the immersed
    boundary it is the first-order Taylor extrapolation to the closest point.
    """
    n = mesh.n_v
    B = sp.csr_matrix((n, n))
    for kind, d in boundary_data(mesh, wall_kinds):
        tr = _shifted_trace(mesh, kind, d, sbm)
        blk = -_wprod(d.w, d.v, d.dn) - _wprod(d.w, d.dn, tr) + lam * _wprod(d.w, tr, tr)
        B = B + _scatter(d.dofs_v, d.dofs_v, blk, (n, n))
    return B


def _boundary_points(mesh, kind, d, sbm):
    """Points where the Dirichlet data is sampled (closest points on the true boundary)."""
    if kind != "body" or sbm == "off":
        return d.x
    c = _cache(mesh)
    if "projected" not in c:
        pts = d.x.reshape(-1, 2)
        res = project_to_boundary(mesh.ls, pts, mesh.t, mesh.h)
        c["projected"] = res.z.reshape(d.x.shape)
    return c["projected"]


def _eval_data(bc: BoundaryData, kind, d, pts, t):
    x, y = pts[..., 0], pts[..., 1]
    if kind == "body":
        if bc.body is None:
            return np.zeros_like(x), np.zeros_like(x)
        return bc.body(x, y, t)
    if bc.wall is None:
        return np.zeros_like(x), np.zeros_like(x)
    tag = np.broadcast_to(d.tag[:, None], x.shape)
    return bc.wall(x, y, t, tag)


def boundary_vectors(mesh: MeshSnapshot, bc: BoundaryData, nu, lam, t):
    """Right-hand sides built from the Dirichlet data.

    Returns ``(penalty, consistency, continuity)``: ``nu lam (g, phi_i)``,
    ``-nu (g, dphi_i/dn)`` (both per velocity component, length ``2 D_v``)
    and ``(psi_j n, g)`` (length ``D_p``).
    """
    nv, npr = mesh.n_v, mesh.n_p
    pen = np.zeros(2 * nv)
    con = np.zeros(2 * nv)
    cont = np.zeros(npr)
    for kind, d in boundary_data(mesh, bc.wall_kinds):
        pts = _boundary_points(mesh, kind, d, bc.sbm)
        gx, gy = _eval_data(bc, kind, d, pts, t)
        gx = np.broadcast_to(gx, d.w.shape)
        gy = np.broadcast_to(gy, d.w.shape)
        tr = _shifted_trace(mesh, kind, d, bc.sbm)
        for c, g in enumerate((gx, gy)):
            wg = d.w * g
            pen[c * nv:(c + 1) * nv] += nu * lam * _scatter_vec(
                d.dofs_v, np.einsum("nq,nqi->ni", wg, tr), nv)
            con[c * nv:(c + 1) * nv] -= nu * _scatter_vec(
                d.dofs_v, np.einsum("nq,nqi->ni", wg, d.dn), nv)
        gn = gx * d.normal[:, None, 0] + gy * d.normal[:, None, 1]
        cont += _scatter_vec(d.dofs_p, np.einsum("nq,nqi->ni", d.w * gn, d.p), npr)
    return pen, con, cont


def assemble_viscous_nitsche(mesh: MeshSnapshot, nu, lam, bc: Optional[BoundaryData] = None, t=0.0):
    """Viscous Nitsche matrix ``nu a_h`` (scalar, shared by both components) and
    the boundary-data vectors of :func:`boundary_vectors`."""
    if not lam > 0:
        raise ConfigError(f"penalty must be positive, got {lam!r}", "penalty.lambda")
    bc = bc or BoundaryData()
    A = nu * (assemble_stiffness(mesh) + assemble_nitsche(mesh, lam, bc.wall_kinds, bc.sbm))
    return A, boundary_vectors(mesh, bc, nu, lam, t)


def assemble_convection(mesh: MeshSnapshot, u):
    """Scalar advection matrix ``C_ij = ((u . grad) phi_j, phi_i)``."""
    nv = mesh.n_v
    u = np.asarray(u, dtype=float)
    if u.shape != (2 * nv,):
        raise ValueError(f"velocity vector has size {u.size}, expected {2 * nv}")
    C = sp.csr_matrix((nv, nv))
    for d in volume_data(mesh):
        ux = np.einsum("nqi,ni->nq", d.v, u[:nv][d.dofs_v])
        uy = np.einsum("nqi,ni->nq", d.v, u[nv:][d.dofs_v])
        adv = d.dv[..., 0] * ux[..., None] + d.dv[..., 1] * uy[..., None]
        C = C + _scatter(d.dofs_v, d.dofs_v, _wprod(d.w, d.v, adv), (nv, nv))
    return C


def assemble_pressure_coupling(mesh: MeshSnapshot, wall_kinds=("dirichlet",) * 4):
    """``G`` of shape ``(2 D_v, D_p)`` with ``G^c_ij = b_h(psi_j, phi_i e_c)``."""
    nv, npr = mesh.n_v, mesh.n_p
    blocks = []
    for c in range(2):
        Gc = sp.csr_matrix((nv, npr))
        for d in volume_data(mesh):
            Gc = Gc - _scatter(d.dofs_v, d.dofs_p, _wprod(d.w, d.dv[..., c], d.p), (nv, npr))
        for _, d in boundary_data(mesh, wall_kinds):
            blk = _wprod(d.w, d.v * d.normal[:, None, None, c], d.p)
            Gc = Gc + _scatter(d.dofs_v, d.dofs_p, blk, (nv, npr))
        blocks.append(Gc)
    return sp.vstack(blocks, format="csr")


def pressure_boundary_weights(mesh: MeshSnapshot, wall_kinds=("dirichlet",) * 4):
    """``int_Gamma psi_j ds`` over the Dirichlet boundary."""
    out = np.zeros(mesh.n_p)
    for _, d in boundary_data(mesh, wall_kinds):
        out += _scatter_vec(d.dofs_p, np.einsum("nq,nqi->ni", d.w, d.p), mesh.n_p)
    return out


def assemble_body_force(mesh: MeshSnapshot, forcing, t):
    nv = mesh.n_v
    out = np.zeros(2 * nv)
    if forcing is None:
        return out
    for d in volume_data(mesh):
        fx, fy = forcing(d.x[..., 0], d.x[..., 1], t)
        for c, f in enumerate((fx, fy)):
            wf = d.w * np.broadcast_to(f, d.w.shape)
            out[c * nv:(c + 1) * nv] += _scatter_vec(d.dofs_v, np.einsum("nq,nqi->ni", wf, d.v), nv)
    return out


class FEMSystem:
    """All assembled operators of one mesh snapshot.

    The time independent matrices are built once; convection and the load
    vectors are rebuilt on demand.
    """

    def __init__(self, mesh: MeshSnapshot, nu, lam, bc: Optional[BoundaryData] = None,
                 forcing: Optional[Callable] = None):
        self.mesh = mesh
        self.nu = float(nu)
        self.lam = float(lam)
        self.bc = bc or BoundaryData()
        self.forcing = forcing
        self.M = assemble_mass(mesh)
        self.A, _ = assemble_viscous_nitsche(mesh, nu, lam, self.bc, mesh.t)
        self.G = assemble_pressure_coupling(mesh, self.bc.wall_kinds)
        self.GT = self.G.T.tocsr()
        # with no outflow boundary the pressure is defined up to a constant and
        # the continuity data must carry zero net flux
        self.closed = all(k == "dirichlet" for k in self.bc.wall_kinds)
        self.psi_boundary = pressure_boundary_weights(mesh, self.bc.wall_kinds)
        self.flux_defect = 0.0
        self._load_cache = {}

    @property
    def n_v(self):
        return self.mesh.n_v

    @property
    def n_p(self):
        return self.mesh.n_p

    def block_mass(self):
        return sp.block_diag([self.M, self.M], format="csr")

    def convection(self, u):
        return assemble_convection(self.mesh, u)

    def load(self, t):
        """``(F, g_hat)``: momentum right-hand side and continuity data at time ``t``."""
        key = float(t)
        hit = self._load_cache.get(key)
        if hit is not None:
            return hit
        pen, con, cont = boundary_vectors(self.mesh, self.bc, self.nu, self.lam, t)
        if self.closed and self.psi_boundary.sum() > 0:
            # remove the net flux by a uniform normal velocity on the boundary
            self.flux_defect = float(cont.sum())
            cont = cont - self.flux_defect * self.psi_boundary / self.psi_boundary.sum()
        F = assemble_body_force(self.mesh, self.forcing, t) + pen + con
        out = (F, cont)
        if len(self._load_cache) > 16:
            self._load_cache.clear()
        self._load_cache[key] = out
        return out

    def dump(self, directory):
        """Write ``M``, ``A`` and ``G`` as coordinate text files into ``directory``."""
        import os
        os.makedirs(directory, exist_ok=True)
        for name, mat in (("M", self.M), ("A", self.A), ("G", self.G)):
            write_coo(mat, os.path.join(directory, f"{name}.coo"))


def dump_coo(matrix, path):
    write_coo(matrix, path)
