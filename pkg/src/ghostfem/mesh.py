"""Cartesian background grid, cell/node classification and cut-cell quadrature.

Node numbering is row major (lexicographic in ``(y, x)``):

* velocity (Q2) nodes ``(i, j)``, ``0 <= i <= 2 Nx``, id ``j (2 Nx + 1) + i``
* pressure (Q1) nodes ``(I, J)``, ``0 <= I <= Nx``, id ``J (Nx + 1) + I``;
  pressure node ``(I, J)`` coincides with velocity node ``(2I, 2J)``.

Within a cell the 9 Q2 nodes are ordered ``b * 3 + a`` and the 4 Q1 nodes
``b * 2 + a`` for local offsets ``(a, b)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import quadrature
from .errors import AmbiguousCutError, ConfigError, EmptyDomainError
from .geometry import LevelSetField, intersect_cell

log = logging.getLogger(__name__)

INACTIVE, INTERNAL, CUT = 0, 1, 2

# counter-clockwise corner cycle k0..k3 as (a, b) offsets
CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
CORNER_Q2 = tuple(6 * b + 2 * a for a, b in CORNERS)
CORNER_Q1 = tuple(b * 2 + a for a, b in CORNERS)

WALLS = ("left", "right", "bottom", "top")
WALL_NORMALS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])

VOLUME_ORDER = 3     # Gauss points per direction on internal cells
TRIANGLE_ORDER = 5   # collapsed Gauss on cut-cell sub-triangles (degree 8)
SEGMENT_ORDER = 5    # Gauss points on boundary segments (degree 9)


@dataclass(frozen=True)
class CartesianGrid:
    x_min: float
    y_min: float
    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("cell counts must be positive", "grid.nx")
        if self.lx <= 0 or self.ly <= 0:
            raise ConfigError("box lengths must be positive", "grid.lx")
        hx, hy = self.lx / self.nx, self.ly / self.ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ConfigError(f"non-square cells (hx={hx!r}, hy={hy!r})", "grid")

    @property
    def h(self):
        return self.lx / self.nx

    @property
    def x_max(self):
        return self.x_min + self.lx

    @property
    def y_max(self):
        return self.y_min + self.ly

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def v_shape(self):
        return 2 * self.ny + 1, 2 * self.nx + 1

    @property
    def p_shape(self):
        return self.ny + 1, self.nx + 1

    def v_coords(self):
        """Velocity node coordinates as two ``(2Ny+1, 2Nx+1)`` arrays."""
        x = self.x_min + 0.5 * self.h * np.arange(2 * self.nx + 1)
        y = self.y_min + 0.5 * self.h * np.arange(2 * self.ny + 1)
        return np.meshgrid(x, y)

    def p_coords(self):
        x = self.x_min + self.h * np.arange(self.nx + 1)
        y = self.y_min + self.h * np.arange(self.ny + 1)
        return np.meshgrid(x, y)

    def cell_v_nodes(self):
        """Global Q2 node ids of every cell, shape ``(Ny * Nx, 9)``."""
        cj, ci = np.divmod(np.arange(self.n_cells), self.nx)
        nvx = 2 * self.nx + 1
        off = np.array([b * nvx + a for b in range(3) for a in range(3)])
        return (2 * cj * nvx + 2 * ci)[:, None] + off[None, :]

    def cell_p_nodes(self):
        cj, ci = np.divmod(np.arange(self.n_cells), self.nx)
        npx = self.nx + 1
        off = np.array([b * npx + a for b in range(2) for a in range(2)])
        return (cj * npx + ci)[:, None] + off[None, :]

    def cell_origin(self):
        cj, ci = np.divmod(np.arange(self.n_cells), self.nx)
        return np.stack([self.x_min + ci * self.h, self.y_min + cj * self.h], axis=-1)


def snap(nodal_phi, h, delta_snap=1e-2):
    """Push nodes with ``|phi| < delta_snap h`` to ``+delta_snap h`` (obstacle side)."""
    if delta_snap <= 0:
        raise ConfigError("snapping threshold must be positive", "grid.delta_snap")
    out = np.array(nodal_phi, dtype=float, copy=True)
    thr = delta_snap * h
    out[np.abs(out) < thr] = thr
    return out


def classify(grid: CartesianGrid, ls: LevelSetField, t=0.0, delta_snap=1e-2):
    """Tag every cell inactive/internal/cut from the snapped corner values.

    Returns ``(tags, nodal_phi)`` with ``tags`` of shape ``(Ny, Nx)`` and the
    snapped level set on the velocity node grid.
    """
    X, Y = grid.v_coords()
    phi = snap(ls.phi(X, Y, t), grid.h, delta_snap)
    corners = np.stack([phi[2 * b::2, 2 * a::2][: grid.ny, : grid.nx] for a, b in CORNERS])
    inside = corners < 0
    tags = np.full((grid.ny, grid.nx), CUT, dtype=np.int8)
    tags[inside.all(axis=0)] = INTERNAL
    tags[(~inside).all(axis=0)] = INACTIVE
    if not (tags != INACTIVE).any():
        raise EmptyDomainError("no active cells: the fluid domain does not meet the grid")
    return tags, phi


@dataclass
class NodeSets:
    """Active/internal/ghost node sets and the dof numbering."""

    v_nodes: np.ndarray      # global Q2 ids of active nodes, increasing
    p_nodes: np.ndarray
    v_index: np.ndarray      # global id -> dof index, or -1
    p_index: np.ndarray
    v_internal: np.ndarray   # bool per active velocity dof
    p_internal: np.ndarray

    @property
    def n_v(self):
        return len(self.v_nodes)

    @property
    def n_p(self):
        return len(self.p_nodes)

    @property
    def n_unknowns(self):
        return 2 * self.n_v + self.n_p

    @property
    def v_ghost(self):
        return ~self.v_internal

    @property
    def p_ghost(self):
        return ~self.p_internal


def build_node_sets(grid: CartesianGrid, tags, nodal_phi) -> NodeSets:
    active = (np.asarray(tags).ravel() != INACTIVE)
    nv = (2 * grid.nx + 1) * (2 * grid.ny + 1)
    npn = (grid.nx + 1) * (grid.ny + 1)
    v_mask = np.zeros(nv, dtype=bool)
    v_mask[grid.cell_v_nodes()[active].ravel()] = True
    p_mask = np.zeros(npn, dtype=bool)
    p_mask[grid.cell_p_nodes()[active].ravel()] = True
    v_nodes = np.flatnonzero(v_mask)
    p_nodes = np.flatnonzero(p_mask)
    v_index = np.full(nv, -1, dtype=np.int64)
    v_index[v_nodes] = np.arange(len(v_nodes))
    p_index = np.full(npn, -1, dtype=np.int64)
    p_index[p_nodes] = np.arange(len(p_nodes))
    phi = np.asarray(nodal_phi).ravel()
    phi_p = np.asarray(nodal_phi)[::2, ::2].ravel()
    return NodeSets(v_nodes, p_nodes, v_index, p_index, phi[v_nodes] < 0, phi_p[p_nodes] < 0)


@dataclass
class BoundarySegment:
    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray
    cell: int


@dataclass
class CutCellGeometry:
    segment: BoundarySegment
    polygon: np.ndarray          # (k, 2), counter-clockwise
    vol_points: np.ndarray
    vol_weights: np.ndarray
    surf_points: np.ndarray
    surf_weights: np.ndarray

    @property
    def area(self):
        return polygon_area(self.polygon)


def polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def fluid_polygon(corner_phis, corners):
    """Inside corners plus the edge crossings, walked counter-clockwise."""
    pts = []
    for i in range(4):
        p0, p1 = corner_phis[i], corner_phis[(i + 1) % 4]
        c0, c1 = np.asarray(corners[i], float), np.asarray(corners[(i + 1) % 4], float)
        if p0 < 0:
            pts.append(c0)
        if p0 * p1 < 0:
            theta = p0 / (p0 - p1)
            pts.append(theta * c1 + (1 - theta) * c0)
    return np.array(pts)


def cut_cell_geometry(cell, corners, corner_phis, ls: Optional[LevelSetField] = None, t=0.0,
                      n_tri=TRIANGLE_ORDER, n_seg=SEGMENT_ORDER) -> CutCellGeometry:
    """Polygon, straight boundary segment and quadrature of one cut cell.

    ``corners``/``corner_phis`` follow the counter-clockwise cycle k0..k3.
    """
    a, b = intersect_cell(corner_phis, corners)
    poly = fluid_polygon(corner_phis, corners)
    d = b - a
    length = float(np.hypot(*d))
    # outward normal of the CCW fluid polygon along its edge A -> B
    normal = np.array([d[1], -d[0]]) / length
    if ls is not None:
        mid = 0.5 * (a + b)
        gx, gy = ls.grad(mid[0], mid[1], t)
        if normal[0] * gx + normal[1] * gy < 0:
            log.warning("cut segment normal disagrees with grad(phi) in cell %d", cell)
    # fan triangulation from A
    ia = next(i for i, p in enumerate(poly) if np.allclose(p, a, rtol=0, atol=1e-15 * (1 + abs(p).max())))
    order = np.roll(np.arange(len(poly)), -ia)
    pts, wts = [], []
    for k in range(1, len(poly) - 1):
        p, w = quadrature.triangle_rule(poly[order[0]], poly[order[k]], poly[order[k + 1]], n_tri)
        pts.append(p)
        wts.append(w)
    sp, sw = quadrature.segment_rule(a, b, n_seg)
    return CutCellGeometry(BoundarySegment(a, b, normal, cell), poly,
                           np.concatenate(pts), np.concatenate(wts), sp, sw)


@dataclass
class QuadGroup:
    """Quadrature points attached to active cells.

    ``cell`` indexes the active-cell list; ``xref`` are reference coordinates
    in the unit square.  Padding points carry zero weight.
    """

    cell: np.ndarray
    x: np.ndarray          # (n, q, 2)
    xref: np.ndarray       # (n, q, 2)
    w: np.ndarray          # (n, q)
    normal: Optional[np.ndarray] = None   # (n, 2) for boundary groups
    tag: Optional[np.ndarray] = None      # wall id for wall groups

    def __len__(self):
        return len(self.cell)

    def subset(self, mask):
        return QuadGroup(self.cell[mask], self.x[mask], self.xref[mask], self.w[mask],
                         None if self.normal is None else self.normal[mask],
                         None if self.tag is None else self.tag[mask])

    @property
    def total_weight(self):
        return float(self.w.sum())


def _pad_group(cells, points, weights, origins, h, normals=None, tags=None):
    q = max(len(w) for w in weights)
    n = len(cells)
    x = np.zeros((n, q, 2))
    w = np.zeros((n, q))
    for k, (p, ww) in enumerate(zip(points, weights)):
        x[k, : len(ww)] = p
        x[k, len(ww):] = p[0]
        w[k, : len(ww)] = ww
    xref = (x - origins[:, None, :]) / h
    return QuadGroup(np.asarray(cells, dtype=np.int64), x, xref, w,
                     None if normals is None else np.asarray(normals, float),
                     None if tags is None else np.asarray(tags, dtype=np.int64))


def fitted_boundary_quadrature(grid: CartesianGrid, n=SEGMENT_ORDER):
    """Gauss rules on every cell edge of the box walls (geometry ignored)."""
    s, ws = quadrature.gauss_1d(n)
    h = grid.h
    pts, wts, nrm, tag = [], [], [], []
    for wid, wall in enumerate(WALLS):
        count = grid.ny if wall in ("left", "right") else grid.nx
        for k in range(count):
            if wall == "left":
                p = np.stack([np.full(n, grid.x_min), grid.y_min + (k + s) * h], -1)
            elif wall == "right":
                p = np.stack([np.full(n, grid.x_max), grid.y_min + (k + s) * h], -1)
            elif wall == "bottom":
                p = np.stack([grid.x_min + (k + s) * h, np.full(n, grid.y_min)], -1)
            else:
                p = np.stack([grid.x_min + (k + s) * h, np.full(n, grid.y_max)], -1)
            pts.append(p)
            wts.append(ws * h)
            nrm.append(WALL_NORMALS[wid])
            tag.append(wid)
    return np.array(pts), np.array(wts), np.array(nrm), np.array(tag)


class MeshSnapshot:
    """Immutable active-mesh description at one time instant."""

    def __init__(self, grid: CartesianGrid, ls: LevelSetField, t=0.0, delta_snap=1e-2):
        self.grid = grid
        self.ls = ls
        self.t = float(t)
        self.delta_snap = delta_snap
        X, Y = grid.v_coords()
        raw = ls.phi(X, Y, t)
        self.tags, self.phi = classify(grid, ls, t, delta_snap)
        self.snap_perturbation = float(np.max(np.abs(self.phi - raw)))
        self.nodes = build_node_sets(grid, self.tags, self.phi)
        tag_flat = self.tags.ravel()
        self.active_cells = np.flatnonzero(tag_flat != INACTIVE)
        self.is_cut = tag_flat[self.active_cells] == CUT
        self.cell_v = self.nodes.v_index[grid.cell_v_nodes()[self.active_cells]]
        self.cell_p = self.nodes.p_index[grid.cell_p_nodes()[self.active_cells]]
        self.origin = grid.cell_origin()[self.active_cells]
        self._build_quadrature()
        for arr in (self.phi, self.tags, self.active_cells, self.is_cut, self.cell_v,
                    self.cell_p, self.origin):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    @property
    def h(self):
        return self.grid.h

    @property
    def n_v(self):
        return self.nodes.n_v

    @property
    def n_p(self):
        return self.nodes.n_p

    @property
    def n_unknowns(self):
        return self.nodes.n_unknowns

    def v_xy(self):
        X, Y = self.grid.v_coords()
        ids = self.nodes.v_nodes
        return X.ravel()[ids], Y.ravel()[ids]

    def p_xy(self):
        X, Y = self.grid.p_coords()
        ids = self.nodes.p_nodes
        return X.ravel()[ids], Y.ravel()[ids]

    def cell_corner_phis(self, k):
        """Snapped corner values of active cell ``k`` in CCW order."""
        vals = self.phi.ravel()[self.grid.cell_v_nodes()[self.active_cells[k]]]
        return vals[list(CORNER_Q2)]

    def cell_corners(self, k):
        o = self.origin[k]
        h = self.h
        return [o + h * np.array(c, dtype=float) for c in CORNERS]

    def _build_quadrature(self):
        grid, h = self.grid, self.h
        ref, wref = quadrature.gauss_square(VOLUME_ORDER)
        internal = np.flatnonzero(~self.is_cut)
        n = len(internal)
        x = self.origin[internal][:, None, :] + h * ref[None]
        self.vol_internal = QuadGroup(internal, x, np.broadcast_to(ref, (n,) + ref.shape).copy(),
                                      np.broadcast_to(wref * h * h, (n, len(wref))).copy())
        cut = np.flatnonzero(self.is_cut)
        self.cut_geometry = []
        for k in cut:
            geo = cut_cell_geometry(int(self.active_cells[k]), self.cell_corners(k),
                                    self.cell_corner_phis(k), self.ls, self.t)
            self.cut_geometry.append(geo)
        if len(cut):
            self.vol_cut = _pad_group(cut, [g.vol_points for g in self.cut_geometry],
                                      [g.vol_weights for g in self.cut_geometry],
                                      self.origin[cut], h)
            self.bnd_cut = _pad_group(cut, [g.surf_points for g in self.cut_geometry],
                                      [g.surf_weights for g in self.cut_geometry],
                                      self.origin[cut], h,
                                      normals=[g.segment.normal for g in self.cut_geometry])
        else:
            self.vol_cut = _empty_group()
            self.bnd_cut = _empty_group(normal=True)
        self.bnd_wall = self._wall_quadrature()

    def _wall_quadrature(self):
        grid, h = self.grid, self.h
        cj, ci = np.divmod(self.active_cells, grid.nx)
        on_wall = (ci == 0) | (ci == grid.nx - 1) | (cj == 0) | (cj == grid.ny - 1)
        lines = ((0, grid.x_min), (0, grid.x_max), (1, grid.y_min), (1, grid.y_max))
        tol = 1e-12 * max(grid.lx, grid.ly, 1.0)
        cut_pos = {int(k): m for m, k in enumerate(np.flatnonzero(self.is_cut))}
        cells, pts, wts, nrm, tag = [], [], [], [], []
        for k in np.flatnonzero(on_wall):
            if self.is_cut[k]:
                poly = self.cut_geometry[cut_pos[int(k)]].polygon
            else:
                poly = np.array(self.cell_corners(k))
            for i in range(len(poly)):
                p0, p1 = poly[i], poly[(i + 1) % len(poly)]
                for wid, (axis, value) in enumerate(lines):
                    if abs(p0[axis] - value) < tol and abs(p1[axis] - value) < tol:
                        if np.hypot(*(p1 - p0)) <= tol:
                            continue
                        p, w = quadrature.segment_rule(p0, p1, SEGMENT_ORDER)
                        cells.append(k)
                        pts.append(p)
                        wts.append(w)
                        nrm.append(WALL_NORMALS[wid])
                        tag.append(wid)
        if not cells:
            return _empty_group(normal=True, tag=True)
        return _pad_group(cells, pts, wts, self.origin[np.asarray(cells)], h,
                          normals=nrm, tags=tag)

    # ------------------------------------------------------------------
    def volume_groups(self):
        return [g for g in (self.vol_internal, self.vol_cut) if len(g)]

    def area(self):
        return sum(g.total_weight for g in self.volume_groups())

    def boundary_length(self):
        return self.bnd_cut.total_weight

    def min_cut_area(self):
        if not self.cut_geometry:
            return np.inf
        return min(g.area for g in self.cut_geometry)

    def summary(self):
        tags = self.tags.ravel()
        return {
            "t": self.t,
            "h": self.h,
            "cells": int(self.grid.n_cells),
            "inactive_cells": int((tags == INACTIVE).sum()),
            "internal_cells": int((tags == INTERNAL).sum()),
            "cut_cells": int((tags == CUT).sum()),
            "velocity_nodes": int(self.n_v),
            "pressure_nodes": int(self.n_p),
            "ghost_velocity_nodes": int(self.nodes.v_ghost.sum()),
            "ghost_pressure_nodes": int(self.nodes.p_ghost.sum()),
            "unknowns": int(self.n_unknowns),
            "area": self.area(),
            "boundary_length": self.boundary_length(),
            "min_cut_area_over_h2": self.min_cut_area() / self.h ** 2,
            "delta_snap": self.delta_snap,
            "snap_perturbation": self.snap_perturbation,
        }


def _empty_group(normal=False, tag=False):
    return QuadGroup(np.zeros(0, dtype=np.int64), np.zeros((0, 1, 2)), np.zeros((0, 1, 2)),
                     np.zeros((0, 1)), np.zeros((0, 2)) if normal else None,
                     np.zeros(0, dtype=np.int64) if tag else None)


def build_mesh(grid, ls, t=0.0, delta_snap=1e-2) -> MeshSnapshot:
    return MeshSnapshot(grid, ls, t, delta_snap)
