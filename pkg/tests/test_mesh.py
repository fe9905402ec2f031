import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghostfem import quadrature
from ghostfem.errors import ConfigError, EmptyDomainError
from ghostfem.geometry import LevelSetField
from ghostfem.mesh import (CUT, INACTIVE, INTERNAL, CartesianGrid, MeshSnapshot, classify,
                           cut_cell_geometry, polygon_area, snap)


def disk_mesh(n, radius=1 / math.sqrt(15)):
    return MeshSnapshot(CartesianGrid(-1, -1, 2, 2, n, n), LevelSetField("disk", {"radius": radius}))


def test_node_numbering():
    g = CartesianGrid(0.0, 1.0, 3.0, 2.0, 3, 2)
    X, Y = g.v_coords()
    nodes = g.cell_v_nodes()
    origin = g.cell_origin()
    for k in range(g.n_cells):
        for b in range(3):
            for a in range(3):
                nid = nodes[k, 3 * b + a]
                assert X.ravel()[nid] == pytest.approx(origin[k, 0] + 0.5 * a * g.h)
                assert Y.ravel()[nid] == pytest.approx(origin[k, 1] + 0.5 * b * g.h)
    # pressure node (I, J) coincides with velocity node (2I, 2J)
    XP, YP = g.p_coords()
    pn = g.cell_p_nodes()
    assert np.allclose(XP.ravel()[pn], X.ravel()[nodes[:, [0, 2, 6, 8]]])
    assert np.allclose(YP.ravel()[pn], Y.ravel()[nodes[:, [0, 2, 6, 8]]])


def test_grid_validation():
    with pytest.raises(ConfigError):
        CartesianGrid(0, 0, 2.0, 1.0, 4, 4)
    with pytest.raises(ConfigError):
        CartesianGrid(0, 0, 1.0, 1.0, 0, 4)


@given(vals=st.lists(st.floats(-1, 1), min_size=1, max_size=50), h=st.floats(0.01, 1))
def test_snap(vals, h):
    phi = np.array(vals)
    out = snap(phi, h, 1e-2)
    small = np.abs(phi) < 1e-2 * h
    assert np.all(out[small] == 1e-2 * h)
    assert np.array_equal(out[~small], phi[~small])
    assert np.all(np.abs(out) >= 1e-2 * h)


def test_classification_from_corner_signs():
    g = CartesianGrid(-1, -1, 2, 2, 16, 16)
    tags, phi = classify(g, LevelSetField("flower"))
    for j in range(g.ny):
        for i in range(g.nx):
            c = phi[2 * j:2 * j + 3:2, 2 * i:2 * i + 3:2]
            if np.all(c < 0):
                assert tags[j, i] == INTERNAL
            elif np.all(c >= 0):
                assert tags[j, i] == INACTIVE
            else:
                assert tags[j, i] == CUT


def test_empty_domain():
    with pytest.raises(EmptyDomainError):
        disk_mesh(8, radius=3.0)


def test_area_and_length_converge():
    R = 1 / math.sqrt(15)
    errs = []
    for n in (16, 32, 64):
        m = disk_mesh(n)
        errs.append((abs(m.area() - (4 - math.pi * R * R)), abs(m.boundary_length() - 2 * math.pi * R)))
    errs = np.array(errs)
    assert np.all(np.log2(errs[:-1] / errs[1:]) > 1.8)


def _green_moment(poly, a, b):
    """Exact ``int x^a y^b`` over a polygon via ``(1/(a+1)) oint x^(a+1) y^b dy``."""
    s, w = quadrature.gauss_1d(8)
    total = 0.0
    for i in range(len(poly)):
        p0, p1 = poly[i], poly[(i + 1) % len(poly)]
        x = p0[0] + s * (p1[0] - p0[0])
        y = p0[1] + s * (p1[1] - p0[1])
        total += np.sum(w * x ** (a + 1) * y ** b) * (p1[1] - p0[1])
    return total / (a + 1)


@pytest.mark.parametrize("shape", ["disk", "ellipse", "flower"])
def test_cut_cell_quadrature_is_exact_for_polynomials(shape):
    m = MeshSnapshot(CartesianGrid(-1, -1, 2, 2, 12, 12), LevelSetField(shape))
    for geo in m.cut_geometry:
        assert geo.area > 0
        for a, b in ((0, 0), (1, 0), (2, 1), (4, 4), (3, 5)):
            q = np.sum(geo.vol_weights * geo.vol_points[:, 0] ** a * geo.vol_points[:, 1] ** b)
            assert q == pytest.approx(_green_moment(geo.polygon, a, b), abs=1e-14)
        # the segment rule integrates along A -> B
        seg = geo.segment
        assert np.sum(geo.surf_weights) == pytest.approx(np.hypot(*(seg.b - seg.a)))
        assert np.linalg.norm(seg.normal) == pytest.approx(1.0)


def test_segment_normal_points_into_obstacle():
    m = disk_mesh(20)
    for geo in m.cut_geometry:
        mid = 0.5 * (geo.segment.a + geo.segment.b)
        # outward from the fluid polygon = towards the disk centre
        assert np.dot(geo.segment.normal, -mid) > 0


def test_snapped_cut_cells_not_degenerate_on_disk():
    for n in (16, 32, 64):
        assert disk_mesh(n).min_cut_area() >= 1e-4 * (2 / n) ** 2


def test_wall_quadrature_covers_the_box():
    m = disk_mesh(10)
    walls = m.bnd_wall
    for tag in range(4):
        assert walls.subset(walls.tag == tag).total_weight == pytest.approx(2.0)


def test_node_sets():
    m = disk_mesh(16)
    x, y = m.v_xy()
    ghost = m.nodes.v_ghost
    assert np.all(m.ls.phi(x[ghost], y[ghost]) >= -1e-2 * m.h - 1e-15)
    assert m.n_unknowns == 2 * m.n_v + m.n_p
    assert np.all(m.cell_v >= 0) and np.all(m.cell_p >= 0)
    s = m.summary()
    assert s["internal_cells"] + s["cut_cells"] + s["inactive_cells"] == 256


def test_snapshot_is_read_only():
    m = disk_mesh(8)
    with pytest.raises(ValueError):
        m.phi[0, 0] = 1.0


def test_polygon_area_orientation():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert polygon_area(sq) == 1.0
    assert polygon_area(sq[::-1]) == -1.0


def test_cut_cell_geometry_triangle():
    corners = [np.array(c, float) for c in ((0, 0), (1, 0), (1, 1), (0, 1))]
    geo = cut_cell_geometry(0, corners, [-1.0, 1.0, 1.0, 1.0])
    assert geo.area == pytest.approx(0.125)
