import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghostfem.errors import BandViolationError, ConfigError
from ghostfem.extrapolation import (build_band, distance_to_segments, extend_state,
                                    extrapolate_quadratic, lattice_pressure_nodes,
                                    pressure_to_lattice, to_lattice, transport_to_steady)
from ghostfem.geometry import LevelSetField
from ghostfem.mesh import CartesianGrid, MeshSnapshot


def make_mesh(shape="disk", n=20, **params):
    return MeshSnapshot(CartesianGrid(-1, -1, 2, 2, n, n), LevelSetField(shape, params or None))


@pytest.fixture(scope="module")
def disk():
    m = make_mesh("disk", 20, radius=0.5)
    return m, build_band(m)


def lattice_xy(grid):
    X, Y = grid.v_coords()
    return X.ravel(), Y.ravel()


def test_known_nodes_are_internal_cell_nodes(disk):
    m, band = disk
    nodes = m.grid.cell_v_nodes()
    internal = m.active_cells[~m.is_cut]
    expect = np.zeros(len(band.chi), dtype=bool)
    expect[nodes[internal].ravel()] = True
    assert np.array_equal(band.known, expect)
    assert not np.any(band.band & band.known)


def test_band_is_within_width(disk):
    m, band = disk
    x, y = lattice_xy(m.grid)
    r = np.hypot(x[band.band], y[band.band])
    # polygonal boundary within O(h^2) of the circle
    assert np.all(np.abs(r - 0.5) <= band.width + 1e-2)
    assert np.allclose(np.linalg.norm(band.normal[band.band], axis=1), 1.0)
    with pytest.raises(ConfigError):
        build_band(m, width=0.0)


def test_vanishing_gradient_gets_a_normal():
    # the ellipse level set is flat at its centre
    m = make_mesh("ellipse", 8)
    band = build_band(m)
    centre = 8 * 17 + 8
    assert band.band[centre]
    assert np.linalg.norm(band.normal[centre]) == pytest.approx(1.0)


@given(px=st.floats(-1, 1), py=st.floats(-1, 1))
def test_distance_to_segments_brute_force(px, py):
    m = make_mesh("flower", 10)
    d = distance_to_segments(np.array([[px, py]]), m)[0]
    best = np.inf
    for g in m.cut_geometry:
        a, b = g.segment.a, g.segment.b
        for s in np.linspace(0, 1, 401):
            best = min(best, math.hypot(px - a[0] - s * (b[0] - a[0]), py - a[1] - s * (b[1] - a[1])))
    assert d <= best + 1e-12
    assert d >= best - 2e-3 * m.h


@pytest.mark.parametrize("shape", ["disk", "ellipse", "flower"])
def test_constants_extend_exactly(shape):
    m = make_mesh(shape, 20)
    band = build_band(m)
    out = extrapolate_quadratic(np.where(band.known, 2.5, 0.0), band, m)
    assert np.abs(out[band.band] - 2.5).max() < 1e-10


def test_quadratic_extension_converges_on_disk():
    errs = []
    for n in (20, 40):
        m = make_mesh("disk", n)
        band = build_band(m)
        x, y = lattice_xy(m.grid)
        f = 1 + 2 * x + 3 * y ** 2
        out = extrapolate_quadratic(np.where(band.known, f, 0.0), band, m)
        errs.append(np.abs(out - f)[band.band].max())
    assert errs[1] < 2e-3
    assert math.log2(errs[0] / errs[1]) > 2.5


@given(seed=st.integers(0, 10_000))
def test_known_values_untouched(seed):
    m = make_mesh("flower", 12)
    band = build_band(m)
    f = np.random.default_rng(seed).standard_normal(len(band.chi))
    out = extrapolate_quadratic(f, band, m)
    assert np.array_equal(out[band.known], f[band.known])
    outside = ~band.known & ~band.band
    assert np.array_equal(out[outside], f[outside])


def test_pseudo_time_matches_direct(disk):
    m, band = disk
    x, y = lattice_xy(m.grid)
    f = np.where(band.known, np.sin(x) + y, 0.0)
    direct, _ = transport_to_steady(f, None, band, m.ls, m.t)
    marched, info = transport_to_steady(f, None, band, m.ls, m.t, solver="pseudo_time",
                                        dtau=0.5 * m.h, tol=1e-11, max_iter=5000)
    assert info["converged"]
    assert np.abs(marched - direct)[band.band].max() < 1e-8
    with pytest.raises(ConfigError):
        transport_to_steady(f, None, band, m.ls, m.t, solver="jacobi")


def test_pressure_lattice_is_bilinear():
    m = make_mesh("disk", 10)
    xp, yp = m.p_xy()
    p = 1 + 2 * xp - yp + 0.5 * xp * yp
    P = pressure_to_lattice(p, m)
    x, y = lattice_xy(m.grid)
    # nodes inside cells whose four pressure corners are active
    cells = m.grid.cell_v_nodes()[m.active_cells]
    assert np.allclose(P[cells], (1 + 2 * x - y + 0.5 * x * y)[cells])
    ids = lattice_pressure_nodes(m.grid)[m.nodes.p_nodes]
    assert np.array_equal(P[ids], p)


def test_extend_state_on_moved_disk():
    old = make_mesh("disk", 20, radius=0.5)
    new = make_mesh("disk", 20, radius=0.5, cx=0.1)
    x, y = old.v_xy()
    u = np.concatenate([1 + x, y * y])
    xp, yp = old.p_xy()
    p = xp - yp
    un, pn, rep = extend_state(u, p, old, new)
    assert un.shape == (2 * new.n_v,) and pn.shape == (new.n_p,)
    assert rep["new_velocity_nodes"] > 0
    xn, yn = new.v_xy()
    inside = new.ls.phi(xn, yn) < 0
    assert np.abs(un[:new.n_v] - (1 + xn))[inside].max() < 1e-2
    # nodes of the old internal cells keep their values
    known = build_band(old).known
    keep = np.zeros_like(known)
    keep[new.nodes.v_nodes] = True
    keep &= known
    assert keep.any()
    assert np.array_equal(to_lattice(un[:new.n_v], new)[keep], to_lattice(u[:old.n_v], old)[keep])


def test_band_violation():
    old = make_mesh("disk", 20, radius=0.5)
    new = make_mesh("disk", 20, radius=0.5, cx=0.5)
    with pytest.raises(BandViolationError) as err:
        extend_state(np.zeros(2 * old.n_v), np.zeros(old.n_p), old, new)
    assert err.value.distance > err.value.band
