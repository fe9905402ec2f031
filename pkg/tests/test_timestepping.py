import math

import numpy as np
import pytest

from ghostfem.benchmarks import ManufacturedSolution
from ghostfem.errors import ConfigError
from ghostfem.fem import FEMSystem, estimate_penalty
from ghostfem.geometry import LevelSetField, MotionLaw
from ghostfem.mesh import CartesianGrid, MeshSnapshot
from ghostfem.timestepping import (GAMMA3, MovingDomain, SaddleOperator, State, advance_moving,
                                   constraint_ok, default_dt, imex_step, initial_state, make_tableau)


@pytest.fixture(scope="module")
def km():
    mesh = MeshSnapshot(CartesianGrid(-1, -1, 2, 2, 8, 8), LevelSetField("disk"))
    ex = ManufacturedSolution(1.0)
    lam = estimate_penalty(mesh).lam
    return mesh, ex, SaddleOperator(FEMSystem(mesh, 1.0, lam, ex.boundary(), ex.forcing))


@pytest.mark.parametrize("order", [2, 3])
def test_tableau_conditions(order):
    tab = make_tableau(order)
    c = tab.conditions()
    assert abs(c["sum_b_imp"]) < 1e-12 and abs(c["sum_b_exp"]) < 1e-12
    assert abs(c["bc_imp"]) < 1e-12 and abs(c["bc_exp"]) < 1e-12
    if order == 3:
        for k in ("bcc_exp", "bcc_imp", "bAc_exp", "bAc_imp"):
            assert abs(c[k]) < 1e-10
    # explicit parts are strictly lower triangular, implicit parts lower triangular
    assert np.all(np.triu(tab.A_exp) == 0)
    assert np.all(np.triu(tab.A_imp, 1) == 0)


def test_order2_coefficients():
    tab = make_tableau(2)
    eta = 1 / math.sqrt(2)
    delta = 1 - 1 / (2 * eta)
    assert tab.A_imp[0, 0] == pytest.approx(1 - eta)
    assert tab.A_imp[1, 1] == pytest.approx(delta)
    assert not tab.stiffly_accurate


def test_order3_gamma_stored_exactly():
    tab = make_tableau(3)
    assert GAMMA3 == 0.435866521508
    assert np.all(np.diag(tab.A_imp) == 0.435866521508)
    assert tab.stiffly_accurate
    assert tab.s == 4


def test_unsupported_order():
    with pytest.raises(ConfigError):
        make_tableau(5)
    with pytest.raises(ConfigError):
        default_dt(4, 0.1)
    assert default_dt(2, 0.1) == 0.1
    assert default_dt(3, 0.1) == 0.05


def test_rest_stays_at_rest():
    mesh = MeshSnapshot(CartesianGrid(-1, -1, 2, 2, 6, 6), LevelSetField("disk"))
    op = SaddleOperator(FEMSystem(mesh, 1.0, estimate_penalty(mesh).lam))
    st = initial_state(mesh)
    for order in (2, 3):
        new, info = imex_step(st, 0.1, make_tableau(order), op)
        assert np.abs(new.u).max() < 1e-12
        assert info.divergence_residual < 1e-12


@pytest.mark.parametrize("order", [2, 3])
def test_manufactured_step(km, order):
    mesh, ex, op = km
    st = initial_state(mesh, "field", ex.velocity)
    dt = default_dt(order, mesh.h)
    new, info = imex_step(st, dt, make_tableau(order), op)
    assert new.t == pytest.approx(dt)
    assert constraint_ok(info, new.u)
    x, y = mesh.v_xy()
    ue, ve = ex.velocity(x, y, new.t)
    inside = mesh.nodes.v_internal
    err = np.abs(new.u[: mesh.n_v][inside] - ue[inside]).max()
    assert err < 0.1


def test_projection_is_idempotent(km, rng):
    mesh, ex, op = km
    u = rng.standard_normal(2 * mesh.n_v)
    for dt in (0.0, 0.1):
        p1 = op.project(u, 0.2, dt)
        assert op.constraint_residual(p1, 0.2) < 1e-6 * (1 + np.linalg.norm(p1))
        p2 = op.project(p1, 0.2, dt)
        assert np.allclose(p1, p2, atol=1e-8 * np.abs(p1).max())


def test_mass_projection_is_orthogonal(km, rng):
    mesh, ex, op = km
    u = rng.standard_normal(2 * mesh.n_v)
    w = rng.standard_normal(2 * mesh.n_v)
    pu = op.project(u, 0.0)
    # any kernel direction of G^T is M-orthogonal to u - P u
    kernel = op.project(w, 0.0) - op.project(np.zeros_like(w), 0.0)
    assert abs((u - pu) @ (op.M2 @ kernel)) < 1e-6 * np.linalg.norm(u) * np.linalg.norm(kernel)


def test_state_checks_sizes(km):
    mesh, _, _ = km
    with pytest.raises(ValueError):
        State(np.zeros(3), np.zeros(mesh.n_p), 0.0, mesh)
    with pytest.raises(ConfigError):
        initial_state(mesh, "whatever")


def test_static_domain_reuses_operator():
    grid = CartesianGrid(-1, -1, 2, 2, 6, 6)
    ls = LevelSetField("disk")
    built = []

    def make(mesh):
        built.append(mesh)
        return SaddleOperator(FEMSystem(mesh, 1.0, estimate_penalty(mesh).lam))

    dom = MovingDomain(grid, ls, make)
    st = initial_state(dom.snapshot(0.0))
    for _ in range(3):
        st, _ = advance_moving(st, 0.1, make_tableau(2), dom)
    assert len(built) == 1


def test_moving_domain_rebuilds_and_extends():
    grid = CartesianGrid(-1, -1, 2, 2, 8, 8)
    ls = LevelSetField("ellipse", motion=MotionLaw("rotation", omega=2 * math.pi / 5))

    def make(mesh):
        body = ls.boundary_velocity
        from ghostfem.fem import BoundaryData
        return SaddleOperator(FEMSystem(mesh, 1.0, estimate_penalty(mesh).lam,
                                        BoundaryData(body=lambda x, y, t: body(x, y, t))))

    dom = MovingDomain(grid, ls, make, band_width=3 * grid.h)
    st = initial_state(dom.snapshot(0.0))
    st, info = advance_moving(st, 0.125, make_tableau(3), dom)
    assert st.mesh.t == pytest.approx(0.125)
    assert set(info.extension) >= {"new_velocity_nodes", "band_nodes"}
    assert constraint_ok(info, st.u)
