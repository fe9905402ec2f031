import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from ghostfem.errors import ConfigError
from ghostfem.fem import (Q1, Q2, BoundaryData, FEMSystem, assemble_convection, assemble_mass,
                          assemble_pressure_coupling, assemble_viscous_nitsche, estimate_penalty,
                          nitsche_eigen_matrices)
from ghostfem.fem.assembly import assemble_body_force, assemble_stiffness
from ghostfem.geometry import LevelSetField
from ghostfem.mesh import CartesianGrid, MeshSnapshot

unit = st.floats(0, 1)


@pytest.fixture(scope="module")
def mesh():
    return MeshSnapshot(CartesianGrid(-1, -1, 2, 2, 10, 10), LevelSetField("flower"))


def nodal(mesh, f):
    x, y = mesh.v_xy()
    return f(x, y)


@pytest.mark.parametrize("basis", [Q1, Q2])
@given(s=unit, t=unit)
def test_partition_of_unity(basis, s, t):
    xref = np.array([s, t])
    assert basis.values(xref).sum() == pytest.approx(1.0)
    assert np.allclose(basis.gradients(xref, 0.5).sum(axis=0), 0.0, atol=1e-12)


@pytest.mark.parametrize("basis", [Q1, Q2])
def test_kronecker_property(basis):
    assert np.allclose(basis.values(basis.nodes()), np.eye(basis.n))


@given(s=unit, t=unit)
def test_q2_reproduces_biquadratics(s, t):
    nodes = Q2.nodes()
    f = lambda x, y: 1 + x - 2 * y + x * y - x * x * y * y + 3 * y * y
    vals = f(nodes[:, 0], nodes[:, 1])
    assert Q2.values(np.array([s, t])) @ vals == pytest.approx(f(s, t))
    g = Q2.gradients(np.array([s, t])).T @ vals
    assert g[0] == pytest.approx(1 + t - 2 * s * t * t)
    assert g[1] == pytest.approx(-2 + s - 2 * s * s * t + 6 * t)


def test_mass_matrix_moments(mesh):
    M = assemble_mass(mesh)
    one = np.ones(mesh.n_v)
    assert one @ M @ one == pytest.approx(mesh.area(), rel=1e-13)
    x = nodal(mesh, lambda x, y: x)
    # int x^2 over Omega_h from the polygon quadrature
    ref = sum(float(np.sum(g.w * g.x[..., 0] ** 2)) for g in mesh.volume_groups())
    assert x @ M @ x == pytest.approx(ref, rel=1e-12)
    assert abs(M - M.T).max() < 1e-15


def test_stiffness_kernel_and_energy(mesh):
    S = assemble_stiffness(mesh)
    assert np.abs(S @ np.ones(mesh.n_v)).max() < 1e-12
    x = nodal(mesh, lambda x, y: x + 2 * y)
    assert x @ S @ x == pytest.approx(5 * mesh.area(), rel=1e-12)


def test_pressure_coupling_divergence_theorem(mesh):
    # sum_j b_h(psi_j, u) = -int div u + oint u.n = 0 for a quadratic u
    G = assemble_pressure_coupling(mesh)
    ux = nodal(mesh, lambda x, y: x * x + y)
    uy = nodal(mesh, lambda x, y: x * y - y * y)
    r = G.T @ np.concatenate([ux, uy])
    assert abs(r.sum()) < 1e-12
    assert G.shape == (2 * mesh.n_v, mesh.n_p)


def test_convection_annihilates_constants(mesh, rng):
    u = rng.standard_normal(2 * mesh.n_v)
    C = assemble_convection(mesh, u)
    assert np.abs(C @ np.ones(mesh.n_v)).max() < 1e-11
    with pytest.raises(ValueError):
        assemble_convection(mesh, u[:-1])


def test_body_force(mesh):
    F = assemble_body_force(mesh, lambda x, y, t: (np.ones_like(x), 2 * np.ones_like(x)), 0.0)
    nv = mesh.n_v
    assert F[:nv].sum() == pytest.approx(mesh.area())
    assert F[nv:].sum() == pytest.approx(2 * mesh.area())


def test_nitsche_symmetric_and_coercive(mesh, rng):
    pe = estimate_penalty(mesh)
    A, _ = assemble_viscous_nitsche(mesh, 0.3, pe.lam)
    assert abs(A - A.T).max() < 1e-10 * abs(A).max()
    U = rng.standard_normal((mesh.n_v, 50))
    assert np.all(np.einsum("ik,ik->k", U, A @ U) > 0)
    with pytest.raises(ConfigError):
        assemble_viscous_nitsche(mesh, 1.0, -1.0)


def test_penalty_matches_dense_oracle(mesh):
    K, S = nitsche_eigen_matrices(mesh)
    pe = estimate_penalty(mesh)
    # dense full-space problem with the constant kernel shifted away
    n = mesh.n_v
    z = np.ones(n) / math.sqrt(n)
    Sd = S.toarray() + np.outer(z, z) * np.abs(S).max()
    w = sla.eigh(K.toarray(), Sd, eigvals_only=True)
    # the dense pencil is badly conditioned by nearly empty cut cells
    assert pe.C == pytest.approx(w.max(), rel=1e-6)
    assert pe.lam == pytest.approx(1.1 * pe.C)
    with pytest.raises(ConfigError):
        estimate_penalty(mesh, gamma=1.0)


def test_trace_inequality_holds(mesh, rng):
    K, S = nitsche_eigen_matrices(mesh)
    C = estimate_penalty(mesh).C
    U = rng.standard_normal((mesh.n_v, 40))
    lhs = np.einsum("ik,ik->k", U, K @ U)
    rhs = np.einsum("ik,ik->k", U, S @ U)
    assert np.all(lhs <= C * rhs * (1 + 1e-10))


def test_boundary_data_validation():
    with pytest.raises(ConfigError):
        BoundaryData(wall_kinds=("dirichlet",) * 3)
    with pytest.raises(ConfigError):
        BoundaryData(sbm="shift")
    assert BoundaryData().is_homogeneous


def test_closed_domain_flux_correction():
    m = MeshSnapshot(CartesianGrid(-1, -1, 2, 2, 8, 8), LevelSetField("disk"))
    # a uniform outward body velocity has net flux through a closed boundary
    bc = BoundaryData(body=lambda x, y, t: (x, y))
    sysm = FEMSystem(m, 1.0, 100.0, bc)
    _, ghat = sysm.load(0.0)
    assert abs(ghat.sum()) < 1e-13
    assert sysm.flux_defect != 0.0


def test_dump(tmp_path, mesh):
    from ghostfem.linalg import read_coo
    sysm = FEMSystem(mesh, 1.0, 50.0)
    sysm.dump(tmp_path)
    M = read_coo(tmp_path / "M.coo")
    assert abs(M - sysm.M).max() == 0.0
