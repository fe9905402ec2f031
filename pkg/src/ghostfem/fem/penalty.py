"""Penalty calibration from the trace-inverse eigenvalue problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError
from ..linalg import max_generalized_eig
from ..mesh import MeshSnapshot
from .assembly import _scatter, _wprod, assemble_stiffness, boundary_data


@dataclass(frozen=True)
class PenaltyEstimate:
    C: float
    gamma: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ConfigError(f"safety factor must exceed 1, got {self.gamma!r}", "penalty.gamma")

    @property
    def lam(self):
        return self.gamma * self.C


def nitsche_eigen_matrices(mesh: MeshSnapshot, wall_kinds=("dirichlet",) * 4):
    """``K_ij = int_Gamma dphi_i/dn dphi_j/dn`` and the stiffness matrix."""
    n = mesh.n_v
    K = sp.csr_matrix((n, n))
    for _, d in boundary_data(mesh, wall_kinds):
        K = K + _scatter(d.dofs_v, d.dofs_v, _wprod(d.w, d.dn, d.dn), (n, n))
    return K, assemble_stiffness(mesh)


def estimate_penalty(mesh: MeshSnapshot, gamma=1.1, wall_kinds=("dirichlet",) * 4) -> PenaltyEstimate:
    """Smallest trace constant ``C`` with ``|du/dn|^2_Gamma <= C |grad u|^2_Omega``."""
    K, S = nitsche_eigen_matrices(mesh, wall_kinds)
    if K.nnz == 0:
        raise ConfigError("no Dirichlet boundary to calibrate the penalty on", "penalty")
    C, _ = max_generalized_eig(K, S, nullspace=np.ones(mesh.n_v))
    return PenaltyEstimate(float(C), float(gamma))
