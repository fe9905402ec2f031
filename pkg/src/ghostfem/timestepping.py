"""IMEX Runge-Kutta integration of the stabilised saddle-point system

    B dq/dt = Theta[q] q + g_bar(t),   B = diag(M, M, 0),

where convection is explicit and viscosity, pressure and the constraint
are implicit.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError, SingularMatrixError
from .fem import FEMSystem
from .linalg import Factorization
from .mesh import MeshSnapshot

log = logging.getLogger(__name__)

EPS_STAB = 1e-10
GAMMA3 = 0.435866521508


@dataclass(frozen=True)
class ButcherPair:
    order: int
    A_exp: np.ndarray
    b_exp: np.ndarray
    c_exp: np.ndarray
    A_imp: np.ndarray
    b_imp: np.ndarray
    c_imp: np.ndarray

    @property
    def s(self):
        return len(self.b_imp)

    @property
    def stiffly_accurate(self):
        return bool(np.array_equal(self.A_imp[-1], self.b_imp))

    def conditions(self):
        """Residuals of the consistency and order conditions."""
        Ae, be, ce = self.A_exp, self.b_exp, self.c_exp
        Ai, bi, ci = self.A_imp, self.b_imp, self.c_imp
        out = {
            "sum_b_exp": be.sum() - 1,
            "sum_b_imp": bi.sum() - 1,
            "row_exp": np.max(np.abs(Ae.sum(axis=1) - ce)),
            "row_imp": np.max(np.abs(Ai.sum(axis=1) - ci)),
            "bc_exp": be @ ce - 0.5,
            "bc_imp": bi @ ci - 0.5,
        }
        if self.order >= 3:
            out.update({
                "bcc_exp": be @ ce ** 2 - 1 / 3,
                "bcc_imp": bi @ ci ** 2 - 1 / 3,
                "bAc_exp": be @ Ae @ ce - 1 / 6,
                "bAc_imp": bi @ Ai @ ci - 1 / 6,
                "bAc_mixed_ei": be @ Ai @ ci - 1 / 6,
                "bAc_mixed_ie": bi @ Ae @ ce - 1 / 6,
                "bcc_mixed": be @ (ce * ci) - 1 / 3,
            })
        return out

    def as_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in
                ("A_exp", "b_exp", "c_exp", "A_imp", "b_imp", "c_imp")} | {"order": self.order}


def make_tableau(order) -> ButcherPair:
    if order == 2:
        eta = 1 / math.sqrt(2)
        delta = 1 - 1 / (2 * eta)
        Ae = np.array([[0.0, 0.0], [1.0, 0.0]])
        ce = np.array([0.0, 1.0])
        Ai = np.array([[1 - eta, 0.0], [eta - delta, delta]])
        ci = np.array([1 - eta, eta])
        b = np.array([0.5, 0.5])
        return ButcherPair(2, Ae, b, ce, Ai, b.copy(), ci)
    if order == 3:
        g = GAMMA3
        Ae = np.array([
            [0, 0, 0, 0],
            [g, 0, 0, 0],
            [1.243893189, -0.5259599287, 0, 0],
            [0.6304125582, 0.7865807402, -0.4169932983, 0],
        ], dtype=float)
        ce = np.array([0, g, 0.717933260754, 1.0])
        Ai = np.array([
            [g, 0, 0, 0],
            [0, g, 0, 0],
            [0, 0.282066739245, g, 0],
            [0, 1.208496649176, -0.644363170684, g],
        ], dtype=float)
        ci = np.array([g, g, 0.717933260754, 1.0])
        b = np.array([0, 1.208496649176, -0.644363170684, g])
        return ButcherPair(3, Ae, b, ce, Ai, b.copy(), ci)
    raise ConfigError(f"unsupported IMEX order {order!r} (use 2 or 3)", "time.order")


def default_dt(order, h):
    """``h`` for the 2-stage scheme, ``h / 2`` for the 4-stage one."""
    if order == 2:
        return h
    if order == 3:
        return h / 2
    raise ConfigError(f"unsupported IMEX order {order!r}", "time.order")


@dataclass
class State:
    u: np.ndarray
    p: np.ndarray
    t: float
    mesh: MeshSnapshot

    def __post_init__(self):
        if self.u.shape != (2 * self.mesh.n_v,) or self.p.shape != (self.mesh.n_p,):
            raise ValueError("state sizes do not match the mesh snapshot")

    @property
    def q(self):
        return np.concatenate([self.u, self.p])


@dataclass
class StepInfo:
    t: float
    divergence_residual: float
    solver_residual: float
    wall_ms: float
    u_norm: float = 0.0
    extension: dict = field(default_factory=dict)

    CSV_HEADER = ("t", "u_norm", "divergence_residual", "solver_residual", "wall_ms")

    def csv_row(self):
        return (self.t, self.u_norm, self.divergence_residual, self.solver_residual, self.wall_ms)


class SaddleOperator:
    """``B``, ``Theta[q]`` and ``g_bar(t)`` of one frozen mesh snapshot."""

    def __init__(self, system: FEMSystem, eps=EPS_STAB):
        self.sys = system
        self.eps = float(eps)
        nv, npr = system.n_v, system.n_p
        self.nv, self.npr = nv, npr
        self.n = 2 * nv + npr
        self.M2 = system.block_mass()
        self.B = sp.block_diag([self.M2, sp.csr_matrix((npr, npr))], format="csr")
        self._mass_lu = None
        self._proj_lu = None
        self._proj_dt = None

    @property
    def mesh(self):
        return self.sys.mesh

    def H(self, u_e):
        """Velocity block ``-(nu a_h + c_h(u_e))`` for both components."""
        K = self.sys.A + self.sys.convection(u_e)
        return -sp.block_diag([K, K], format="csr")

    def theta(self, u_e):
        G = self.sys.G
        return sp.bmat([[self.H(u_e), -G],
                        [-self.sys.GT, self.eps * sp.identity(self.npr)]], format="csr")

    def g_bar(self, t):
        F, ghat = self.sys.load(t)
        return np.concatenate([F, ghat])

    def stage_matrix(self, u_e, k):
        """``B - k Theta[u_e]``."""
        return (self.B - k * self.theta(u_e)).tocsc()

    def mass_solve(self, r):
        if self._mass_lu is None:
            self._mass_lu = Factorization(self.sys.M)
        nv = self.nv
        return np.concatenate([self._mass_lu.solve(r[:nv]), self._mass_lu.solve(r[nv:])])

    def dof_name(self, i):
        if i < self.nv:
            return f"u_x[{i}]"
        if i < 2 * self.nv:
            return f"u_y[{i - self.nv}]"
        return f"p[{i - 2 * self.nv}]"

    def constraint_residual(self, u, t):
        _, ghat = self.sys.load(t)
        return float(np.linalg.norm(self.sys.GT @ u - ghat))

    def project(self, u_star, t, dt=0.0):
        """Orthogonal projection onto ``{G^T u = g_hat(t)}`` in the norm of ``M + dt nu a_h``.

        The viscous part keeps cut-cell dofs with tiny mass from absorbing
        the correction; ``dt = 0`` gives the plain mass projection.
        """
        if self._proj_lu is None or self._proj_dt != dt:
            G = self.sys.G
            W = self.M2 + dt * sp.block_diag([self.sys.A, self.sys.A], format="csr")
            K = sp.bmat([[W, G], [self.sys.GT, -self.eps * sp.identity(self.npr)]], format="csc")
            self._proj_lu = Factorization(K, self.dof_name)
            self._proj_dt = dt
            self._proj_W = W
        _, ghat = self.sys.load(t)
        rhs = np.concatenate([self._proj_W @ u_star, ghat])
        x = self._proj_lu.solve(rhs)
        return x[:2 * self.nv]


def imex_step(state: State, dt, tab: ButcherPair, op: SaddleOperator):
    """Advance ``state`` by one step; returns ``(State, StepInfo)``.

    The velocity rows of stage ``i`` read ``M u_I^i = M u^n + dt sum_j a_ij K_j``
    with ``K_j = Theta[q_E^j] q_I^j + g_bar(t^n + c_j dt)``.  The stage rates
    ``Y_j = M^{-1} K_j`` are recovered from that identity instead of by mass
    solves, which would amplify the cancellation in ``K_j`` by the condition
    number of ``M`` (large on meshes with nearly empty cut cells).
    """
    t0 = time.perf_counter()
    if state.mesh is not op.mesh:
        raise ValueError("state does not live on the operator's mesh snapshot")
    nv2 = 2 * op.nv
    tn = state.t
    un = state.u
    Bqn = op.B @ state.q
    s = tab.s
    theta_q = []   # Theta[q_E^j] q_I^j
    rates = []     # Y_j
    q_I = None
    solver_res = 0.0
    for i in range(s):
        u_e = un.copy()
        for j in range(i):
            a = tab.A_exp[i, j]
            if a != 0.0:
                u_e += dt * a * rates[j]
        aii = tab.A_imp[i, i]
        rhs = Bqn.copy()
        for j in range(i):
            a = tab.A_imp[i, j]
            if a != 0.0:
                rhs += dt * a * (theta_q[j] + op.g_bar(tn + tab.c_imp[j] * dt))
        rhs += dt * aii * op.g_bar(tn + tab.c_imp[i] * dt)
        Th = op.theta(u_e)
        L = (op.B - dt * aii * Th).tocsc()
        try:
            fac = Factorization(L, op.dof_name)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"stage {i + 1}: {exc}", row=exc.row) from exc
        q_I = fac.solve(rhs)
        if not np.all(np.isfinite(q_I)):
            raise NumericalError(f"non-finite values after stage {i + 1} at t={tn:.6g}")
        solver_res = max(solver_res, fac.residual(q_I, rhs))
        theta_q.append(Th @ q_I)
        y = q_I[:nv2] - un
        for j in range(i):
            a = tab.A_imp[i, j]
            if a != 0.0:
                y -= dt * a * rates[j]
        rates.append(y / (dt * aii))
    t_new = tn + dt
    if tab.stiffly_accurate:
        u_new = q_I[:nv2]
    else:
        u_star = un.copy()
        for i in range(s):
            u_star += dt * tab.b_imp[i] * rates[i]
        u_new = op.project(u_star, t_new, dt)
    p_new = q_I[nv2:]
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(p_new))):
        raise NumericalError(f"non-finite solution at t={t_new:.6g}")
    div = op.constraint_residual(u_new, t_new)
    out = State(u_new, p_new.copy(), t_new, state.mesh)
    info = StepInfo(t_new, div, solver_res, 1e3 * (time.perf_counter() - t0),
                    u_norm=float(np.sqrt(u_new @ (op.M2 @ u_new))))
    return out, info


class MovingDomain:
    """Snapshots, operators and extension settings of a (possibly) moving run.

    ``make_operator(mesh)`` assembles the :class:`SaddleOperator` of one
    snapshot.  For a static level set the first operator is reused.
    """

    def __init__(self, grid, ls, make_operator: Callable, delta_snap=1e-2, band_width=None,
                 extension: Optional[dict] = None):
        self.grid = grid
        self.ls = ls
        self.make_operator = make_operator
        self.delta_snap = delta_snap
        self.band_width = band_width
        self.extension = dict(extension or {})
        self._static_op = None

    def snapshot(self, t):
        return MeshSnapshot(self.grid, self.ls, t, self.delta_snap)

    def operator(self, mesh):
        if not self.ls.is_moving:
            if self._static_op is None or self._static_op.mesh is not mesh:
                self._static_op = self.make_operator(mesh)
            return self._static_op
        return self.make_operator(mesh)


def advance_moving(state: State, dt, tab: ButcherPair, domain: MovingDomain):
    """One step on the snapshot at ``t + dt``: rebuild, extend, assemble, step.

    Raises ``BandViolationError`` when a newly active node lies outside the
    extension band of the current snapshot.
    """
    from .extrapolation import extend_state

    t0 = time.perf_counter()
    if not domain.ls.is_moving:
        op = domain.operator(state.mesh)
        new, info = imex_step(state, dt, tab, op)
        return new, info
    mesh = domain.snapshot(state.t + dt)
    u, p, report = extend_state(state.u, state.p, state.mesh, mesh, domain.band_width,
                                **domain.extension)
    op = domain.operator(mesh)
    new, info = imex_step(State(u, p, state.t, mesh), dt, tab, op)
    info.extension = report
    info.wall_ms = 1e3 * (time.perf_counter() - t0)
    return new, info


def constraint_ok(info: StepInfo, u):
    return info.divergence_residual <= 1e-6 * (1 + float(np.linalg.norm(u)))


def initial_state(mesh: MeshSnapshot, kind="rest", velocity: Optional[Callable] = None,
                  pressure: Optional[Callable] = None, t=0.0) -> State:
    """Nodal interpolation of the initial fields; ``kind`` is ``rest`` or ``field``."""
    nv, npr = mesh.n_v, mesh.n_p
    if kind == "rest":
        return State(np.zeros(2 * nv), np.zeros(npr), float(t), mesh)
    if kind not in ("field", "manufactured", "custom"):
        raise ConfigError(f"unknown initial condition {kind!r}", "scenario.initial")
    x, y = mesh.v_xy()
    ux, uy = velocity(x, y, t)
    p = np.zeros(npr)
    if pressure is not None:
        xp, yp = mesh.p_xy()
        p = np.asarray(pressure(xp, yp, t), dtype=float)
    return State(np.concatenate([np.broadcast_to(ux, x.shape), np.broadcast_to(uy, x.shape)]).astype(float),
                 p, float(t), mesh)
