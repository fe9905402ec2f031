"""Manufactured-solution studies, error norms, force measurements and the
flow scenarios."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .errors import ConfigError, InsufficientDataError, NumericalError
from .fem import BoundaryData, FEMSystem, Q1, Q2, estimate_penalty
from .fem.assembly import GroupData, boundary_data, volume_data
from .geometry import LevelSetField, MotionLaw
from .mesh import CartesianGrid, MeshSnapshot
from .timestepping import (MovingDomain, SaddleOperator, State, StepInfo, advance_moving,
                           constraint_ok, initial_state, make_tableau)

log = logging.getLogger(__name__)

SCENARIOS = ("kim_moin_static", "kim_moin_moving", "turek_disk", "driven_cavity",
             "rotating_flower", "oscillating_bubble", "ellipsoidal_bubble")

CYLINDER_L = 0.1
CYLINDER_U_MEAN = 1.0
CYLINDER_PROBES = ((0.15, 0.2), (0.25, 0.2))

TWO_PI = 2.0 * math.pi


# ----------------------------------------------------------------------
# manufactured solution

def kim_moin(x, y, t, nu=1.0):
    """Exact ``(u, v, p)`` of the decaying vortex array."""
    e = np.exp(-2.0 * nu * t)
    u = np.sin(TWO_PI * x) * np.cos(TWO_PI * y) * e
    v = -np.cos(TWO_PI * x) * np.sin(TWO_PI * y) * e
    p = -0.25 * (np.cos(2 * TWO_PI * x) + np.cos(2 * TWO_PI * y)) * e * e
    return u, v, p


@dataclass(frozen=True)
class ManufacturedSolution:
    """Vortex-array fields together with the body force that makes them exact.

    The fields decay like ``exp(-2 nu t)`` while the viscous term decays
    like ``8 pi^2 nu``, so a forcing is needed even though convection and
    the pressure gradient cancel only partially.
    """

    nu: float = 1.0

    def velocity(self, x, y, t):
        u, v, _ = kim_moin(x, y, t, self.nu)
        return u, v

    def pressure(self, x, y, t):
        return kim_moin(x, y, t, self.nu)[2]

    def velocity_gradient(self, x, y, t):
        """``((du/dx, du/dy), (dv/dx, dv/dy))``."""
        e = np.exp(-2.0 * self.nu * t)
        sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
        sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
        return ((TWO_PI * cx * cy * e, -TWO_PI * sx * sy * e),
                (TWO_PI * sx * sy * e, -TWO_PI * cx * cy * e))

    def forcing(self, x, y, t):
        u, v = self.velocity(x, y, t)
        k = (2 * TWO_PI ** 2 - 2.0) * self.nu
        e4 = np.exp(-4.0 * self.nu * t)
        return (k * u + TWO_PI * np.sin(2 * TWO_PI * x) * e4,
                k * v + TWO_PI * np.sin(2 * TWO_PI * y) * e4)

    def boundary(self):
        vel = self.velocity
        return BoundaryData(body=lambda x, y, t: vel(x, y, t),
                            wall=lambda x, y, t, tag: vel(x, y, t))


# ----------------------------------------------------------------------
# error norms

@dataclass
class ErrorReport:
    total_L2: float
    total_H1: float
    final_L2: float
    final_H1: float
    h: float = float("nan")
    dt: float = float("nan")
    geometry: str = ""
    steps: int = 0

    def __post_init__(self):
        for name in ("total_L2", "total_H1", "final_L2", "final_H1"):
            if not getattr(self, name) >= 0:
                raise NumericalError(f"{name} is not a non-negative number: {getattr(self, name)!r}")

    def as_dict(self):
        return {"h": self.h, "dt": self.dt, "total_L2": self.total_L2, "total_H1": self.total_H1,
                "final_L2": self.final_L2, "final_H1": self.final_H1, "geometry": self.geometry,
                "steps": self.steps}


def step_errors(mesh: MeshSnapshot, u, t, exact: ManufacturedSolution):
    """Squared norms over ``Omega_h``: ``(|e|_L2^2, |u|_L2^2, |e|_H1^2, |u|_H1^2)``."""
    nv = mesh.n_v
    e2 = n2 = g2 = m2 = 0.0
    for d in volume_data(mesh):
        X, Y = d.x[..., 0], d.x[..., 1]
        ue = exact.velocity(X, Y, t)
        ge = exact.velocity_gradient(X, Y, t)
        for c in range(2):
            uc = u[c * nv:(c + 1) * nv][d.dofs_v]
            uh = np.einsum("nqi,ni->nq", d.v, uc)
            gh = np.einsum("nqid,ni->nqd", d.dv, uc)
            e2 += float(np.sum(d.w * (uh - ue[c]) ** 2))
            n2 += float(np.sum(d.w * ue[c] ** 2))
            g2 += float(np.sum(d.w * ((gh[..., 0] - ge[c][0]) ** 2 + (gh[..., 1] - ge[c][1]) ** 2)))
            m2 += float(np.sum(d.w * (ge[c][0] ** 2 + ge[c][1] ** 2)))
    return e2, n2, e2 + g2, n2 + m2


class ErrorAccumulator:
    """Running sums for the time-accumulated relative errors."""

    def __init__(self, exact: ManufacturedSolution):
        self.exact = exact
        self.sums = np.zeros(4)
        self.last = np.zeros(4)
        self.steps = 0
        self.per_step = []

    def add(self, mesh, u, t):
        e = np.array(step_errors(mesh, u, t, self.exact))
        self.sums += e
        self.last = e
        self.steps += 1
        self.per_step.append((float(t), _ratio(e[0], e[1]), _ratio(e[2], e[3])))
        return e

    def report(self, h=float("nan"), dt=float("nan"), geometry=""):
        if self.steps == 0:
            raise InsufficientDataError("no time steps accumulated")
        s, f = self.sums, self.last
        return ErrorReport(_ratio(s[0], s[1]), _ratio(s[2], s[3]), _ratio(f[0], f[1]),
                           _ratio(f[2], f[3]), h, dt, geometry, self.steps)


def _ratio(a, b):
    return math.sqrt(a / b) if b > 0 else (0.0 if a == 0 else math.inf)


def error_norms(history, exact: ManufacturedSolution, h=float("nan"), dt=float("nan"),
                geometry="") -> ErrorReport:
    """Relative errors of a list of states ``t^1 .. t^N`` (each on its own snapshot)."""
    acc = ErrorAccumulator(exact)
    for st in history:
        acc.add(st.mesh, st.u, st.t)
    return acc.report(h, dt, geometry)


def observed_order(h, err):
    """Least-squares slope of ``log err`` against ``log h``."""
    h = np.asarray(h, float)
    err = np.asarray(err, float)
    if len(h) < 2:
        raise InsufficientDataError("an observed order needs at least two levels")
    if np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


# ----------------------------------------------------------------------
# point evaluation and boundary integrals

def _locate(grid: CartesianGrid, x, y):
    h = grid.h
    i = np.clip(np.floor((np.asarray(x, float) - grid.x_min) / h).astype(int), 0, grid.nx - 1)
    j = np.clip(np.floor((np.asarray(y, float) - grid.y_min) / h).astype(int), 0, grid.ny - 1)
    cell = j * grid.nx + i
    xref = np.stack([(x - grid.x_min) / h - i, (y - grid.y_min) / h - j], axis=-1)
    return cell, xref


def evaluate_pressure(mesh: MeshSnapshot, p, points):
    """Q1 interpolation of the pressure at ``points`` (n, 2); NaN off the active mesh."""
    pts = np.atleast_2d(np.asarray(points, float))
    cell, xref = _locate(mesh.grid, pts[:, 0], pts[:, 1])
    ids = mesh.nodes.p_index[mesh.grid.cell_p_nodes()[cell]]
    out = np.full(len(pts), np.nan)
    ok = np.all(ids >= 0, axis=1)
    vals = Q1.values(xref[ok])
    out[ok] = np.einsum("ni,ni->n", vals, np.asarray(p)[ids[ok]])
    return out


def evaluate_velocity(mesh: MeshSnapshot, u, points):
    """Q2 interpolation of both velocity components at ``points``; returns (n, 2)."""
    pts = np.atleast_2d(np.asarray(points, float))
    cell, xref = _locate(mesh.grid, pts[:, 0], pts[:, 1])
    ids = mesh.nodes.v_index[mesh.grid.cell_v_nodes()[cell]]
    out = np.full((len(pts), 2), np.nan)
    ok = np.all(ids >= 0, axis=1)
    vals = Q2.values(xref[ok])
    nv = mesh.n_v
    for c in range(2):
        out[ok, c] = np.einsum("ni,ni->n", vals, np.asarray(u)[c * nv:(c + 1) * nv][ids[ok]])
    return out


def pressure_difference(mesh, p, a=CYLINDER_PROBES[0], b=CYLINDER_PROBES[1]):
    pa, pb = evaluate_pressure(mesh, p, [a, b])
    return float(pa - pb)


def forces_on_boundary(mesh: MeshSnapshot, u, p, nu):
    """``int (nu grad(u) - p I) n ds`` over the immersed boundary segments.

    ``n`` points out of the obstacle, so a positive first component is a
    force along ``+x`` on the body.
    """
    groups = [d for kind, d in boundary_data(mesh) if kind == "body"]
    if not groups:
        return 0.0, 0.0
    d = groups[0]
    nv = mesh.n_v
    n = -d.normal                                          # (cells, 2)
    ph = np.einsum("nqi,ni->nq", d.p, np.asarray(p)[d.dofs_p])
    F = np.zeros(2)
    for c in range(2):
        g = np.einsum("nqid,ni->nqd", d.dv, np.asarray(u)[c * nv:(c + 1) * nv][d.dofs_v])
        traction = nu * (g[..., 0] * n[:, None, 0] + g[..., 1] * n[:, None, 1]) - ph * n[:, None, c]
        F[c] = float(np.sum(d.w * traction))
    return float(F[0]), float(F[1])


def force_coefficients(F, u_mean=CYLINDER_U_MEAN, length=CYLINDER_L):
    s = 2.0 / (u_mean ** 2 * length)
    return s * F[0], s * F[1]


def wall_flux(mesh: MeshSnapshot, u, tag):
    """``int u . n ds`` over the box wall with index ``tag`` (outward normal)."""
    walls = mesh.bnd_wall
    if not len(walls):
        return 0.0
    keep = walls.tag == tag
    if not keep.any():
        return 0.0
    d = GroupData(mesh, walls.subset(keep), boundary=True)
    nv = mesh.n_v
    out = 0.0
    for c in range(2):
        uh = np.einsum("nqi,ni->nq", d.v, np.asarray(u)[c * nv:(c + 1) * nv][d.dofs_v])
        out += float(np.sum(d.w * uh * d.normal[:, None, c]))
    return out


# ----------------------------------------------------------------------
# force series and shedding frequency

@dataclass
class ForceSeries:
    t: List[float] = field(default_factory=list)
    cd: List[float] = field(default_factory=list)
    cl: List[float] = field(default_factory=list)
    dp: List[float] = field(default_factory=list)

    CSV_HEADER = ("t", "CD", "CL", "dp")

    def append(self, t, cd, cl, dp):
        self.t.append(float(t))
        self.cd.append(float(cd))
        self.cl.append(float(cl))
        self.dp.append(float(dp))

    def rows(self):
        return list(zip(self.t, self.cd, self.cl, self.dp))

    def arrays(self):
        return tuple(np.asarray(a, float) for a in (self.t, self.cd, self.cl, self.dp))

    def cd_max(self, t_min=4.0):
        t, cd, _, _ = self.arrays()
        return _peak_value(t, cd, t_min)

    def cl_max(self, t_min=4.0):
        t, _, cl, _ = self.arrays()
        return _peak_value(t, cl, t_min)

    def summary(self, t_min=4.0, length=CYLINDER_L, u_mean=CYLINDER_U_MEAN):
        """Frequency, Strouhal number, peak coefficients and the half-period ``dp``."""
        f, st = strouhal(self, t_min, length, u_mean)
        t, _, cl, dp = self.arrays()
        maxima = _maxima(t, cl, t_min)
        # last lift maximum that still has half a period of data after it
        t0 = None
        for tm, _ in reversed(maxima):
            if tm + 0.5 / f <= t[-1]:
                t0 = tm
                break
        dp_half = float(np.interp(t0 + 0.5 / f, t, dp)) if t0 is not None else float("nan")
        return {"frequency": f, "St": st, "CD_max": self.cd_max(t_min), "CL_max": self.cl_max(t_min),
                "dp_half_period": dp_half, "t0": t0}


def _maxima(t, y, t_min):
    """Local maxima after ``t_min`` refined by a parabola through each sample triple."""
    out = []
    for i in range(1, len(y) - 1):
        if t[i] <= t_min:
            continue
        if y[i] > y[i - 1] and y[i] >= y[i + 1]:
            t0, t1, t2 = t[i - 1], t[i], t[i + 1]
            y0, y1, y2 = y[i - 1], y[i], y[i + 1]
            den = (t0 - t1) * (t0 - t2) * (t1 - t2)
            a = (t2 * (y1 - y0) + t1 * (y0 - y2) + t0 * (y2 - y1)) / den
            b = (t2 * t2 * (y0 - y1) + t1 * t1 * (y2 - y0) + t0 * t0 * (y1 - y2)) / den
            if a < 0:
                tv = -b / (2 * a)
                c = y1 - a * t1 * t1 - b * t1
                out.append((tv, a * tv * tv + b * tv + c))
            else:
                out.append((t1, y1))
    return out


def _peak_value(t, y, t_min):
    m = _maxima(t, y, t_min)
    if m:
        return max(v for _, v in m)
    sel = t > t_min
    return float(np.max(y[sel])) if sel.any() else float("nan")


def strouhal(series, t_min=4.0, length=CYLINDER_L, u_mean=CYLINDER_U_MEAN):
    """Lift frequency from the mean gap between successive maxima; ``St = f L / U``.

    ``series`` is a :class:`ForceSeries` or a pair ``(t, C_L)``.
    """
    if isinstance(series, ForceSeries):
        t, _, cl, _ = series.arrays()
    else:
        t, cl = (np.asarray(a, float) for a in series)
    maxima = _maxima(t, cl, t_min)
    if len(maxima) < 3:
        raise InsufficientDataError(
            f"found {len(maxima)} lift maxima after t = {t_min}; at least 3 are needed")
    tm = np.array([m[0] for m in maxima])
    f = 1.0 / float(np.mean(np.diff(tm)))
    return f, f * length / u_mean


# ----------------------------------------------------------------------
# qualitative checks

def sign_changes(x, v):
    """Abscissae where ``v`` changes from positive to negative (linear interpolation)."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    out = []
    for i in range(len(v) - 1):
        if np.isfinite(v[i]) and np.isfinite(v[i + 1]) and v[i] > 0 >= v[i + 1]:
            out.append(x[i] + (x[i + 1] - x[i]) * v[i] / (v[i] - v[i + 1]))
    return out


def cavity_vortices(mesh: MeshSnapshot, u, y_line=None, samples=401, window=(0.3, 0.7)):
    """Clockwise vortex centres on a horizontal line.

    Along the line, the vertical velocity of a clockwise vortex turns from
    up to down at its centre.  ``y_line`` defaults to the height midway
    between the top of the obstacle and the lid.  Returns the centres and
    whether one lies in each of ``-window`` and ``+window``.
    """
    grid = mesh.grid
    if y_line is None:
        y_line = cavity_midline(mesh)
    x = np.linspace(grid.x_min, grid.x_max, samples)
    pts = np.stack([x, np.full_like(x, y_line)], axis=-1)
    inside = mesh.ls.phi(x, pts[:, 1], mesh.t) < 0
    v = evaluate_velocity(mesh, u, pts)[:, 1]
    v[~inside] = np.nan
    centres = sign_changes(x, v)
    lo, hi = window
    left = any(-hi <= c <= -lo for c in centres)
    right = any(lo <= c <= hi for c in centres)
    return {"y": float(y_line), "centres": [float(c) for c in centres], "left": left, "right": right,
            "two_vortices": bool(left and right)}


def cavity_midline(mesh: MeshSnapshot, samples=2001):
    """Height midway between the highest obstacle point on ``x = 0`` and the lid."""
    grid = mesh.grid
    y = np.linspace(grid.y_min, grid.y_max, samples)
    solid = mesh.ls.phi(np.zeros_like(y), y, mesh.t) >= 0
    top = y[solid].max() if solid.any() else grid.y_min
    return 0.5 * (top + grid.y_max)


# ----------------------------------------------------------------------
# scenarios

@dataclass
class Scenario:
    """Everything a run needs, resolved from a :class:`RunConfig`."""

    name: str
    grid: CartesianGrid
    ls: LevelSetField
    bc: BoundaryData
    nu: float
    forcing: Optional[Callable]
    exact: Optional[ManufacturedSolution]
    order: int
    dt: float
    t_end: float
    gamma: float
    lam: Optional[float]
    delta_snap: float
    band_width: float
    extension: dict


def build_scenario(cfg) -> Scenario:
    """Translate a resolved configuration into grid, geometry, data and time settings."""
    name = cfg["scenario.name"]
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}", "scenario.name")
    grid = CartesianGrid(cfg["grid.x_min"], cfg["grid.y_min"], cfg["grid.lx"], cfg["grid.ly"],
                         cfg["grid.nx"], cfg["grid.ny"])
    motion = MotionLaw(cfg["geometry.motion"], omega=cfg["geometry.omega"],
                       amplitude=cfg["geometry.amplitude"], frequency=cfg["geometry.frequency"],
                       radius=cfg["geometry.bubble_radius"])
    shape = cfg["geometry.shape"]
    params = {k: cfg[f"geometry.{k}"] for k in _SHAPE_KEYS[shape]}
    ls = LevelSetField(shape, params, motion)
    nu = cfg.nu
    exact = None
    forcing = None
    if name.startswith("kim_moin"):
        exact = ManufacturedSolution(nu)
        forcing = exact.forcing
        bc = exact.boundary()
    elif name == "turek_disk":
        U = cfg["physics.inflow_u"]
        H = grid.ly
        y0 = grid.y_min

        def wall(x, y, t, tag):
            s = y - y0
            ux = np.where(tag == 0, 4.0 * U * s * (H - s) / H ** 2, 0.0)
            return ux, np.zeros_like(ux)

        bc = BoundaryData(wall=wall, wall_kinds=("dirichlet", "do_nothing", "dirichlet", "dirichlet"))
    elif name == "driven_cavity":
        lid = cfg["physics.lid_u"]

        def wall(x, y, t, tag):
            ux = np.where(tag == 3, lid, 0.0)
            return ux, np.zeros_like(ux)

        bc = BoundaryData(wall=wall)
    else:
        body = ls.boundary_velocity
        bc = BoundaryData(body=lambda x, y, t: body(x, y, t))
    bc = BoundaryData(bc.body, bc.wall, bc.wall_kinds, cfg["physics.sbm"])
    from .config import resolve_dt
    return Scenario(name, grid, ls, bc, nu, forcing, exact, cfg["time.order"],
                    resolve_dt(cfg, grid.h), cfg["time.t_end"], cfg["penalty.gamma"],
                    cfg["penalty.lambda"], cfg["grid.delta_snap"], cfg["extrapolation.band"] * grid.h,
                    {"method": cfg["extrapolation.derivatives"], "solver": cfg["extrapolation.solver"],
                     "dtau": cfg["extrapolation.dtau"], "tol": cfg["extrapolation.tol"],
                     "supg": cfg["extrapolation.supg"]})


_SHAPE_KEYS = {"disk": ("radius", "cx", "cy"), "ellipse": ("a", "b", "theta", "cx", "cy"),
               "flower": ("a", "b")}


@dataclass
class Snapshot:
    t: float
    mesh: MeshSnapshot
    u: np.ndarray
    p: np.ndarray


@dataclass
class ScenarioResult:
    name: str
    scenario: Scenario
    state: State
    steps: List[StepInfo]
    penalties: List[float]
    report: Optional[ErrorReport] = None
    errors: Optional[ErrorAccumulator] = None
    forces: Optional[ForceSeries] = None
    energy: List[tuple] = field(default_factory=list)
    snapshots: List[Snapshot] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def constraint_violations(self):
        return sum(1 for s in self.steps if not s.extension.get("constraint_ok", True))

    @property
    def max_relative_divergence(self):
        return max((s.extension.get("relative_divergence", 0.0) for s in self.steps), default=0.0)


def run_scenario(cfg, progress: Optional[Callable] = None, snapshot_times=None) -> ScenarioResult:
    """Integrate the scenario described by ``cfg`` to its final time.

    ``progress(step, n_steps, info)`` is called after every step.  States
    nearest to ``snapshot_times`` (default from the configuration) are kept.
    """
    sc = build_scenario(cfg)
    t_start = time.perf_counter()
    tab = make_tableau(sc.order)
    n_steps = max(1, int(round(sc.t_end / sc.dt)))
    if abs(n_steps * sc.dt - sc.t_end) > 1e-9 * max(1.0, sc.t_end):
        log.info("t_end %.6g is not a multiple of dt %.6g; the run stops at %.6g",
                 sc.t_end, sc.dt, n_steps * sc.dt)
    dt = sc.dt
    penalties = []
    wall_kinds = sc.bc.wall_kinds

    def make_operator(mesh):
        lam = sc.lam
        if lam is None:
            lam = estimate_penalty(mesh, sc.gamma, wall_kinds).lam
        penalties.append(float(lam))
        return SaddleOperator(FEMSystem(mesh, sc.nu, lam, sc.bc, sc.forcing))

    domain = MovingDomain(sc.grid, sc.ls, make_operator, sc.delta_snap, sc.band_width, sc.extension)
    mesh = domain.snapshot(0.0)
    if sc.exact is not None:
        state = initial_state(mesh, "field", sc.exact.velocity)
    else:
        state = initial_state(mesh)
    times = cfg["output.snapshot_times"] if snapshot_times is None else snapshot_times
    pending = sorted(float(t) for t in times)
    result = ScenarioResult(sc.name, sc, state, [], penalties)
    if sc.exact is not None:
        result.errors = ErrorAccumulator(sc.exact)
    if sc.name == "turek_disk":
        result.forces = ForceSeries()
    if pending and pending[0] <= 0.5 * dt:
        result.snapshots.append(Snapshot(0.0, mesh, state.u.copy(), state.p.copy()))
        pending = [t for t in pending if t > 0.5 * dt]
    for k in range(n_steps):
        state, info = advance_moving(state, dt, tab, domain)
        ok = constraint_ok(info, state.u)
        info.extension = dict(info.extension)
        info.extension["constraint_ok"] = ok
        info.extension["relative_divergence"] = info.divergence_residual / (1 + float(np.linalg.norm(state.u)))
        result.steps.append(info)
        result.energy.append((state.t, 0.5 * info.u_norm ** 2))
        if result.errors is not None:
            result.errors.add(state.mesh, state.u, state.t)
        if result.forces is not None:
            F = forces_on_boundary(state.mesh, state.u, state.p, sc.nu)
            cd, cl = force_coefficients(F)
            result.forces.append(state.t, cd, cl, pressure_difference(state.mesh, state.p))
        while pending and abs(pending[0] - state.t) <= 0.5 * dt + 1e-12:
            result.snapshots.append(Snapshot(state.t, state.mesh, state.u.copy(), state.p.copy()))
            pending.pop(0)
        if progress is not None:
            progress(k + 1, n_steps, info)
    result.state = state
    if result.errors is not None:
        result.report = result.errors.report(sc.grid.h, dt, sc.ls.shape)
    result.checks = scenario_checks(result)
    result.wall_seconds = time.perf_counter() - t_start
    return result


def scenario_checks(result: ScenarioResult):
    """Conservation and boundedness checks plus the scenario's qualitative test."""
    st = result.state
    out = {"finite": bool(np.all(np.isfinite(st.u)) and np.all(np.isfinite(st.p))),
           "constraint_violations": result.constraint_violations,
           "max_relative_divergence": result.max_relative_divergence}
    sc = result.scenario
    if result.energy:
        e = np.array([v for _, v in result.energy])
        out["max_kinetic_energy"] = float(e.max())
        out["final_kinetic_energy"] = float(e[-1])
    if sc.name == "driven_cavity":
        out["vortices"] = cavity_vortices(st.mesh, st.u)
    elif sc.name in ("rotating_flower", "oscillating_bubble", "ellipsoidal_bubble"):
        speed = _max_boundary_speed(sc, st.mesh)
        bound = st.mesh.area() * speed ** 2
        out["energy_bound"] = bound
        out["energy_bounded"] = bool(out.get("max_kinetic_energy", 0.0) <= bound)
    elif sc.name == "turek_disk":
        inflow = -wall_flux(st.mesh, st.u, 0)
        outflow = wall_flux(st.mesh, st.u, 1)
        out["inflow_flux"] = inflow
        out["outflow_flux"] = outflow
        out["flux_balance"] = abs(outflow - inflow) / max(abs(inflow), 1e-300)
        if result.forces is not None:
            try:
                out["forces"] = result.forces.summary()
            except InsufficientDataError as exc:
                out["forces"] = {"error": str(exc)}
    return out


def _max_boundary_speed(sc: Scenario, mesh: MeshSnapshot):
    """Largest obstacle surface speed over one period (sampled on the current boundary)."""
    pts = np.concatenate([g.surf_points for g in mesh.cut_geometry]) if mesh.cut_geometry else np.zeros((1, 2))
    speed = 0.0
    period = 1.0 / sc.ls.motion.frequency if sc.ls.motion.is_bubble else 1.0
    for t in np.linspace(0.0, period, 41):
        ux, uy = sc.ls.boundary_velocity(pts[:, 0], pts[:, 1], t)
        speed = max(speed, float(np.max(np.hypot(ux, uy))))
    return speed


def converge(cfg, levels=3, progress: Optional[Callable] = None, workers=1):
    """Run the scenario on ``nx * 2^k`` cells for ``k < levels``.

    Returns the error reports and the observed orders of the four norms.
    """
    if levels < 2:
        raise ConfigError("a convergence study needs at least two levels", "converge.levels")
    if not cfg["scenario.name"].startswith("kim_moin"):
        raise ConfigError("convergence studies need the manufactured solution", "scenario.name")
    configs = [cfg.refined(2 ** k) for k in range(levels)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_converge_one, configs))
    else:
        reports = []
        for c in configs:
            reports.append(_converge_one(c))
            if progress is not None:
                progress(reports[-1])
    h = [r.h for r in reports]
    orders = {k: observed_order(h, [getattr(r, k) for r in reports])
              for k in ("total_L2", "total_H1", "final_L2", "final_H1")}
    return reports, orders


def _converge_one(cfg):
    return run_scenario(cfg, snapshot_times=[]).report
