"""Implicit obstacle geometry: level sets, prescribed motion, cut points and
closest-point projection.

The fluid occupies ``{phi < 0}``; the obstacle is ``{phi >= 0}``.  All
evaluation routines are vectorised over numpy arrays of coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AmbiguousCutError, ConfigError, DegenerateGeometryError, NonConvergenceError

SHAPES = ("disk", "ellipse", "flower", "custom")
MOTIONS = ("static", "rotation", "bubble_translation", "bubble_ellipsoidal")

_FLOWER_R_MIN = 1e-12

DEFAULT_PARAMS = {
    "disk": {"radius": 1.0 / math.sqrt(15.0), "cx": 0.0, "cy": 0.0},
    "ellipse": {"a": 1.0 / math.sqrt(14.0), "b": 1.0 / math.sqrt(2.0), "theta": math.pi / 6.0,
                "cx": 0.0, "cy": 0.0},
    "flower": {"a": 0.5, "b": 0.15},
    "custom": {},
}


@dataclass(frozen=True)
class MotionLaw:
    """Prescribed obstacle motion.

    ``rotation`` composes the static shape with the rotated coordinates
    ``(x~, y~) = R(omega t) (x, y)``.  The two bubble kinds describe a
    circle of radius ``radius`` whose centre and semi-axes follow
    ``A sin(2 pi f t)`` laws.
    """

    kind: str = "static"
    omega: float = 0.0
    amplitude: float = 0.01
    frequency: float = 10.0
    radius: float = 0.258

    def __post_init__(self):
        if self.kind not in MOTIONS:
            raise ConfigError(f"unknown motion kind {self.kind!r}", "geometry.motion")

    @property
    def is_bubble(self):
        return self.kind.startswith("bubble")

    # bubble laws ------------------------------------------------------
    def center(self, t):
        if self.kind == "bubble_translation":
            return 0.0, self.amplitude * math.sin(2 * math.pi * self.frequency * t)
        return 0.0, 0.0

    def center_rate(self, t):
        if self.kind == "bubble_translation":
            w = 2 * math.pi * self.frequency
            return 0.0, self.amplitude * w * math.cos(w * t)
        return 0.0, 0.0

    def semi_axes(self, t):
        """Return ``(delta_xi, delta_zeta)``."""
        if self.kind == "bubble_ellipsoidal":
            dz = self.radius * (1.0 + self.amplitude * math.sin(2 * math.pi * self.frequency * t))
            return math.sqrt(self.radius ** 3 / dz), dz
        return self.radius, self.radius

    def semi_axes_rate(self, t):
        if self.kind == "bubble_ellipsoidal":
            w = 2 * math.pi * self.frequency
            dz = self.radius * (1.0 + self.amplitude * math.sin(w * t))
            dz_rate = self.radius * self.amplitude * w * math.cos(w * t)
            # d/dt sqrt(R^3 / dz)
            dx_rate = -0.5 * math.sqrt(self.radius ** 3) * dz ** -1.5 * dz_rate
            return dx_rate, dz_rate
        return 0.0, 0.0


class LevelSetField:
    """Time dependent level set ``phi(x, y, t)`` with gradient access.

    Built-in shapes carry analytic gradients; ``custom`` shapes take a
    callable ``func(x, y)`` and use central differences.
    """

    def __init__(self, shape: str = "disk", params: Optional[dict] = None,
                 motion: Optional[MotionLaw] = None,
                 func: Optional[Callable] = None, fd_step: float = 1e-6):
        if shape not in SHAPES:
            raise ConfigError(f"unknown shape {shape!r}", "geometry.shape")
        if shape == "custom" and func is None:
            raise ConfigError("custom shape requires a callable", "geometry.shape")
        self.shape = shape
        merged = dict(DEFAULT_PARAMS[shape])
        for key, value in (params or {}).items():
            if key not in merged:
                raise ConfigError(f"unknown parameter {key!r} for shape {shape}",
                                  f"geometry.{key}")
            merged[key] = float(value)
        self.params = merged
        self.motion = motion or MotionLaw()
        self.func = func
        self.fd_step = fd_step

    @property
    def is_moving(self):
        return self.motion.kind != "static"

    # static shapes ----------------------------------------------------
    def _phi0(self, x, y):
        p = self.params
        if self.shape == "disk":
            return p["radius"] - np.hypot(x - p["cx"], y - p["cy"])
        if self.shape == "ellipse":
            c, s = math.cos(p["theta"]), math.sin(p["theta"])
            xi = c * (x - p["cx"]) - s * (y - p["cy"])
            eta = s * (x - p["cx"]) + c * (y - p["cy"])
            return 1.0 - xi ** 2 / p["a"] ** 2 - eta ** 2 / p["b"] ** 2
        if self.shape == "flower":
            r = np.maximum(np.hypot(x, y), _FLOWER_R_MIN)
            lobes = y ** 5 + 5 * x ** 4 * y - 10 * x ** 2 * y ** 3
            return p["a"] - r + p["b"] * lobes / r ** 5
        return np.asarray(self.func(x, y), dtype=float)

    def _grad0(self, x, y):
        p = self.params
        if self.shape == "disk":
            dx, dy = x - p["cx"], y - p["cy"]
            r = np.hypot(dx, dy)
            with np.errstate(invalid="ignore", divide="ignore"):
                return -dx / r, -dy / r
        if self.shape == "ellipse":
            c, s = math.cos(p["theta"]), math.sin(p["theta"])
            xi = c * (x - p["cx"]) - s * (y - p["cy"])
            eta = s * (x - p["cx"]) + c * (y - p["cy"])
            fa, fb = 2 * xi / p["a"] ** 2, 2 * eta / p["b"] ** 2
            return -fa * c - fb * s, fa * s - fb * c
        if self.shape == "flower":
            r = np.maximum(np.hypot(x, y), _FLOWER_R_MIN)
            lobes = y ** 5 + 5 * x ** 4 * y - 10 * x ** 2 * y ** 3
            lx = 20 * x ** 3 * y - 20 * x * y ** 3
            ly = 5 * y ** 4 + 5 * x ** 4 - 30 * x ** 2 * y ** 2
            gx = -x / r + p["b"] * (lx / r ** 5 - 5 * lobes * x / r ** 7)
            gy = -y / r + p["b"] * (ly / r ** 5 - 5 * lobes * y / r ** 7)
            return gx, gy
        e = self.fd_step
        gx = (self._phi0(x + e, y) - self._phi0(x - e, y)) / (2 * e)
        gy = (self._phi0(x, y + e) - self._phi0(x, y - e)) / (2 * e)
        return gx, gy

    def _rotate(self, x, y, t):
        wt = self.motion.omega * t
        c, s = math.cos(wt), math.sin(wt)
        return c * x - s * y, s * x + c * y, c, s

    # public -----------------------------------------------------------
    def phi(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kind = self.motion.kind
        if kind == "rotation":
            xr, yr, _, _ = self._rotate(x, y, t)
            return self._phi0(xr, yr)
        if self.motion.is_bubble:
            xc, yc = self.motion.center(t)
            dxi, dzeta = self.motion.semi_axes(t)
            if kind == "bubble_translation":
                return self.motion.radius - np.hypot(x - xc, y - yc)
            return 1.0 - ((x - xc) / dxi) ** 2 - ((y - yc) / dzeta) ** 2
        return self._phi0(x, y)

    def grad(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kind = self.motion.kind
        if kind == "rotation":
            xr, yr, c, s = self._rotate(x, y, t)
            gx, gy = self._grad0(xr, yr)
            # chain rule with the transpose of the rotation
            return c * gx + s * gy, -s * gx + c * gy
        if self.motion.is_bubble:
            xc, yc = self.motion.center(t)
            dxi, dzeta = self.motion.semi_axes(t)
            if kind == "bubble_translation":
                dx, dy = x - xc, y - yc
                r = np.hypot(dx, dy)
                with np.errstate(invalid="ignore", divide="ignore"):
                    return -dx / r, -dy / r
            return -2 * (x - xc) / dxi ** 2, -2 * (y - yc) / dzeta ** 2
        return self._grad0(x, y)

    def boundary_velocity(self, x, y, t=0.0):
        """Velocity of the obstacle surface at points ``(x, y)`` on it."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kind = self.motion.kind
        if kind == "rotation":
            # material points follow x(t) = R(-omega t) x0
            w = self.motion.omega
            return w * y, -w * x
        if self.motion.is_bubble:
            xc, yc = self.motion.center(t)
            theta = np.arctan2(y - yc, x - xc)
            return bubble_boundary_velocity(self.motion, theta, t)
        return np.zeros_like(x), np.zeros_like(y)


def eval_phi(ls: LevelSetField, p, t=0.0):
    p = np.asarray(p, dtype=float)
    return ls.phi(p[..., 0], p[..., 1], t)


def boundary_normal(ls: LevelSetField, p, t=0.0, min_grad=1e-8):
    """Unit normal ``grad phi / |grad phi|``, pointing from the fluid into the obstacle."""
    p = np.asarray(p, dtype=float)
    gx, gy = ls.grad(p[..., 0], p[..., 1], t)
    norm = np.hypot(gx, gy)
    if np.any(~(norm >= min_grad)):
        raise DegenerateGeometryError("vanishing level-set gradient")
    return np.stack([gx / norm, gy / norm], axis=-1)


def intersect_cell(corner_phis, corners):
    """Crossings of the zero level with the edge cycle k0->k1->k2->k3->k0.

    ``A`` is the crossing leaving the fluid (trailing corner inside),
    ``B`` the one entering it.
    """
    phis = [float(v) for v in corner_phis]
    pts = [np.asarray(c, dtype=float) for c in corners]
    a = b = None
    changes = 0
    for i in range(4):
        p0, p1 = phis[i], phis[(i + 1) % 4]
        if p0 * p1 < 0:
            changes += 1
            theta = p0 / (p0 - p1)
            point = theta * pts[(i + 1) % 4] + (1 - theta) * pts[i]
            if p0 < 0:
                a = point
            else:
                b = point
    if changes != 2:
        raise AmbiguousCutError(f"cell has {changes} sign changes along its edges")
    return a, b


def bubble_boundary_velocity(motion: MotionLaw, theta, t):
    if not motion.is_bubble:
        raise ConfigError("bubble velocity requested for a non-bubble motion", "geometry.motion")
    theta = np.asarray(theta, dtype=float)
    uc, vc = motion.center_rate(t)
    dxr, dzr = motion.semi_axes_rate(t)
    return uc + dxr * np.cos(theta), vc + dzr * np.sin(theta)


@dataclass
class ProjectionResult:
    z: np.ndarray
    iterations: int
    residual: np.ndarray = field(repr=False)


def project_to_boundary(ls: LevelSetField, x, t=0.0, h=1.0, relaxation=1.0, max_iter=200):
    """Closest-point projection onto ``{phi = 0}`` by the fixed point
    ``x <- x - relaxation * phi grad(phi) / |grad(phi)|^2``.

    Iterates until every step is shorter than ``1e-2 h^2``.  Accepts a single
    point or an ``(n, 2)`` array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = np.atleast_2d(x).copy()
    toll = 1e-2 * h * h
    active = np.ones(len(z), dtype=bool)
    k = 0
    while active.any():
        if k >= max_iter:
            res = np.abs(ls.phi(z[:, 0], z[:, 1], t))
            raise NonConvergenceError(
                f"closest-point projection did not converge in {max_iter} iterations "
                f"({int(active.sum())} points, max |phi| = {res[active].max():.3e})",
                iterations=k, residual=float(res[active].max()))
        za = z[active]
        ph = ls.phi(za[:, 0], za[:, 1], t)
        gx, gy = ls.grad(za[:, 0], za[:, 1], t)
        g2 = gx * gx + gy * gy
        if np.any(~(g2 > 0)):
            raise DegenerateGeometryError("vanishing gradient along projection path")
        step = -relaxation * np.stack([ph * gx / g2, ph * gy / g2], axis=-1)
        z[active] = za + step
        done = np.hypot(step[:, 0], step[:, 1]) <= toll
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        k += 1
    residual = np.abs(ls.phi(z[:, 0], z[:, 1], t))
    if single:
        return ProjectionResult(z[0], k, residual[0])
    return ProjectionResult(z, k, residual)
