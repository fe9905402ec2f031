"""Run configuration: a flat sectioned key/value document.

Grammar (``configparser`` syntax, one level of sections)::

    [scenario]   name
    [geometry]   shape, radius, cx, cy, a, b, theta, motion, omega,
                 amplitude, frequency, bubble_radius
    [grid]       nx, ny, x_min, y_min, lx, ly, delta_snap
    [physics]    nu | re, sbm, inflow_u, lid_u
    [time]       t_end, dt, order
    [penalty]    gamma, lambda
    [extrapolation]  band (multiples of h), dtau, tol, solver, derivatives, supg
    [output]     directory, snapshot_times, formats

Lists are comma separated.  ``none`` means "not set" for optional keys.
Every key missing from the document is filled from the scenario defaults
and recorded, so the resolved configuration is complete.
"""
from __future__ import annotations

import configparser
import copy
import math

from .errors import ConfigError

_FLOAT, _INT, _STR, _FLOATS, _STRS = "float", "int", "str", "float list", "str list"

SCHEMA = {
    "scenario": {"name": _STR},
    "geometry": {"shape": _STR, "radius": _FLOAT, "cx": _FLOAT, "cy": _FLOAT, "a": _FLOAT,
                 "b": _FLOAT, "theta": _FLOAT, "motion": _STR, "omega": _FLOAT,
                 "amplitude": _FLOAT, "frequency": _FLOAT, "bubble_radius": _FLOAT},
    "grid": {"nx": _INT, "ny": _INT, "x_min": _FLOAT, "y_min": _FLOAT, "lx": _FLOAT, "ly": _FLOAT,
             "delta_snap": _FLOAT},
    "physics": {"nu": _FLOAT, "re": _FLOAT, "sbm": _STR, "inflow_u": _FLOAT, "lid_u": _FLOAT},
    "time": {"t_end": _FLOAT, "dt": _FLOAT, "order": _INT},
    "penalty": {"gamma": _FLOAT, "lambda": _FLOAT},
    "extrapolation": {"band": _FLOAT, "dtau": _FLOAT, "tol": _FLOAT, "solver": _STR,
                      "derivatives": _STR, "supg": _FLOAT},
    "output": {"directory": _STR, "snapshot_times": _FLOATS, "formats": _STRS},
}

OPTIONAL = {("physics", "nu"), ("physics", "re"), ("time", "dt"), ("penalty", "lambda"),
            ("extrapolation", "dtau"), ("extrapolation", "tol")}

FORMATS = ("csv", "vtk", "svg")

BASE = {
    "geometry": {"shape": "disk", "radius": 1.0 / math.sqrt(15.0), "cx": 0.0, "cy": 0.0,
                 "a": 0.5, "b": 0.15, "theta": math.pi / 6.0, "motion": "static", "omega": 0.0,
                 "amplitude": 0.01, "frequency": 10.0, "bubble_radius": 0.258},
    "grid": {"nx": 32, "ny": 32, "x_min": -1.0, "y_min": -1.0, "lx": 2.0, "ly": 2.0,
             "delta_snap": 1e-2},
    "physics": {"nu": None, "re": None, "sbm": "off", "inflow_u": 1.5, "lid_u": 1.0},
    "time": {"t_end": 0.25, "dt": None, "order": 2},
    "penalty": {"gamma": 1.1, "lambda": None},
    "extrapolation": {"band": 3.0, "dtau": None, "tol": None, "solver": "direct",
                      "derivatives": "nodal", "supg": 0.5},
    "output": {"directory": "", "snapshot_times": None, "formats": ["csv", "vtk", "svg"]},
}

_ELLIPSE = {"shape": "ellipse", "a": 1.0 / math.sqrt(14.0), "b": 1.0 / math.sqrt(2.0)}
_FLOWER = {"shape": "flower", "a": 0.5, "b": 0.15}

SCENARIO_DEFAULTS = {
    "kim_moin_static": {"physics": {"nu": 1.0}},
    "kim_moin_moving": {"geometry": dict(_ELLIPSE, motion="rotation", omega=2 * math.pi / 5),
                        "physics": {"nu": 1.0}, "time": {"order": 3}},
    "turek_disk": {"geometry": {"shape": "disk", "radius": 0.05, "cx": 0.2, "cy": 0.2},
                   "grid": {"nx": 220, "ny": 41, "x_min": 0.0, "y_min": 0.0, "lx": 2.2, "ly": 0.41},
                   "physics": {"nu": 1e-3}, "time": {"t_end": 10.0, "dt": 0.01}},
    "driven_cavity": {"geometry": dict(_FLOWER), "grid": {"nx": 100, "ny": 100},
                      "physics": {"re": 1.0}, "time": {"t_end": 10.0}},
    # the level set is phi0(R(omega t) x): a negative omega turns the body anticlockwise
    "rotating_flower": {"geometry": dict(_FLOWER, motion="rotation", omega=-2 * math.pi / 5),
                        "grid": {"nx": 60, "ny": 60}, "physics": {"re": 100.0},
                        "time": {"t_end": 10.0}},
    "oscillating_bubble": {"geometry": {"shape": "disk", "motion": "bubble_translation"},
                           "grid": {"nx": 128, "ny": 128, "x_min": -2.0, "y_min": -2.0,
                                    "lx": 4.0, "ly": 4.0},
                           "physics": {"re": 0.1}, "time": {"t_end": 0.1, "dt": 0.0025}},
    "ellipsoidal_bubble": {"geometry": {"shape": "disk", "motion": "bubble_ellipsoidal"},
                           "grid": {"nx": 128, "ny": 128, "x_min": -2.0, "y_min": -2.0,
                                    "lx": 4.0, "ly": 4.0},
                           "physics": {"re": 0.1}, "time": {"t_end": 0.1, "dt": 0.0025}},
}

SHAPES = ("disk", "ellipse", "flower")
MOTIONS = ("static", "rotation", "bubble_translation", "bubble_ellipsoidal")
SOLVERS = ("direct", "pseudo_time")
DERIVATIVES = ("lumped", "nodal")
SBM = ("off", "taylor", "project")


class RunConfig:
    """Resolved configuration; ``cfg["section.key"]`` reads a value.

    ``explicit`` holds the ``section.key`` paths given in the document; all
    other values are defaults.
    """

    def __init__(self, values, explicit=()):
        self.values = values
        self.explicit = frozenset(explicit)

    def __getitem__(self, path):
        section, key = path.split(".", 1)
        return self.values[section][key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __repr__(self):
        return f"RunConfig({self.values['scenario']['name']!r})"

    @property
    def name(self):
        return self.values["scenario"]["name"]

    @property
    def nu(self):
        return self.values["physics"]["nu"]

    @property
    def h(self):
        return self.values["grid"]["lx"] / self.values["grid"]["nx"]

    @property
    def is_moving(self):
        return self.values["geometry"]["motion"] != "static"

    def replace(self, **changes):
        """Copy with ``section__key=value`` overrides, resolved and validated again."""
        values = copy.deepcopy(self.values)
        explicit = set(self.explicit)
        for k, v in changes.items():
            section, key = k.split("__", 1)
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError("unknown key", f"{section}.{key}")
            values[section][key] = v
            explicit.add(f"{section}.{key}")
        if "physics__re" in changes and "physics__nu" not in changes:
            values["physics"]["nu"] = None
        if "physics__nu" in changes and "physics__re" not in changes:
            values["physics"]["re"] = None
        return _finish(values, explicit)

    def refined(self, factor):
        """Same run on ``factor`` times as many cells per direction (time step by rule)."""
        g = self.values["grid"]
        changes = {"grid__nx": g["nx"] * factor, "grid__ny": g["ny"] * factor}
        if "time.dt" not in self.explicit:
            changes["time__dt"] = None
        elif factor != 1:
            changes["time__dt"] = self.values["time"]["dt"] / factor
        cfg = self.replace(**changes)
        if "time.dt" not in self.explicit:
            cfg.explicit = cfg.explicit - {"time.dt"}
        return cfg

    def defaults(self):
        return sorted(f"{s}.{k}" for s, sec in self.values.items() for k in sec
                      if f"{s}.{k}" not in self.explicit)

    def to_text(self):
        return serialize(self)


def _parse_value(raw, kind, path):
    raw = raw.strip()
    if raw.lower() == "none":
        if tuple(path.split(".")) in OPTIONAL:
            return None
        raise ConfigError(f"value required (expected {kind})", path)
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind == _FLOATS:
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == _STRS:
            return [v.strip() for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {kind}", path) from None


def _format_value(value, kind):
    if value is None:
        return "none"
    if kind == _FLOAT:
        return repr(float(value))
    if kind == _FLOATS:
        return ", ".join(repr(float(v)) for v in value)
    if kind == _STRS:
        return ", ".join(value)
    return str(value)


def parse_config(text) -> RunConfig:
    """Parse and resolve a configuration document."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    given = {}
    explicit = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError("unknown section", section)
        given[section] = {}
        for key, raw in parser.items(section):
            path = f"{section}.{key}"
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", path)
            given[section][key] = _parse_value(raw, SCHEMA[section][key], path)
            explicit.add(path)
    name = given.get("scenario", {}).get("name")
    if name is None:
        raise ConfigError("scenario name is required", "scenario.name")
    if name not in SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {name!r} (one of {', '.join(SCENARIO_DEFAULTS)})",
                          "scenario.name")
    values = default_values(name)
    for section, kv in given.items():
        values[section].update(kv)
    # the viscosity may be given as nu or as Re = 1/nu; an explicit one wins
    ph = given.get("physics", {})
    if "nu" in ph and "re" not in ph:
        values["physics"]["re"] = None
    elif "re" in ph and "nu" not in ph:
        values["physics"]["nu"] = None
    return _finish(values, explicit)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", str(path)) from None
    return parse_config(text)


def default_values(name):
    values = copy.deepcopy(BASE)
    values["scenario"] = {"name": name}
    for section, kv in SCENARIO_DEFAULTS[name].items():
        values[section].update(copy.deepcopy(kv))
    return values


def scenario_config(name, **changes) -> RunConfig:
    """Default configuration of ``name`` with ``section__key`` overrides."""
    if name not in SCENARIO_DEFAULTS:
        raise ConfigError(f"unknown scenario {name!r}", "scenario.name")
    cfg = _finish(default_values(name), {"scenario.name"})
    return cfg.replace(**changes) if changes else cfg


def _finish(values, explicit) -> RunConfig:
    ph = values["physics"]
    nu, re = ph["nu"], ph["re"]
    if nu is None and re is None:
        raise ConfigError("either nu or re must be set", "physics.nu")
    if nu is not None and re is not None:
        if not math.isclose(nu * re, 1.0, rel_tol=1e-12):
            raise ConfigError(f"nu = {nu!r} and re = {re!r} disagree (nu = 1/re)", "physics.re")
    elif nu is None:
        if not re > 0:
            raise ConfigError("Reynolds number must be positive", "physics.re")
        ph["nu"] = 1.0 / re
    else:
        if not nu > 0:
            raise ConfigError("viscosity must be positive", "physics.nu")
        ph["re"] = 1.0 / nu
    out = values["output"]
    if not out["directory"]:
        out["directory"] = f"runs/{values['scenario']['name']}"
    if out["snapshot_times"] is None:
        out["snapshot_times"] = [values["time"]["t_end"]]
    cfg = RunConfig(values, explicit)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    v = cfg.values
    g = v["grid"]
    if g["nx"] < 1 or g["ny"] < 1:
        raise ConfigError("cell counts must be positive", "grid.nx")
    if not (g["lx"] > 0 and g["ly"] > 0):
        raise ConfigError("box lengths must be positive", "grid.lx")
    hx, hy = g["lx"] / g["nx"], g["ly"] / g["ny"]
    if abs(hx - hy) > 1e-9 * max(hx, hy):
        raise ConfigError(f"non-square cells: hx = {hx!r}, hy = {hy!r}", "grid")
    if not 0 <= g["delta_snap"] < 0.5:
        raise ConfigError("snapping threshold must lie in [0, 0.5)", "grid.delta_snap")
    geo = v["geometry"]
    if geo["shape"] not in SHAPES:
        raise ConfigError(f"unknown shape {geo['shape']!r}", "geometry.shape")
    if geo["motion"] not in MOTIONS:
        raise ConfigError(f"unknown motion {geo['motion']!r}", "geometry.motion")
    t = v["time"]
    if t["order"] not in (2, 3):
        raise ConfigError(f"unsupported IMEX order {t['order']!r} (use 2 or 3)", "time.order")
    if t["dt"] is not None and not t["dt"] > 0:
        raise ConfigError(f"time step must be positive, got {t['dt']!r}", "time.dt")
    if not t["t_end"] > 0:
        raise ConfigError("final time must be positive", "time.t_end")
    pen = v["penalty"]
    if not pen["gamma"] > 1:
        raise ConfigError(f"safety factor must exceed 1, got {pen['gamma']!r}", "penalty.gamma")
    if pen["lambda"] is not None and not pen["lambda"] > 0:
        raise ConfigError("penalty override must be positive", "penalty.lambda")
    ex = v["extrapolation"]
    if not ex["band"] > 0:
        raise ConfigError("band width must be positive", "extrapolation.band")
    if cfg.is_moving and ex["band"] < 3:
        raise ConfigError(f"band of {ex['band']!r} h is below 3 h for a moving geometry",
                          "extrapolation.band")
    if ex["solver"] not in SOLVERS:
        raise ConfigError(f"unknown extension solver {ex['solver']!r}", "extrapolation.solver")
    if ex["derivatives"] not in DERIVATIVES:
        raise ConfigError(f"unknown derivative method {ex['derivatives']!r}", "extrapolation.derivatives")
    for key in ("dtau", "tol"):
        if ex[key] is not None and not ex[key] > 0:
            raise ConfigError("must be positive", f"extrapolation.{key}")
    if v["physics"]["sbm"] not in SBM:
        raise ConfigError(f"unknown boundary-data mode {v['physics']['sbm']!r}", "physics.sbm")
    bad = [f for f in v["output"]["formats"] if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown output formats {bad}", "output.formats")
    if any(s < 0 for s in v["output"]["snapshot_times"]):
        raise ConfigError("snapshot times must be non-negative", "output.snapshot_times")


def resolve_dt(cfg: RunConfig, h=None):
    """The configured time step, or ``h`` (order 2) / ``h / 2`` (order 3)."""
    dt = cfg["time.dt"]
    if dt is not None:
        return dt
    h = cfg.h if h is None else h
    return h if cfg["time.order"] == 2 else h / 2


def serialize(cfg: RunConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, kind in keys.items():
            lines.append(f"{key} = {_format_value(cfg.values[section][key], kind)}")
        lines.append("")
    return "\n".join(lines)
