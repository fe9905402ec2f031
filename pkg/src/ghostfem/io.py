"""Output files: CSV series, legacy VTK grids, SVG convergence plots, the run
manifest and exclusive output directories.

Everything is written to a temporary file in the target directory and
renamed into place.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, GhostFEMError


class OutputError(GhostFEMError):
    """Raised when an output file or directory cannot be written."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DirectoryLockedError(OutputError):
    pass


def atomic_write(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(d, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputError(exc.strerror or str(exc), path) from None


def fmt(v):
    """17 significant digits; integers and strings pass through."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row of length {len(r)} for {len(header)} columns")
        lines.append(",".join(fmt(v) for v in r))
    atomic_write(path, "\n".join(lines) + "\n")


def write_series_csv(series, path, header=("t", "CD", "CL", "dp")):
    """``series`` is a ForceSeries or a sequence of rows matching ``header``."""
    rows = series.rows() if hasattr(series, "rows") else list(series)
    if hasattr(series, "CSV_HEADER"):
        header = series.CSV_HEADER
    if not rows:
        raise ValueError("empty series")
    write_csv(path, header, rows)


ERRORS_HEADER = ("h", "dt", "total_L2", "total_H1", "final_L2", "final_H1",
                 "order_total_L2", "order_total_H1", "order_final_L2", "order_final_H1")


def write_errors_csv(reports, orders, path):
    """One row per level; the observed orders fill the last columns of each row."""
    rows = []
    for r in reports:
        rows.append((r.h, r.dt, r.total_L2, r.total_H1, r.final_L2, r.final_H1,
                     orders["total_L2"], orders["total_H1"], orders["final_L2"], orders["final_H1"]))
    write_csv(path, ERRORS_HEADER, rows)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


# ----------------------------------------------------------------------
# legacy VTK

def write_vtk(path, points, quads, point_data=None, title="ghostfem"):
    """ASCII unstructured grid of quadrilaterals.

    ``point_data`` maps names to arrays of shape (n,) (scalars) or (n, 2)
    (vectors, padded with a zero third component).
    """
    pts = np.asarray(points, float)
    quads = np.asarray(quads, dtype=np.int64)
    n = len(pts)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{fmt(x)} {fmt(y)} 0" for x, y in pts]
    out.append(f"CELLS {len(quads)} {5 * len(quads)}")
    out += ["4 " + " ".join(str(int(i)) for i in q) for q in quads]
    out.append(f"CELL_TYPES {len(quads)}")
    out += ["9"] * len(quads)
    if point_data:
        out.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            a = np.asarray(arr, float)
            if a.shape[0] != n:
                raise ValueError(f"point field {name!r} has {a.shape[0]} values for {n} points")
            if a.ndim == 2:
                out.append(f"VECTORS {name} double")
                out += [f"{fmt(u)} {fmt(v)} 0" for u, v in a]
            else:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out += [fmt(v) for v in a]
    atomic_write(path, "\n".join(out) + "\n")


def lattice_quads(grid, cells):
    """The four sub-quadrilaterals of each Q2 cell as lattice node ids."""
    nodes = grid.cell_v_nodes()[np.asarray(cells, dtype=np.int64)]
    subs = []
    for b in range(2):
        for a in range(2):
            k = 3 * b + a
            subs.append(nodes[:, [k, k + 1, k + 4, k + 3]])
    return np.concatenate(subs)


def write_field_vtk(path, mesh, u, p, extra=None):
    """Velocity (vector), pressure, level set and ghost flag on the active Q2 nodes."""
    from .extrapolation import pressure_to_lattice

    grid = mesh.grid
    ids = mesh.nodes.v_nodes
    X, Y = grid.v_coords()
    local = np.full(X.size, -1, dtype=np.int64)
    local[ids] = np.arange(len(ids))
    quads = local[lattice_quads(grid, mesh.active_cells)]
    nv = mesh.n_v
    data = {"velocity": np.stack([u[:nv], u[nv:2 * nv]], axis=-1),
            "pressure": pressure_to_lattice(p, mesh)[ids],
            "phi": mesh.phi.ravel()[ids],
            "ghost": mesh.nodes.v_ghost.astype(float)}
    for k, v in (extra or {}).items():
        data[k] = v
    write_vtk(path, np.stack([X.ravel()[ids], Y.ravel()[ids]], axis=-1), quads, data,
              title=f"t = {mesh.t:.17g}")


def write_lattice_vtk(path, grid, fields, mask=None):
    """Fields on the full Q2 lattice (restricted to cells whose nodes are all in ``mask``)."""
    X, Y = grid.v_coords()
    cells = np.arange(grid.n_cells)
    if mask is not None:
        cells = cells[np.asarray(mask)[grid.cell_v_nodes()].all(axis=1)]
    write_vtk(path, np.stack([X.ravel(), Y.ravel()], axis=-1), lattice_quads(grid, cells), fields)


# ----------------------------------------------------------------------
# SVG convergence plot

_W, _H, _M = 560, 420, 60
_COLORS = {"total_L2": "#1f77b4", "total_H1": "#d62728", "final_L2": "#2ca02c", "final_H1": "#9467bd"}


def plot_transform(h, errs):
    """Map ``log10 h`` and ``log10 err`` linearly onto the plot box; returns a callable."""
    lh = np.log10(np.asarray(h, float))
    le = np.log10(np.asarray([e for e in errs if e > 0], float))
    x0, x1 = lh.min(), lh.max()
    y0, y1 = le.min(), le.max()
    # equal scaling on both axes so that slopes can be compared with the guides
    span = max(x1 - x0, y1 - y0, 1e-12) * 1.15
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    scale = min(_W, _H) - 2 * _M

    def tr(hv, ev):
        px = _M + (np.log10(hv) - (cx - span / 2)) / span * scale
        py = _H - _M - (np.log10(ev) - (cy - span / 2)) / span * scale
        return px, py

    return tr


def emit_convergence_plot(rows, path, orders=None, title="convergence"):
    """Log-log plot of the error norms against ``h`` with slope-2 and slope-3 guides.

    ``rows`` are ErrorReports or mappings with ``h`` and the norm keys.
    """
    rows = [r.as_dict() if hasattr(r, "as_dict") else dict(r) for r in rows]
    if len(rows) < 2:
        raise ConfigError("a convergence plot needs at least two levels", "converge.levels")
    h = np.array([r["h"] for r in rows], float)
    keys = [k for k in _COLORS if all(k in r for r in rows)]
    allerr = [r[k] for r in rows for k in keys]
    tr = plot_transform(h, allerr)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
             f'<text x="{_W / 2:.1f}" y="24" text-anchor="middle" font-size="14">{_esc(title)}</text>',
             f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" font-size="12">h</text>']
    hmin, hmax = h.min(), h.max()
    ref = max(allerr)
    for slope, dash in ((2, "6,4"), (3, "2,3")):
        e0 = ref
        e1 = ref * (hmin / hmax) ** slope
        (xa, xb), (ya, yb) = tr(np.array([hmax, hmin]), np.array([e0, e1]))
        parts.append(f'<polyline class="guide" data-slope="{slope}" points="{xa:.3f},{ya:.3f} '
                     f'{xb:.3f},{yb:.3f}" fill="none" stroke="#888" stroke-dasharray="{dash}"/>')
        parts.append(f'<text x="{xb + 4:.1f}" y="{yb:.1f}" font-size="10" fill="#888">slope {slope}</text>')
    for i, k in enumerate(keys):
        e = np.array([r[k] for r in rows], float)
        px, py = tr(h, e)
        pts = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(px, py))
        parts.append(f'<polyline class="norm" data-norm="{k}" points="{pts}" fill="none" '
                     f'stroke="{_COLORS[k]}" stroke-width="1.5"/>')
        for a, b in zip(px, py):
            parts.append(f'<circle cx="{a:.3f}" cy="{b:.3f}" r="2.5" fill="{_COLORS[k]}"/>')
        label = k
        if orders and k in orders and orders[k] == orders[k]:
            label += f" (slope {orders[k]:.1f})"
        parts.append(f'<text x="{_M + 8}" y="{44 + 14 * i}" font-size="11" fill="{_COLORS[k]}">'
                     f'{_esc(label)}</text>')
    parts.append("</svg>")
    atomic_write(path, "\n".join(parts) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def polyline_points(svg_text, attr):
    """Pixel coordinates of the polyline carrying ``attr`` (e.g. 'data-norm="total_L2"')."""
    for line in svg_text.splitlines():
        if attr in line:
            raw = line.split('points="', 1)[1].split('"', 1)[0]
            return np.array([[float(v) for v in p.split(",")] for p in raw.split()])
    raise KeyError(attr)


# ----------------------------------------------------------------------
# manifest and output directories

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_manifest(path, data):
    atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


@contextmanager
def output_directory(path):
    """Create ``path`` and hold ``path/.lock`` for the duration of the block."""
    path = os.fspath(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OutputError(exc.strerror or str(exc), path) from None
    lock = os.path.join(path, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DirectoryLockedError("output directory is in use by another run", path) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield path
    finally:
        try:
            os.remove(lock)
        except OSError:
            pass
