import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ghostfem import io
from ghostfem.benchmarks import ErrorReport, run_scenario
from ghostfem.config import load_config, parse_config, resolve_dt, scenario_config, serialize
from ghostfem.errors import ConfigError
from ghostfem.mesh import CartesianGrid


def test_minimal_cylinder_config_gets_defaults():
    cfg = parse_config("[scenario]\nname = turek_disk\n")
    assert cfg["grid.nx"] == 220 and cfg["grid.ny"] == 41
    assert cfg.h == pytest.approx(0.01)
    assert cfg.nu == pytest.approx(1e-3)
    assert cfg["physics.re"] == pytest.approx(1000.0)
    assert resolve_dt(cfg) == 0.01
    assert "grid.nx" in cfg.defaults() and "scenario.name" not in cfg.defaults()
    assert cfg["output.directory"] == "runs/turek_disk"


def test_default_time_step_rule():
    cfg = parse_config("[scenario]\nname = kim_moin_static\n[grid]\nnx = 16\nny = 16\n")
    assert resolve_dt(cfg) == pytest.approx(0.125)
    cfg3 = cfg.replace(time__order=3)
    assert resolve_dt(cfg3) == pytest.approx(0.0625)


@pytest.mark.parametrize("text, path", [
    ("[scenario]\nname = kim_moin_static\n[time]\norder = 5\n", "time.order"),
    ("[scenario]\nname = kim_moin_static\n[grid]\nnx = 16\nspacing = 2\n", "grid.spacing"),
    ("[scenario]\nname = kim_moin_static\n[mesh]\nnx = 16\n", "mesh"),
    ("[scenario]\nname = kim_moin_static\n[grid]\nnx = 16\nny = 8\n", "grid"),
    ("[scenario]\nname = kim_moin_static\n[time]\ndt = -0.1\n", "time.dt"),
    ("[scenario]\nname = kim_moin_static\n[grid]\nnx = sixteen\n", "grid.nx"),
    ("[scenario]\nname = kim_moin_static\n[penalty]\ngamma = 0.9\n", "penalty.gamma"),
    ("[scenario]\nname = kim_moin_moving\n[extrapolation]\nband = 2\n", "extrapolation.band"),
    ("[scenario]\nname = kim_moin_static\n[physics]\nnu = 0.1\nre = 20\n", "physics.re"),
    ("[scenario]\nname = lid\n", "scenario.name"),
    ("[grid]\nnx = 4\n", "scenario.name"),
])
def test_invalid_configs_name_the_key(text, path):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.path == path
    assert path in str(err.value)


def test_reynolds_number_sets_viscosity():
    cfg = parse_config("[scenario]\nname = driven_cavity\n[physics]\nre = 4\n")
    assert cfg.nu == 0.25
    assert cfg.replace(physics__nu=0.5)["physics.re"] == 2.0


@given(nx=st.integers(2, 300), order=st.sampled_from([2, 3]), gamma=st.floats(1.01, 5.0),
       t_end=st.floats(0.01, 100.0), sbm=st.sampled_from(["off", "taylor", "project"]),
       lam=st.one_of(st.none(), st.floats(1.0, 1e6)))
def test_round_trip(nx, order, gamma, t_end, sbm, lam):
    cfg = scenario_config("kim_moin_static", grid__nx=nx, grid__ny=nx, time__order=order,
                          penalty__gamma=gamma, time__t_end=t_end, physics__sbm=sbm,
                          penalty__lambda=lam)
    again = parse_config(serialize(cfg))
    assert again == cfg
    assert serialize(again) == serialize(cfg)


def test_load_config(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[scenario]\nname = driven_cavity\n[grid]\nnx = 10\nny = 10\n")
    assert load_config(p)["grid.nx"] == 10
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_refinement_keeps_the_rule():
    cfg = scenario_config("kim_moin_static", grid__nx=16, grid__ny=16)
    fine = cfg.refined(4)
    assert fine["grid.nx"] == 64 and fine["time.dt"] is None
    assert resolve_dt(fine) == pytest.approx(2 / 64)
    fixed = cfg.replace(time__dt=0.1).refined(2)
    assert fixed["time.dt"] == pytest.approx(0.05)


def test_csv_single_row(tmp_path):
    path = tmp_path / "s.csv"
    io.write_csv(path, ("t", "x"), [(0.1, 1 / 3)])
    text = path.read_bytes().decode()
    assert text.count("\n") == 2 and "\r" not in text
    assert text.splitlines()[1] == "0.10000000000000001,0.33333333333333331"
    header, data = io.read_csv(path)
    assert header == ["t", "x"] and data.shape == (1, 2)
    assert data[0, 1] == 1 / 3
    with pytest.raises(ValueError):
        io.write_csv(path, ("t", "x"), [(1.0,)])


def _reports(p=2.0, c=0.7):
    out = []
    for h in (0.125, 0.0625, 0.03125):
        e = c * h ** p
        out.append(ErrorReport(e, 3 * e / h, e, 3 * e / h, h, h))
    return out


def test_convergence_plot_slopes(tmp_path):
    path = tmp_path / "c.svg"
    reps = _reports(2.0)
    io.emit_convergence_plot(reps, path, {"total_L2": 2.0})
    svg = path.read_text()
    norm = io.polyline_points(svg, 'data-norm="total_L2"')
    guide = io.polyline_points(svg, 'data-slope="2"')
    s_norm = np.polyfit(norm[:, 0], norm[:, 1], 1)[0]
    s_guide = (guide[1, 1] - guide[0, 1]) / (guide[1, 0] - guide[0, 0])
    assert s_norm == pytest.approx(s_guide, rel=1e-2)
    # H1 decays with slope 1, parallel to neither guide
    h1 = io.polyline_points(svg, 'data-norm="total_H1"')
    assert np.polyfit(h1[:, 0], h1[:, 1], 1)[0] == pytest.approx(s_guide / 2, rel=1e-2)


def test_convergence_plot_needs_two_levels(tmp_path):
    with pytest.raises(ConfigError):
        io.emit_convergence_plot(_reports()[:1], tmp_path / "c.svg")


def test_errors_csv(tmp_path):
    path = tmp_path / "errors.csv"
    orders = {"total_L2": 2.0, "total_H1": 1.0, "final_L2": 2.0, "final_H1": 1.0}
    io.write_errors_csv(_reports(), orders, path)
    header, data = io.read_csv(path)
    assert tuple(header) == io.ERRORS_HEADER
    assert data.shape == (3, 10)


def test_vtk_file(tmp_path):
    grid = CartesianGrid(0, 0, 1, 1, 2, 2)
    X, Y = grid.v_coords()
    path = tmp_path / "f.vtk"
    io.write_lattice_vtk(path, grid, {"x": X.ravel(), "v": np.stack([X.ravel(), Y.ravel()], -1)})
    text = path.read_text()
    assert "POINTS 25 double" in text
    assert "CELLS 16 80" in text
    assert "VECTORS v double" in text and "SCALARS x double 1" in text


def test_output_directory_lock(tmp_path):
    d = tmp_path / "run"
    with io.output_directory(d):
        assert (d / ".lock").exists()
        with pytest.raises(io.DirectoryLockedError):
            with io.output_directory(d):
                pass
    assert not (d / ".lock").exists()


def test_manifest_keys(tmp_path):
    from ghostfem.cli import manifest_data
    cfg = scenario_config("kim_moin_static", grid__nx=8, grid__ny=8)
    data = manifest_data(cfg)
    assert set(data) == {"ghostfem_version", "numpy", "scipy", "config", "defaults_used", "resolved"}
    assert set(data["resolved"]) == {"h", "dt", "nu", "delta_snap", "eps_stabilization", "tableau",
                                     "boundary_data", "penalty_gamma", "penalty_override",
                                     "extension", "lu_ordering"}
    path = tmp_path / "m.json"
    io.write_manifest(path, data)
    back = json.loads(path.read_text())
    assert back["resolved"]["eps_stabilization"] == 1e-10
    assert back["resolved"]["tableau"]["order"] == 2


def test_runs_are_deterministic():
    cfg = scenario_config("kim_moin_static", grid__nx=8, grid__ny=8, time__t_end=0.5,
                          output__snapshot_times=[])
    a = run_scenario(cfg)
    b = run_scenario(cfg)
    assert np.array_equal(a.state.u, b.state.u)
    assert a.report.as_dict() == b.report.as_dict()
    assert math.isfinite(a.report.total_L2)
