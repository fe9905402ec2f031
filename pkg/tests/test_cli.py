import json

import pytest

from ghostfem import io
from ghostfem.cli import main

KM = """[scenario]
name = kim_moin_static
[grid]
nx = 8
ny = 8
[time]
t_end = 0.5
"""


@pytest.fixture
def km_config(tmp_path):
    p = tmp_path / "km.ini"
    p.write_text(KM)
    return p


def test_run_writes_outputs(tmp_path, km_config, capsys):
    out = tmp_path / "out"
    assert main(["run", str(km_config), "-o", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 2
    for name in ("series.csv", "steps.csv", "errors.csv", "manifest.json", "field_000.vtk"):
        assert (out / name).exists(), name
    header, data = io.read_csv(out / "series.csv")
    assert header == ["t", "L2_error", "H1_error"] and data.shape == (2, 3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["checks"]["constraint_violations"] == 0


def test_converge(tmp_path, km_config, capsys):
    out = tmp_path / "conv"
    assert main(["converge", str(km_config), "--levels", "2", "-o", str(out)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert len(res["levels"]) == 2
    assert (out / "convergence.svg").exists() and (out / "errors.csv").exists()


def test_mesh_info(km_config, capsys):
    assert main(["mesh-info", str(km_config), "--penalty"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["cells"] == 64 and info["penalty_lambda"] > 0


def test_extrapolate_demo(tmp_path, capsys):
    out = tmp_path / "demo"
    assert main(["extrapolate-demo", "disk", "--nx", "10", "-o", str(out)]) == 0
    assert (out / "before.vtk").exists() and (out / "after.vtk").exists()
    assert json.loads(capsys.readouterr().out)["band_nodes"] > 0


def test_invalid_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[scenario]\nname = kim_moin_static\n[time]\norder = 5\n")
    assert main(["run", str(p)]) == 2
    assert "time.order" in capsys.readouterr().err


def test_usage_error_exits_2(capsys):
    assert main(["bench", "nowhere"]) == 2
    assert main([]) == 2


def test_empty_domain_exits_3(tmp_path, capsys):
    p = tmp_path / "full.ini"
    p.write_text(KM + "[geometry]\nradius = 5.0\n")
    assert main(["mesh-info", str(p)]) == 3
    assert "no active cells" in capsys.readouterr().err


def test_locked_directory_exits_2(tmp_path, km_config, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    (out / ".lock").write_text("1\n")
    assert main(["run", str(km_config), "-o", str(out)]) == 2
    assert "in use" in capsys.readouterr().err


def test_bench_smoke(tmp_path, capsys):
    out = tmp_path / "cav"
    assert main(["bench", "cavity", "--nx", "10", "--t-end", "0.2", "-o", str(out)]) == 0
    header, _ = io.read_csv(out / "series.csv")
    assert header == ["t", "kinetic_energy"]
