import hashlib
import json
from pathlib import Path

import pytest

from trapkit import cli

HYPERBOLIC = """
study = "RadialPotential"
[scene]
kind = "hyperbolic"
[drive]
scheme = "DualRf"
v0 = {v0}
[mesh]
level = "coarse"
[params]
map_half = 20.0
"""

CQED = """
study = "CqedGrid"
[params]
R_c_um = 500.0
n_finesse = 5
n_xi = 7
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, name, text, out):
    return cli.main(["run", str(write(tmp_path, name, text)), "--output", str(tmp_path / out)])


def test_list_studies(capsys):
    assert cli.main(["list-studies"]) == 0
    text = capsys.readouterr().out
    for name in cli.CATALOG:
        assert f"{name}:" in text
    assert len(cli.CATALOG) == 11
    assert cli.main(["list-studies", "AxisScan"]) == 0
    assert "drive.scheme" in capsys.readouterr().out
    assert cli.main(["list-studies", "Nope"]) == 2


def test_missing_required_field_names_path(tmp_path, capsys):
    cfg = 'study = "AxisScan"\n[scene]\ncase = "II"\n[drive]\nv0 = 30\n'
    assert run(tmp_path, "bad.toml", cfg, "o") == 2
    assert "config error at drive.scheme: required field missing" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("text, where", [
    ('study = "Nope"\n', "study"),
    (CQED + "bogus = 1\n", "params.bogus"),
    ('study = "CqedGrid"\n[mesh]\nlevel = "ultra"\n', "mesh.level"),
    ('study = "AxisScan"\n[scene]\ncase = "IV"\n[drive]\nscheme = "DualRf"\nv0 = 1\n', "scene.case"),
    ('study = "CqedGrid"\n[params]\nn_xi = "many"\n', "params.n_xi"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, where):
    assert run(tmp_path, "c.toml", text, "o") == 2
    assert f"config error at {where}" in capsys.readouterr().err


def test_unparseable_toml(tmp_path, capsys):
    assert run(tmp_path, "c.toml", "study = \n", "o") == 2


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TRAPKIT_MEMORY_GB", "1e-6")
    assert run(tmp_path, "h.toml", HYPERBOLIC.format(v0=15.0), "o") == 3
    assert "solver failure (SolverError)" in capsys.readouterr().err


def test_run_outputs_and_determinism(tmp_path):
    assert run(tmp_path, "a.toml", CQED, "a") == 0
    assert run(tmp_path, "b.toml", CQED, "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "cqed_grid.csv").read_bytes() == (b / "cqed_grid.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    header = (a / "cqed_grid.csv").read_text().splitlines()[0]
    assert header == "finesse,xi,C_over_eta"
    assert len((a / "cqed_grid.csv").read_text().splitlines()) == 1 + 5 * 7
    man = json.loads((a / "manifest.json").read_text())
    assert man["study"] == "CqedGrid" and man["tool"] == "trapkit"
    assert man["inputs_sha256"] == json.loads((b / "manifest.json").read_text())["inputs_sha256"]
    for entry in man["outputs"]:
        data = (a / entry["file"]).read_bytes()
        assert entry["sha256"] == hashlib.sha256(data).hexdigest()
    assert set(man["timings_s"]) >= {"total"}


def test_compare_identical_and_changed(tmp_path, capsys):
    assert run(tmp_path, "a.toml", CQED, "a") == 0
    assert run(tmp_path, "b.toml", CQED.replace("500.0", "400.0"), "b") == 0
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "a")]) == 0
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path)]) == 2


def test_compare_doubled_amplitude_expected_ratios(tmp_path, capsys):
    assert run(tmp_path, "v1.toml", HYPERBOLIC.format(v0=15.0), "v1") == 0
    assert run(tmp_path, "v2.toml", HYPERBOLIC.format(v0=30.0), "v2") == 0
    a, b = str(tmp_path / "v1"), str(tmp_path / "v2")
    assert cli.main(["compare", a, b]) == 1
    tol = write(tmp_path, "tol.toml", """
default = 1e-6
[tolerances]
tilt_deg = 1e-3
[expected_ratio]
f1_hz = 2.0
f2_hz = 2.0
f_low_hz = 2.0
f_high_hz = 2.0
fit_residual_ev = 4.0
"radial_map.phi_pseudo_eV" = 4.0
""")
    capsys.readouterr()
    assert cli.main(["compare", a, b, "--tol", str(tol)]) == 0
    out = capsys.readouterr().out
    assert "expected" in out and " fail" not in out


def test_csv_cells():
    text = cli.csv_text(("a", "b"), [[1.0, 0.1], [2.0, float("nan")]])
    assert text.splitlines() == ["a,b", "1,0.1", "2,nan"]


def test_example_configs_validate():
    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(p for p in root.glob("*.toml") if "tolerances" not in p.name)
    assert paths
    for p in paths:
        assert cli.load_config(p)["study"] in cli.CATALOG
