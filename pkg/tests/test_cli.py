import csv
import json
import subprocess
import sys

import pytest

from sscmg.cli import EXIT_ASSUMPTION, EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, main
from sscmg.config import load_config, parse_config
from sscmg.mesh import read_mesh


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_mesh_command_writes_levels(tmp_path):
    assert main(["mesh", "--out", str(tmp_path), "--set", "J=2"]) == EXIT_OK
    counts = [read_mesh(tmp_path / f"level_{k}.mesh2d").n_triangles for k in range(3)]
    assert counts == [8, 32, 128]
    rows = _rows(tmp_path / "mesh.csv")
    assert [r["dofs"] for r in rows] == ["1", "9", "49"]


def test_mesh_command_local_reports_hanging(tmp_path):
    assert main(["mesh", "--out", str(tmp_path), "--set", "application=local_nested",
                 "--set", "J=3"]) == EXIT_OK
    rows = _rows(tmp_path / "mesh.csv")
    assert int(rows[-1]["hanging"]) > 0


def test_invalid_grid_exits_2(tmp_path, capsys):
    assert main(["mesh", "--out", str(tmp_path), "--set", "grid=0x2"]) == EXIT_INVALID
    assert "error:" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path), "--set", "colour=blue"]) == EXIT_INVALID
    assert "colour" in capsys.readouterr().err


def test_solve_writes_history(tmp_path):
    code = main(["solve", "--out", str(tmp_path), "--set", "J=2", "--set", "export_matrices=yes"])
    assert code == EXIT_OK
    rows = _rows(tmp_path / "solve.csv")
    assert list(rows[0]) == ["cycle", "residual", "energy_error", "ratio"]
    assert float(rows[-1]["residual"]) < 1e-8
    assert len(_rows(tmp_path / "solution.csv")) == 49
    assert (tmp_path / "A.mtx").exists() and (tmp_path / "M.mtx").exists()


def test_solve_nonconvergence_exits_3(tmp_path):
    code = main(["solve", "--out", str(tmp_path), "--set", "application=local_nested",
                 "--set", "J=3", "--set", "max_cycles=1"])
    assert code == EXIT_DIVERGED
    assert len(_rows(tmp_path / "solve.csv")) == 1
    assert not (tmp_path / "solution.csv").exists()


def test_verify_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--set", "application=local_nested", "--set", "J=2", "--set", "probes=20",
            "--set", "k0_probes=20", "--seed", "5"]
    assert main(["verify", "--out", str(a)] + args) == EXIT_OK
    assert main(["verify", "--out", str(b)] + args) == EXIT_OK
    for name in ("verify.json", "verify.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    d = json.loads((a / "verify.json").read_text())
    assert d["schema"] == 1 and d["seed"] == 5 and d["passed"] is True


def test_verify_dense_cap_exits_2(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--dense-cap", "5"]) == EXIT_INVALID


def test_sweep_writes_table(tmp_path):
    code = main(["sweep", "--out", str(tmp_path), "--set", "application=local_nested",
                 "--set", "sweep_schedules=constant:1,optimal_quadratic:1", "--set", "sweep_J=1-2"])
    assert code == EXIT_OK
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 4
    assert [r["m_J"] for r in rows] == ["1", "1", "2", "5"]
    for r in rows:
        assert float(r["rho_E"]) <= float(r["gamma_J"]) + 1e-6


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_ASSUMPTION) == (0, 2, 3, 4)


def test_config_file(tmp_path):
    rhs = tmp_path / "b.txt"
    rhs.write_text("\n".join(["1.0"] * 9))
    ini = tmp_path / "run.ini"
    ini.write_text("[experiment]\napplication = local_nonnested\nJ = 1\ngrid = 1x2\n"
                   "theta = 2,0.5,1\nrhs = file:b.txt\nschedule = optimal_quadratic:2\n"
                   "sweep_J = 1,3\n")
    cfg = load_config(ini, ["seed=7"])
    h = cfg.hierarchy
    assert h.application == "local_nonnested" and h.J == 1 and h.grid == (1, 2)
    assert h.theta.matrix.tolist() == [[2.0, 0.5], [0.5, 1.0]]
    assert h.rhs.shape == (9,) and cfg.rhs_label == "file"
    assert h.schedule.kind == "optimal_quadratic" and h.schedule.q == 2
    assert cfg.sweep_J == (1, 3) and cfg.seed == 7


def test_config_rejects_bad_input(tmp_path):
    for bad in ({"rel_tol": "0"}, {"application": "other"}, {"rhs": "weird"},
                {"theta": "1,2"}, {"schedule": "decreasing:3"}, {"sweep_j": "0-2"}):
        with pytest.raises(ValueError):
            parse_config(bad)
    ini = tmp_path / "x.ini"
    ini.write_text("[other]\nn = 2\n")
    with pytest.raises(ValueError):
        load_config(ini)
    with pytest.raises(ValueError):
        load_config(None, ["novalue"])


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sscmg", "mesh", "--out", str(tmp_path),
                        "--set", "J=1"], capture_output=True, text=True)
    assert r.returncode == 0 and "triangles" in r.stdout
