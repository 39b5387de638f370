import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from shockparticles import cli
from shockparticles.cli import CONFIG_DIR, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, config_from_dict, load_config, main
from shockparticles.errors import ConfigError, SolverError


def _csvs(path):
    return sorted(p.name for p in path.glob("snapshot_*.csv"))


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _quartic(**solver):
    cfg = json.loads((CONFIG_DIR / "quartic_fig2.json").read_text())
    cfg["solver"].update(solver)
    return cfg


def test_quartic_bundle_writes_four_snapshots(tmp_path):
    assert main(["run", "--config", "quartic_fig2", "--out", str(tmp_path)]) == EXIT_OK
    assert _csvs(tmp_path) == [f"snapshot_t{t:.6f}.csv" for t in (0, 0.3, 0.6, 1.0)]
    with open(tmp_path / "snapshot_t0.000000.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "u_minus", "u_plus"]
    assert [float(v) for v in rows[3]] == [0.2, 0.9, 0.9]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["particle_counts"]["final"] >= 1
    merges = [e for e in meta["events"] if not e["characteristic"]]
    assert merges and all(abs(e["residual"]) <= 1e-6 for e in merges)


def test_stiff_bundle_writes_four_snapshots(tmp_path):
    assert main(["run", "--config", "stiff_burgers", "--out", str(tmp_path)]) == EXIT_OK
    assert _csvs(tmp_path) == [f"snapshot_t{t:.6f}.csv" for t in (0.1, 0.2, 0.3, 0.4)]
    assert json.loads((tmp_path / "metadata.json").read_text())["config"]["problem"]["source"]["tau"] == 0.008


def test_fv_run_columns(tmp_path):
    cfg = _quartic(method="fv", order=2)
    assert main(["run", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == EXIT_OK
    data = np.loadtxt(tmp_path / "o" / "snapshot_t1.000000.csv", delimiter=",", skiprows=1)
    assert data.shape == (400, 2)
    assert (tmp_path / "o" / "snapshot_t1.000000.csv").read_text().startswith("x_center,u_avg\n")


def test_empty_snapshot_list_writes_metadata_only(tmp_path):
    cfg = _quartic()
    cfg["output"]["snapshots"] = []
    assert main(["run", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert _csvs(tmp_path / "o") == []
    assert (tmp_path / "o" / "metadata.json").exists()


def test_runs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", "quartic_fig2", "--out", str(tmp_path / d)]) == EXIT_OK
    for name in _csvs(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_metadata_round_trip(tmp_path):
    args = ["--override", "solver.dt=1/128", "--override", "output.snapshots=[0.5, 1.0]"]
    assert main(["run", "--config", "quartic_fig2", "--out", str(tmp_path / "a"), *args]) == EXIT_OK
    meta_path = tmp_path / "a" / "metadata.json"
    assert config_from_dict(json.loads(meta_path.read_text())).solver.dt == 1 / 128
    assert main(["run", "--config", str(meta_path), "--out", str(tmp_path / "b")]) == EXIT_OK
    names = _csvs(tmp_path / "a")
    assert names == _csvs(tmp_path / "b") and len(names) == 2
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_override_parses_fractions_and_json(tmp_path):
    cfg = load_config(CONFIG_DIR / "quartic_fig2.json", ["solver.dt=1/32", "solver.order=2", "output.cells=50"])
    assert cfg.solver.dt == 1 / 32 and cfg.solver.order == 2 and cfg.output.cells == 50


@pytest.mark.parametrize("mutate, needle", [
    (lambda c: c["solver"].update(bogus=1), "solver.bogus: unknown key"),
    (lambda c: c["solver"].update(cfl=1.5), "cfl"),
    (lambda c: c["problem"].update(flux="nope"), "problem.flux"),
    (lambda c: c["output"].update(snapshots=[0.6, 0.3]), "snapshots"),
    (lambda c: c["output"].update(snapshots=[2.0]), "snapshots"),
    (lambda c: c["solver"].update(method="fv", order=4), "order"),
])
def test_config_errors_exit_2(tmp_path, capsys, mutate, needle):
    cfg = _quartic()
    mutate(cfg)
    assert main(["run", "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_json_syntax_error_reports_line_and_column(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "problem": {"flux": "burgers",}\n}\n')
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "broken.json:2:" in capsys.readouterr().err


def test_missing_config_is_config_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise SolverError("step size underflow")

    monkeypatch.setattr(cli, "solve", boom)
    assert main(["run", "--config", "quartic_fig2", "--out", str(tmp_path)]) == EXIT_SOLVER
    assert "step size underflow" in capsys.readouterr().err


def test_converge_table(tmp_path):
    over = ["--override", 'sweep.dts=["1/8", "1/16", "1/32"]', "--override", "output.cells=200"]
    assert main(["converge", "--config", "quartic_fig2", "--out", str(tmp_path), *over]) == EXIT_OK
    with open(tmp_path / "convergence.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["dt", "l1_error", "local_order"]
    assert len(rows) == 4 and rows[1][2] == "nan"
    errs = [float(r[1]) for r in rows[1:]]
    assert errs[0] > errs[1] > errs[2]
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["reference_dt"] == pytest.approx(1 / 3200)
    assert 3.0 < meta["fitted_order"] < 5.0


def test_converge_rejects_sources(tmp_path):
    assert main(["converge", "--config", "stiff_burgers", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_config_from_dict_requires_one_initial_form():
    cfg = _quartic()
    cfg["problem"]["initial"] = {"name": "hump", "domain": [0, 1]}
    with pytest.raises(ConfigError):
        config_from_dict(cfg)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "shockparticles", "run", "--config", "quartic_fig2",
                          "--out", str(tmp_path), "--override", "output.snapshots=[]"],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == EXIT_OK, out.stderr
