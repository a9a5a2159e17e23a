import json

import numpy as np
import pytest

from statequil import cli
from statequil import statefield as sf


def write_config(tmp_path, name, data):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(data))
    return path


def run_cli(tmp_path, args, data, name="cfg", out="out"):
    cfg = write_config(tmp_path, name, data)
    return cli.main([*args, "--config", str(cfg), "--out", str(tmp_path / out)])


NBODY = {"potential": {"id": "harmonic", "a": 1.0}, "physics": {"dim": 3},
         "nbody": {"n": 8, "dt": 1e-3, "steps": 4000, "record_every": 10}}


def test_nbody_run_writes_artifacts_and_manifest(tmp_path, capsys):
    code = run_cli(tmp_path, ["nbody", "run"], NBODY)
    assert code == cli.EXIT_OK
    out = tmp_path / "out"
    for name in ("resolved_config.json", "trajectory.csv", "drift.json", "summary.json", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema"] == "statequil.config/1"
    assert set(manifest["artifacts"]) >= {"trajectory.csv", "resolved_config.json", "summary.json"}
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["kind"] == "nbody" and resolved["schema"] == "statequil.config/1"
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["passed"] is True


def test_same_seed_gives_byte_identical_outputs(tmp_path):
    run_cli(tmp_path, ["nbody", "run", "--seed", "7"], NBODY, out="a")
    run_cli(tmp_path, ["nbody", "run", "--seed", "7"], NBODY, out="b")
    run_cli(tmp_path, ["nbody", "run", "--seed", "8"], NBODY, out="c")
    a, b, c = ((tmp_path / d / "trajectory.csv").read_bytes() for d in "abc")
    assert a == b and a != c


def test_config_error_exit_code_and_json(tmp_path, capsys):
    code = run_cli(tmp_path, ["maxent", "solve"], {"omega_guess": 1, "solver": {"temperature_tol": -1}})
    assert code == cli.EXIT_CONFIG
    doc = json.loads(capsys.readouterr().out)
    assert {v["path"] for v in doc["violations"]} == {"/omega_guess", "/solver/temperature_tol"}
    assert not (tmp_path / "out").exists()


def test_kind_mismatch_rejected(tmp_path, capsys):
    code = run_cli(tmp_path, ["nbody", "run"], {"kind": "maxent"})
    assert code == cli.EXIT_CONFIG


def test_unreadable_config(tmp_path, capsys):
    assert cli.main(["nbody", "run", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_tolerance_failure_exit_code(tmp_path):
    data = json.loads(json.dumps(NBODY))
    data["tolerances"] = {"energy_drift": 1e-30}
    assert run_cli(tmp_path, ["nbody", "run"], data) == cli.EXIT_TOLERANCE
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["passed"] is False and summary["checks"]["energy_drift"]["passed"] is False


SMALL_MAXENT = {"potential": {"id": "harmonic", "a": 1.0}, "physics": {"epsilon": 2.0, "ell": 0.0},
                "grid": {"q_extent": 4.5, "p_extent": 7.0, "points": 16}}


def test_maxent_solve_with_plots(tmp_path):
    code = run_cli(tmp_path, ["maxent", "solve", "--plot"], SMALL_MAXENT)
    assert code == cli.EXIT_OK
    out = tmp_path / "out"
    report = json.loads((out / "solve_report.json").read_text())
    assert report["multipliers"]["T"] == pytest.approx(1.0, rel=1e-2)
    f = sf.load_density(out / "f.sqgd")
    assert f.mass() == pytest.approx(1.0)
    assert (out / "plot_data.csv").read_text().startswith("figure,series,x,y,y_lo,y_hi")
    assert (out / "maxent_density.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_solver_failure_exit_code(tmp_path):
    data = json.loads(json.dumps(SMALL_MAXENT))
    data["physics"]["epsilon"] = 400.0
    code = run_cli(tmp_path, ["maxent", "solve"], data)
    assert code == cli.EXIT_SOLVER
    report = json.loads((tmp_path / "out" / "solve_report.json").read_text())
    assert report["converged"] is False


def test_maxent_sweep_csv(tmp_path):
    data = json.loads(json.dumps(SMALL_MAXENT))
    data["sweep"] = {"epsilon": [1.5, 2.0], "ell": [0.0]}
    data["classify"] = {"tol_stationary": 1.0}
    run_cli(tmp_path, ["maxent", "sweep"], data)
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "epsilon,ell,T,omega,S,max_constraint_error,classification"
    assert len(lines) == 3 and all(l.endswith(",thermostatic") for l in lines[1:])
    T = [float(l.split(",")[2]) for l in lines[1:]]
    assert T == pytest.approx([0.75, 1.0], rel=1e-2)


def test_ensemble_sample_outputs(tmp_path):
    data = {"potential": {"id": "harmonic", "a": 1.0},
            "ensemble": {"n": 3, "energy": 27.0, "samples": 256, "burn_in": 200, "chains": 16},
            "grid": {"q_extent": 4.0, "p_extent": 8.0, "points": 8}}
    run_cli(tmp_path, ["ensemble", "sample"], data, out="a")
    run_cli(tmp_path, ["ensemble", "sample"], data, out="b")
    qa = np.load(tmp_path / "a" / "q.npy")
    assert qa.shape == (256, 3, 2)
    assert (tmp_path / "a" / "q.npy").read_bytes() == (tmp_path / "b" / "q.npy").read_bytes()


def test_pipeline_thermostatic_with_variants(tmp_path):
    data = {"potential": {"id": "harmonic", "a": 1.0}, "physics": {"epsilon": 3.0, "ell": 0.0},
            "grid": {"q_extent": 5.0, "p_extent": 7.5, "points": 24},
            "classify": {"shift_p_cells": [1, 0]},
            "ensemble": {"n_list": [8, 32], "particles_per_n": 64000, "burn_in": 400}}
    run_cli(tmp_path, ["pipeline", "--emit-plot-data"], data)
    doc = json.loads((tmp_path / "out" / "pipeline.json").read_text())
    assert doc["classification"] == "thermostatic"
    boosted = doc["variants"][0]
    assert boosted["shift"] == "p" and boosted["stationary"] is False
    assert boosted["stationarity_residual"] > doc["residuals"]["stationarity_residual"]
    d = [row["d_KR"] for row in doc["meanfield"]]
    assert d[1] < d[0]


def test_parser_lists_every_subcommand():
    parser = cli.build_parser()
    text = parser.format_help()
    for group in ("nbody", "maxent", "vlasov", "ensemble", "classify", "pipeline"):
        assert group in text
    args = parser.parse_args(["maxent", "sweep", "--config", "x.json", "--threads", "2"])
    assert cli.COMMANDS[(args.group, args.action)] == "maxent-sweep" and args.threads == 2
