"""End-to-end command-line behaviour: round trips, exit codes, determinism."""
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from trajtomo import DiscreteRecord
from trajtomo.cli import _resolve_threads, main
from trajtomo.io import (
    RESULTS_SCHEMA,
    matrix_to_json,
    save_model,
    write_records,
)

GROUND = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
EXCITED = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]


def povm_model(path, *, tilt=0.0):
    """Two-outcome counting model; tilt perturbs the elements slightly."""
    g = np.array([[0.7 + tilt, 0.1], [0.1, 0.2]], dtype=complex)
    e = np.eye(2) - g
    return save_model(
        path,
        "povm",
        {
            "elements": {"g": matrix_to_json(g), "e": matrix_to_json(e)},
            "n_steps": 1,
        },
    )


def run(argv):
    return main([str(a) for a in argv])


def test_simulate_tomography_validate_roundtrip(tmp_path, capsys):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    assert run(["simulate", "--model", model, "--records", recs,
                "--n-trajectories", 300, "--seed", 11]) == 0

    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", out1]) == 0
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", out2]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    side1 = out1.with_suffix(".state.json")
    side2 = out2.with_suffix(".state.json")
    assert side1.read_bytes() == side2.read_bytes()

    lines = out1.read_text().splitlines()
    assert lines[0] == RESULTS_SCHEMA
    names = {ln.split(",")[1] for ln in lines[2:]}
    assert names == {"x", "y", "z"}
    state = json.loads(side1.read_text())["states"]["0"]
    assert state["certified"] is True

    report = tmp_path / "report.json"
    assert run(["validate", "--model", model, "--records", recs,
                "--out", report]) == 0
    payload = json.loads(report.read_text())
    assert payload["passed"] is True
    assert {c["name"] for c in payload["checks"]} >= {
        "adjoint_identity",
        "records_consistent",
        "forward_backward_duality",
        "kkt_certificate",
        "binomial_fisher",
        "qubit_fastpath",
    }


def test_simulate_is_deterministic(tmp_path):
    model = tmp_path / "model.json"
    povm_model(model)
    r1, r2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    run(["simulate", "--model", model, "--records", r1, "--seed", 3])
    run(["simulate", "--model", model, "--records", r2, "--seed", 3])
    assert r1.read_bytes() == r2.read_bytes()
    r3 = tmp_path / "r3.jsonl"
    run(["simulate", "--model", model, "--records", r3, "--seed", 4])
    assert r1.read_bytes() != r3.read_bytes()


def test_missing_input_exits_2(tmp_path, capsys):
    assert run(["tomography", "--model", tmp_path / "nope.json",
                "--records", tmp_path / "r.jsonl", "--out", tmp_path / "o.csv"]) == 2
    model = tmp_path / "model.json"
    povm_model(model)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("not json\n")
    assert run(["tomography", "--model", model, "--records", bad,
                "--out", tmp_path / "o.csv"]) == 2


def test_model_mismatch_exits_1(tmp_path, capsys):
    model_a, model_b = tmp_path / "a.json", tmp_path / "b.json"
    povm_model(model_a)
    povm_model(model_b, tilt=0.05)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model_a, "--records", recs])
    assert run(["tomography", "--model", model_b, "--records", recs,
                "--out", tmp_path / "o.csv"]) == 1
    assert "different model" in capsys.readouterr().err
    assert run(["validate", "--model", model_b, "--records", recs]) == 1


def test_start_beyond_records_exits_1(tmp_path, capsys):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model, "--records", recs])
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", tmp_path / "o.csv", "--start-times", "1"]) == 1
    assert "shortest record" in capsys.readouterr().err


def test_impossible_record_exits_3(tmp_path, capsys):
    model = tmp_path / "model.json"
    desc = save_model(
        model, "qnd",
        {"n_steps": 1, "n_max": 2, "detection_efficiency": 1.0},
    )
    recs = tmp_path / "recs.jsonl"
    # every probe atom is detected, so an undetected outcome cannot occur
    write_records(recs, [DiscreteRecord(0, ("no",))], model_description=desc)
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", tmp_path / "o.csv"]) == 3
    assert "numerical error" in capsys.readouterr().err


def test_unknown_observable_exits_2(tmp_path, capsys):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model, "--records", recs])
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", tmp_path / "o.csv", "--observables", "q"]) == 2


def test_observable_from_file(tmp_path):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model, "--records", recs])
    obs = tmp_path / "proj.json"
    obs.write_text(json.dumps({"label": "pg", "matrix": GROUND}))
    out = tmp_path / "o.csv"
    assert run(["tomography", "--model", model, "--records", recs,
                "--out", out, "--observables", f"@{obs}"]) == 0
    names = [ln.split(",")[1] for ln in out.read_text().splitlines()[2:]]
    assert names == ["pg"]


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("TRAJTOMO_THREADS", raising=False)
    assert _resolve_threads(None) == 1
    assert _resolve_threads(4) == 4
    monkeypatch.setenv("TRAJTOMO_THREADS", "3")
    assert _resolve_threads(None) == 3
    assert _resolve_threads(2) == 2
    monkeypatch.setenv("TRAJTOMO_THREADS", "zero")
    with pytest.raises(ValueError):
        _resolve_threads(None)
    with pytest.raises(ValueError):
        _resolve_threads(0)


def test_threads_flag_does_not_change_results(tmp_path):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model, "--records", recs, "--n-trajectories", 80])
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["tomography", "--model", model, "--records", recs, "--out", out1,
         "--threads", 1])
    run(["tomography", "--model", model, "--records", recs, "--out", out2,
         "--threads", 3])
    assert out1.read_bytes() == out2.read_bytes()


def test_ensemble_average_rows(tmp_path):
    model = tmp_path / "model.json"
    povm_model(model)
    recs = tmp_path / "recs.jsonl"
    run(["simulate", "--model", model, "--records", recs])
    out = tmp_path / "o.csv"
    assert run(["tomography", "--model", model, "--records", recs, "--out", out,
                "--observables", "z", "--report-ensemble-average"]) == 0
    names = [ln.split(",")[1] for ln in out.read_text().splitlines()[2:]]
    assert names == ["z", "ensemble:z"]


def test_console_script_is_installed():
    exe = shutil.which("trajtomo")
    assert exe is not None
    proc = subprocess.run(
        [exe, "--help"], capture_output=True, text=True, timeout=60
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "tomography" in proc.stdout


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "trajtomo.cli", "--help"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
