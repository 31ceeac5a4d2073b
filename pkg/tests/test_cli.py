from __future__ import annotations

import json
import subprocess
import sys

import pytest

from zeplan.cli import main


def _run(args):
    return main(args)


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "inst.yaml"
    assert _run(["gen", "--seed", "3", "--zones", "2", "--transit", "4",
                 "--safe", "1", "--out", str(path)]) == 0
    return path


def test_gen_solve_validate_cycle(tmp_path, instance_file):
    out = tmp_path / "runs"
    code = _run(["solve", "--instance", str(instance_file), "--method", "bc",
                 "--out-dir", str(out)])
    assert code == 0
    report = json.loads((out / "gen-3-bc-report.json").read_text())
    assert report["method"] == "bc"
    assert (out / "gen-3-bc-trace.csv").exists()
    assert (out / "gen-3-bc-validation.json").exists()
    code = _run(["validate", "--instance", str(instance_file),
                 "--plan", str(out / "gen-3-bc-plan.yaml")])
    assert code == 0


def test_solve_all_methods_exit_zero(tmp_path, instance_file):
    out = tmp_path / "runs"
    for method in ("mip", "bn", "cpg"):
        assert _run(["solve", "--instance", str(instance_file),
                     "--method", method, "--out-dir", str(out)]) == 0
    assert _run(["solve", "--instance", str(instance_file), "--method", "cg",
                 "--curves", "2", "5", "--out-dir", str(out)]) == 0


def test_cg_plan_is_single_window(tmp_path, instance_file):
    out = tmp_path / "runs"
    _run(["solve", "--instance", str(instance_file), "--method", "cg",
          "--curves", "5", "--out-dir", str(out)])
    import yaml
    doc = yaml.safe_load((out / "gen-3-cg-plan.yaml").read_text())
    for entry in doc["zones"]:
        if entry.get("response"):
            assert set(entry["response"]) == {"rate", "start"}


def test_clearance_command(tmp_path, instance_file):
    out = tmp_path / "runs"
    code = _run(["clearance", "--instance", str(instance_file),
                 "--method", "bc", "--out-dir", str(out)])
    assert code == 0
    summary = json.loads((out / "gen-3-bc-clearance.json").read_text())
    assert summary["h_star"] is not None
    assert summary["h_dagger"] <= summary["h_star"]
    assert (out / "gen-3-bc-clearance-probes.csv").exists()


def test_compare_command(tmp_path, instance_file):
    out = tmp_path / "runs"
    for method in ("bn", "bc"):
        _run(["solve", "--instance", str(instance_file), "--method", method,
              "--out-dir", str(out)])
    table = tmp_path / "table.csv"
    code = _run(["compare", str(out / "gen-3-bn-report.json"),
                 str(out / "gen-3-bc-report.json"), "--out", str(table)])
    assert code == 0
    assert "bn" in table.read_text()


def test_unknown_method_is_usage_error(instance_file):
    proc = subprocess.run(
        [sys.executable, "-m", "zeplan.cli", "solve", "--instance",
         str(instance_file), "--method", "simulate"],
        capture_output=True, text=True)
    assert proc.returncode != 0
    assert "invalid choice" in proc.stderr


def test_backend_env_var_rejected(instance_file, monkeypatch):
    monkeypatch.setenv("ZEPLAN_BACKEND", "cplex")
    with pytest.raises(ValueError):
        _run(["solve", "--instance", str(instance_file), "--method", "bn"])
