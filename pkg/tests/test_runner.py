import csv
import json
import os
import textwrap

import pytest

from config import CONFIGS_DIR, EXIT_CONFIG_ERROR, EXIT_OK, EXIT_VERDICT_FAILED
from core.run_config import parse_config
from core.run_store import LOG_FILE, MANIFEST_FILE, load_manifest, verify_manifest
from core.runner import dispatch, resolve_output_dir
from main import main
from tests.helpers import slow_phase_solution

MODEL = """\
model:
  preset: thirring
  alpha: 1.0
  mass: 1.0
scheme:
  x_min: -10.0
  x_max: 10.0
  n_cells: 100
  t_final: 2.0
  diagnostics_stride: 5
checks:
  cones: 10
  samples: 20000
"""


def run_text(amplitude, extra=""):
    return "experiment: run\n" + MODEL + textwrap.dedent(f"""\
        profiles:
          - {{component: u, center: -2.0, amplitude: {amplitude}}}
          - {{component: v, center: 2.0, amplitude: {amplitude}, phase: 0.3}}
        """) + extra


def read_summary(directory):
    with open(os.path.join(directory, "summary.json"), encoding="utf-8") as f:
        return json.load(f)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def statuses(summary):
    return {v["code"]: v["status"] for v in summary["verdicts"]}


def test_validate_reports_constants(tmp_path):
    config = parse_config("experiment: validate\nmodel: {preset: gross_neveu, alpha: 1.0}\n"
                          "checks: {samples: 50000}\n")
    assert dispatch(config, str(tmp_path)) == EXIT_OK
    summary = read_summary(tmp_path)
    assert summary["constants"]["c"] == 8.0
    assert summary["failures"] == 0
    assert summary["exit_code"] == 0
    assert statuses(summary)["A2-identity"] == "pass"
    assert "scheme" not in summary
    assert os.path.exists(tmp_path / "report.html")
    assert not list(tmp_path.glob("*.csv"))


def test_zero_data_run(tmp_path):
    assert dispatch(parse_config(run_text(0.0)), str(tmp_path)) == EXIT_OK
    rows = read_csv(tmp_path / "functionals.csv")
    assert len(rows) == 5
    for row in rows:
        assert all(float(value) == 0.0 for key, value in row.items() if key != "t")
    assert read_summary(tmp_path)["failures"] == 0


def test_small_data_run_writes_artifacts(tmp_path):
    extra = "output:\n  snapshots: true\n  stride: 2\n"
    assert dispatch(parse_config(run_text(0.05, extra)), str(tmp_path)) == EXIT_OK
    summary = read_summary(tmp_path)
    assert statuses(summary)["bony-budget"] == "pass"
    assert statuses(summary)["charge"] == "pass"
    assert summary["not_applicable"] == 0
    cones = read_csv(tmp_path / "cones.csv")
    assert len(cones) == 10
    assert all(float(c["gammaR"]) <= float(c["q_bound"]) for c in cones)
    # 5 个快照，每隔 2 个写一个，外加最后一个
    assert sorted(os.listdir(tmp_path / "snapshots")) == [
        "snap_000000.csv", "snap_000002.csv", "snap_000004.csv"]


def test_large_data_is_not_applicable(tmp_path):
    assert dispatch(parse_config(run_text(1.0)), str(tmp_path)) == EXIT_OK
    summary = read_summary(tmp_path)
    assert statuses(summary)["bony-budget"] == "not_applicable"
    assert statuses(summary)["linf-envelope"] == "not_applicable"
    assert summary["not_applicable"] >= 3
    assert summary["failures"] == 0


def test_domain_error_is_recorded(tmp_path):
    text = run_text(0.05).replace("t_final: 2.0", "t_final: 6.0")
    code = dispatch(parse_config(text), str(tmp_path))
    assert code == EXIT_CONFIG_ERROR
    summary = read_summary(tmp_path)
    assert summary["exit_code"] == EXIT_CONFIG_ERROR
    assert summary["aborted"]["type"] == "DomainTooSmallError"
    assert summary["aborted"]["issues"][0]["key"].startswith("profiles")
    assert not os.path.exists(tmp_path / "report.md")


def test_runs_are_reproducible(tmp_path):
    config = parse_config(run_text(0.05))
    first, second = tmp_path / "a", tmp_path / "b"
    assert dispatch(config, str(first)) == EXIT_OK
    assert dispatch(config, str(second)) == EXIT_OK
    manifest = load_manifest(str(first))
    assert manifest == load_manifest(str(second))
    assert "functionals.csv" in manifest and "summary.json" in manifest
    for name in manifest:
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert verify_manifest(str(first)) == []
    (first / "functionals.csv").write_text("t\n", encoding="utf-8")
    assert verify_manifest(str(first)) == ["functionals.csv"]


def test_pair_experiment(tmp_path):
    text = run_text(0.05).replace("experiment: run", "experiment: pair") + textwrap.dedent("""\
        stability:
          epsilon: 1.0e-2
          perturbation:
            - {kind: gaussian, component: v, center: 1.0, width: 0.5, amplitude: 1.0}
        """)
    assert dispatch(parse_config(text), str(tmp_path)) == EXIT_OK
    rows = read_csv(tmp_path / "pair_records.csv")
    assert len(rows) == 5
    assert float(rows[0]["t"]) == 0.0
    assert statuses(read_summary(tmp_path))["pair-l2-stability"] == "pass"


def test_output_directory_resolution():
    config = parse_config(run_text(0.05, "output:\n  directory: somewhere\n"))
    assert resolve_output_dir(config, "cli") == "cli"
    assert resolve_output_dir(config) == "somewhere"
    assert resolve_output_dir(parse_config(run_text(0.05))).endswith(os.path.join("runs", "run"))


def write_config(tmp_path, text):
    path = tmp_path / "config.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_main_rejects_bad_config(tmp_path):
    path = write_config(tmp_path, run_text(0.05).replace("mass: 1.0", "mass: -1.0"))
    assert main(["run", "--config", path, "--out", str(tmp_path / "out")]) == EXIT_CONFIG_ERROR
    assert not os.path.exists(tmp_path / "out" / "summary.json")


def test_main_rejects_mismatched_subcommand(tmp_path):
    path = write_config(tmp_path, run_text(0.05))
    assert main(["cauchy", "--config", path, "--out", str(tmp_path / "out")]) == EXIT_CONFIG_ERROR


def test_main_runs_and_logs(tmp_path):
    path = write_config(tmp_path, "model: {preset: thirring, alpha: 1.0, mass: 0.5}\n"
                                  "checks: {samples: 50000}\n")
    out = tmp_path / "out"
    assert main(["validate", "--config", path, "--out", str(out), "--seed", "11"]) == EXIT_OK
    summary = read_summary(out)
    assert summary["seed"] == 11
    assert summary["config_echo"]["experiment"] == "validate"
    assert os.path.getsize(out / LOG_FILE) > 0
    assert LOG_FILE not in load_manifest(str(out))
    assert os.path.exists(out / MANIFEST_FILE)


def test_main_rejects_bad_seed(tmp_path):
    path = write_config(tmp_path, run_text(0.05))
    with pytest.raises(SystemExit):
        main(["run", "--config", path, "--seed", "-1"])


SHIPPED_VERDICTS = {
    "validate": ("A2-identity",),
    "run": ("A2-identity", "charge"),
    "pair": ("pair-l2-stability",),
    "cauchy": ("weak-residual", "cauchy-bound", "cauchy-limit-monotone", "cauchy-ratio"),
    "oracle": ("oracle-self-validation", "refinement-order"),
}


@pytest.mark.slow
@pytest.mark.parametrize("experiment", sorted(SHIPPED_VERDICTS))
def test_shipped_configs_pass(tmp_path, experiment):
    path = os.path.join(CONFIGS_DIR, f"{experiment}.yaml")
    assert main([experiment, "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    summary = read_summary(tmp_path)
    assert summary["failures"] == 0
    found = statuses(summary)
    for code in SHIPPED_VERDICTS[experiment]:
        assert found[code] == "pass", code


def test_oracle_rejects_inconsistent_closed_form(tmp_path, monkeypatch):
    monkeypatch.setattr("core.runner.thirring_m0_exact", slow_phase_solution)
    config = parse_config(textwrap.dedent("""\
        experiment: oracle
        model: {preset: thirring, alpha: 1.0, mass: 0.0}
        scheme: {x_min: -8.0, x_max: 8.0, n_cells: 64, t_final: 1.0}
        profiles:
          - {component: u, center: -1.0, amplitude: 0.5}
          - {component: v, center: 1.0, amplitude: 0.5}
        oracle: {levels: 3}
        checks: {samples: 20000}
        """))
    assert dispatch(config, str(tmp_path)) == EXIT_VERDICT_FAILED
    assert statuses(read_summary(tmp_path))["oracle-self-validation"] == "fail"
