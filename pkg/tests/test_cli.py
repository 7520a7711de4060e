import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dnbcure.cli import main, manifest_path
from dnbcure.data_io import DesignSpec, read_dataset
from dnbcure.optimizer import OptimizerConfig, fit

# RMSE of each parameter at n = 300 in the reference study, layout
# [phi, beta0, beta1, beta2, gamma1, gamma2]
REFERENCE_RMSE = np.array([0.138, 0.271, 0.139, 0.229, 0.019, 0.006])
FIT_ARGS = ["--p-covariates", "thickness", "--eta-covariates", "ulcer"]


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    out = d / "data.csv"
    assert main(["simulate", "--seed", "3", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "report.json"
    truths = simulated.with_suffix(".truths.json")
    code = main(["fit", str(simulated), *FIT_ARGS, "--truths", str(truths), "--out", str(out)])
    assert code == 0
    return out


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--seed", "42", "--out", str(a)]) == 0
    assert main(["simulate", "--seed", "42", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".truths.json").read_bytes() == b.with_suffix(".truths.json").read_bytes()
    assert manifest_path(a).exists()


def test_simulate_respects_setting_file(tmp_path):
    setting = tmp_path / "setting.json"
    setting.write_text(json.dumps({"n": 5, "seed": 9}))
    out = tmp_path / "five.csv"
    assert main(["simulate", str(setting), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "time,status,ulcer,thickness" and len(lines) == 6
    truths = _read(out.with_suffix(".truths.json"))
    assert truths["setting"]["n"] == 5 and len(truths["theta"]) == 6


def test_fit_report_recovers_truth(fitted):
    report = _read(fitted)
    assert report["converged"] and report["status"] == "converged"
    assert report["n"] == 300 and len(report["cure_rates"]) == 300
    assert report["param_names"][0] == "phi"
    deviation = np.abs(report["deviation"])
    assert np.all(deviation < 3 * REFERENCE_RMSE), deviation
    assert 0.0 < report["mean_cure_rate"] < 1.0


def test_fit_report_matches_library(simulated, fitted):
    report = _read(fitted)
    data = read_dataset(simulated, DesignSpec(["thickness"], ["ulcer"]))
    res = fit(data, report["initial_value"], OptimizerConfig(**report["config"]))
    assert res.theta.tolist() == report["theta"]
    assert res.loglik == report["loglik"]


def test_fit_accepts_explicit_initial_values(simulated, tmp_path):
    truths = simulated.with_suffix(".truths.json")
    out_file = tmp_path / "from_file.json"
    assert main(["fit", str(simulated), *FIT_ARGS, "--init", str(truths), "--out", str(out_file)]) == 0
    start = ",".join(repr(v) for v in _read(truths)["theta"])
    out_list = tmp_path / "from_list.json"
    assert main(["fit", str(simulated), *FIT_ARGS, "--init", start, "--out", str(out_list)]) == 0
    assert _read(out_file)["theta"] == _read(out_list)["theta"]


def test_fit_on_the_ten_row_fixture(fixture_csv, tmp_path):
    out = tmp_path / "r.json"
    code = main(["fit", str(fixture_csv), *FIT_ARGS, "--categorical", "ulcer", "--out", str(out)])
    report = _read(out)
    assert code in (0, 6) and report["n"] == 10
    assert report["design"]["levels"] == {"ulcer": [0.0, 1.0]}
    assert len(report["theta"]) == 7


def test_bootstrap_two_resamples_equal_hand_sd(simulated, fitted, tmp_path):
    out = tmp_path / "boot.json"
    assert main(["bootstrap", str(simulated), str(fitted), "--B", "2", "--seed", "17", "--out", str(out)]) == 0
    boot = _read(out)
    report = _read(fitted)
    data = read_dataset(simulated, DesignSpec(["thickness"], ["ulcer"]))
    idx = np.random.default_rng(17).integers(0, data.n, size=(2, data.n))
    cfg = OptimizerConfig(**report["config"])
    est = np.array([fit(data.take(i), report["theta"], cfg).theta for i in idx])
    # the SD of two values is |a - b| / sqrt(2)
    np.testing.assert_allclose(boot["se_vector"], np.abs(est[0] - est[1]) / np.sqrt(2), rtol=1e-10)
    assert boot["B"] == 2 and boot["failed_count"] == 0


def test_mc_study_single_replicate_and_replay(tmp_path):
    out = tmp_path / "table.csv"
    setting = tmp_path / "s.json"
    setting.write_text(json.dumps({"n": 60}))
    args = ["mc-study", str(setting), "--reps", "1", "--variants", "hz,dy", "--seed", "4", "--out", str(out)]
    assert main(args) == 0
    with open(out, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    for row in rows:
        assert float(row["rmse"]) == pytest.approx(abs(float(row["bias"])), rel=1e-12)
    manifest = _read(manifest_path(out))
    assert manifest["command"] == "mc-study" and manifest["seed"] == 4
    assert len(manifest["dataset_hashes"]) == 1
    again = tmp_path / "again.csv"
    assert main(["replay", str(manifest_path(out)), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


@pytest.mark.parametrize(
    "argv, code",
    [
        (["fit"], 2),
        (["fit", "x.csv", "--eta-covariates", "ulcer", "--out", "o.json", "--variant", "newton"], 2),
        (["mc-study", "--reps", "0", "--out", "t.csv"], 2),
        (["simulate", "--seed", "-1", "--out", "s.csv"], 2),
        (["frobnicate"], 2),
    ],
)
def test_usage_errors_exit_2(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_data_and_io_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,status,ulcer,thickness\n1.0,1,0,0.5\n-2.0,0,1,1.0\n")
    assert main(["fit", str(bad), *FIT_ARGS, "--out", str(tmp_path / "r.json")]) == 3
    assert "rows: 2" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "absent.csv"), *FIT_ARGS, "--out", str(tmp_path / "r.json")]) == 5
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--out", str(blocker / "x.csv")]) == 5


def test_non_convergence_exits_6_and_still_writes(simulated, tmp_path):
    out = tmp_path / "short.json"
    assert main(["fit", str(simulated), *FIT_ARGS, "--kmax", "2", "--out", str(out)]) == 6
    report = _read(out)
    assert not report["converged"] and report["iterations"] == 2


def test_bootstrap_needs_two_resamples(simulated, fitted, tmp_path):
    assert main(["bootstrap", str(simulated), str(fitted), "--B", "1", "--out", str(tmp_path / "b.json")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dnbcure", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("dnbcure ")
