import csv
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from ppci.cli import main
from ppci.data import DatasetSchema, save_dataset
from ppci.design import two_stage_plan
from ppci.estimators import InferenceResult
from ppci.simulate import gen_simulation_data

RESULT_FIELDS = set(InferenceResult.__dataclass_fields__)


@pytest.fixture
def fixture_dir(tmp_path):
    lab, unl, _ = gen_simulation_data(60, 90, seed=9)
    schema = DatasetSchema(("x1", "x2", "x3"), "y", "f")
    save_dataset(tmp_path / "lab.csv", lab, schema)
    save_dataset(tmp_path / "unl.csv", unl, schema)
    return tmp_path


def infer_cfg(d, **kw):
    cfg = {
        "labeled": str(d / "lab.csv"),
        "unlabeled": str(d / "unl.csv"),
        "covariates": ["x1", "x2", "x3"],
        "response": "y",
        "prediction": "f",
        "x0": [0.5, 0.5, 0.5],
        "kernel": {"family": "matern52", "bandwidth": 0.5},
        "out": str(d / "out"),
    }
    cfg.update(kw)
    return cfg


def run(d, command, cfg, *extra):
    path = d / f"{command}.json"
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), *extra])


def test_infer_writes_result(fixture_dir):
    assert run(fixture_dir, "infer", infer_cfg(fixture_dir, lcurve_csv=True)) == 0
    res = json.loads((fixture_dir / "out" / "result.json").read_text())
    assert RESULT_FIELDS <= set(res)
    assert res["ci_lo"] <= res["theta_hat"] <= res["ci_hi"]
    assert (fixture_dir / "out" / "lcurve_fold1.csv").exists()
    assert (fixture_dir / "out" / "lcurve_fold2.csv").exists()


def test_infer_labeled_only_flag(fixture_dir):
    assert run(fixture_dir, "infer", infer_cfg(fixture_dir), "--method", "labeled-only") == 0
    res = json.loads((fixture_dir / "out" / "result.json").read_text())
    assert res["sigma2_f"] == 0.0
    assert res["method"] == "labeled-only"


def test_infer_auto_bandwidth_and_standardize(fixture_dir):
    cfg = infer_cfg(fixture_dir, kernel={"family": "gaussian"}, standardize=True, score={"kind": "smoothed_quantile", "tau": 0.5, "h": 0.2})
    assert run(fixture_dir, "infer", cfg) == 0
    res = json.loads((fixture_dir / "out" / "result.json").read_text())
    assert res["diagnostics"]["bandwidth"] > 0


def test_missing_prediction_column(fixture_dir, caplog):
    cfg = infer_cfg(fixture_dir, prediction="yhat")
    with caplog.at_level(logging.ERROR, logger="ppci"):
        assert run(fixture_dir, "infer", cfg) == 2
    assert "yhat" in caplog.text
    assert not (fixture_dir / "out" / "result.json").exists()


def test_missing_prediction_key(fixture_dir, caplog):
    cfg = infer_cfg(fixture_dir)
    del cfg["prediction"]
    with caplog.at_level(logging.ERROR, logger="ppci"):
        assert run(fixture_dir, "infer", cfg) == 2
    assert "prediction" in caplog.text


@pytest.mark.parametrize(
    "bad",
    [{"alpha": 1.5}, {"typo_key": 1}, {"x0": [0.5]}, {"kernel": {"family": "cubic", "bandwidth": 1}}, {"mode": "split"}, {"score": "median"}],
)
def test_infer_invalid_config(fixture_dir, bad):
    assert run(fixture_dir, "infer", infer_cfg(fixture_dir, **bad)) == 2


def test_infer_numerical_failure(fixture_dir):
    # weights vanish numerically far from every covariate
    cfg = infer_cfg(fixture_dir, x0=[1e3, 1e3, 1e3], kernel={"family": "gaussian", "bandwidth": 0.05})
    assert run(fixture_dir, "infer", cfg) == 3


def test_simulate_rows_and_determinism(tmp_path):
    cfg = {"n": 30, "N": 60, "reps": 2, "seed": 4, "kernel": {"bandwidth": 0.4}, "out": str(tmp_path / "a")}
    assert run(tmp_path, "simulate", cfg) == 0
    with open(tmp_path / "a" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["ppci", "labeled-only", "global-ppi"]
    assert json.loads((tmp_path / "a" / "metrics.config.json").read_text())["reps"] == 2
    cfg["out"] = str(tmp_path / "b")
    assert run(tmp_path, "simulate", cfg) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_simulate_single_method_flag(tmp_path):
    cfg = {"n": 30, "N": 60, "reps": 2, "seed": 4, "kernel": {"bandwidth": 0.4}, "out": str(tmp_path)}
    assert run(tmp_path, "simulate", cfg, "--method", "ppci") == 0
    with open(tmp_path / "metrics.csv") as fh:
        assert [r["method"] for r in csv.DictReader(fh)] == ["ppci"]


def test_simulate_requires_seed(tmp_path):
    assert run(tmp_path, "simulate", {"reps": 2, "out": str(tmp_path)}) == 2
    assert not (tmp_path / "metrics.csv").exists()


def test_lcurve_three_point_grid(tmp_path):
    x = np.random.default_rng(0).uniform(size=(30, 2))
    (tmp_path / "u.csv").write_text("a,b\n" + "".join(f"{float(r[0])!r},{float(r[1])!r}\n" for r in x))
    cfg = {
        "unlabeled": str(tmp_path / "u.csv"),
        "covariates": ["a", "b"],
        "x0": [0.5, 0.5],
        "kernel": {"bandwidth": 0.3},
        "lambda_grid": [1e-4, 1e-2, 1.0],
        "out": str(tmp_path),
    }
    assert run(tmp_path, "lcurve", cfg) == 0
    with open(tmp_path / "lcurve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert sum(int(r["selected"]) for r in rows) == 1


def test_lcurve_toy(tmp_path):
    cfg = {"toy": {"m": 300, "dim": 10}, "kernel": {"family": "gaussian", "bandwidth": 0.3}, "seed": 1, "out": str(tmp_path)}
    assert run(tmp_path, "lcurve", cfg) == 0
    with open(tmp_path / "lcurve.csv") as fh:
        sel = [int(r["selected"]) for r in csv.DictReader(fh)]
    assert 0 < sel.index(1) < len(sel) - 1


def test_lcurve_needs_bandwidth(tmp_path):
    assert run(tmp_path, "lcurve", {"toy": {"m": 20, "dim": 2}, "out": str(tmp_path)}) == 2


def test_budget_worked_example(tmp_path):
    cfg = {"sigma2_yf": 1, "sigma2_f": 4, "c_l": 4, "c_u": 1, "C": 8, "out": str(tmp_path)}
    assert run(tmp_path, "budget", cfg) == 0
    alloc = json.loads((tmp_path / "allocation.json").read_text())
    assert (alloc["n_int"], alloc["N_int"]) == (1, 4)
    assert alloc["v_min"] == pytest.approx(2.0)


def test_budget_symmetric(tmp_path):
    cfg = {"sigma2_yf": 2, "sigma2_f": 2, "c_l": 1, "c_u": 1, "C": 50, "out": str(tmp_path)}
    assert run(tmp_path, "budget", cfg) == 0
    alloc = json.loads((tmp_path / "allocation.json").read_text())
    assert alloc["n_int"] == alloc["N_int"] == 25


def test_budget_zero_variances(tmp_path):
    cfg = {"sigma2_yf": 0, "sigma2_f": 0, "c_l": 1, "c_u": 1, "C": 50, "out": str(tmp_path)}
    assert run(tmp_path, "budget", cfg) == 2


def test_budget_pilot_file(fixture_dir):
    assert run(fixture_dir, "infer", infer_cfg(fixture_dir)) == 0
    pilot_path = fixture_dir / "out" / "result.json"
    cfg = {"pilot": str(pilot_path), "c_l": 5, "c_u": 0.5, "C": 400, "out": str(fixture_dir / "b")}
    assert run(fixture_dir, "budget", cfg) == 0
    got = json.loads((fixture_dir / "b" / "allocation.json").read_text())
    pilot = InferenceResult.from_dict(json.loads(pilot_path.read_text()))
    assert got == two_stage_plan(pilot, 5, 0.5, 400 * 0.9).to_dict()


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "ppci.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "infer" in out.stdout and "budget" in out.stdout
