import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from boostlss.cli import RunConfig, main
from boostlss.distributions import exceedance_probability
from boostlss.zadj_model import ZeroAdjustedModel

FAST = ["--max-iter", "300"]


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--out", str(root / "data"), "--days", "60", "--regions", "4"]) == 0
    assert main(["train", "--config", str(root / "data" / "config.json"), "--out", str(root / "run"), *FAST]) == 0
    return root


def read(path):
    return pd.read_csv(path, keep_default_na=False)


def test_train_writes_artifacts(sim):
    run = sim / "run"
    for name in ("model.json", "iterations.log", "report.json", "importance.csv"):
        assert (run / name).exists()
    model = ZeroAdjustedModel.load(run / "model.json")
    assert json.loads((run / "model.json").read_text())["format_version"] == 1
    report = json.loads((run / "report.json").read_text())
    assert set(report) >= {"m_stop", "train", "holdout", "test", "delta_loglik"}
    assert report["m_stop"] == {"zero": model.zero.m_stop, "positive": model.pos.m_stop}
    assert report["train"]["l_average"] == pytest.approx(report["train"]["l_total"] / report["train"]["n"])


def test_iteration_log_is_parseable(sim):
    lines = (sim / "run" / "iterations.log").read_text().splitlines()
    first = dict(tok.split("=", 1) for tok in lines[0].split())
    assert set(first) == {"stage", "iter", "insample", "holdout", "param", "term"}
    assert first["stage"] == "zero" and first["iter"] == "1"


def test_rerun_is_byte_identical(sim, tmp_path):
    assert main(["train", "--config", str(sim / "data" / "config.json"), "--out", str(tmp_path), *FAST]) == 0
    for name in ("model.json", "iterations.log", "report.json", "importance.csv"):
        assert (tmp_path / name).read_bytes() == (sim / "run" / name).read_bytes()


def test_missing_adjacency_exits_2(sim, tmp_path, capsys):
    cfg = json.loads((sim / "data" / "config.json").read_text())
    cfg["adjacency"] = "nowhere.txt"
    cfg["data"] = str(sim / "data" / "weather.csv")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "adjacency required" in capsys.readouterr().err


def test_mrf_without_adjacency_exits_2(sim, tmp_path, capsys):
    cfg = RunConfig(data=str(sim / "data" / "weather.csv"),
                    terms=[{"kind": "intercept"}, {"kind": "mrf", "var": "region"}])
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "adjacency required" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"familly": "gamma"}')
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2
    assert "familly" in capsys.readouterr().err


def test_config_round_trips(sim):
    cfg = RunConfig.load(sim / "data" / "config.json")
    again = RunConfig.from_dict(json.loads(cfg.to_json()), cfg.base_dir)
    assert again == cfg
    assert cfg.to_json() == (sim / "data" / "config.json").read_text()


def test_predict_columns_and_recomputed_exceedance(sim, tmp_path):
    out = tmp_path / "pred.csv"
    data = sim / "data" / "weather.csv"
    assert main(["predict", "--model", str(sim / "run" / "model.json"), "--data", str(data),
                 "--out", str(out), "-t", "10"]) == 0
    pred = read(out)
    assert list(pred.columns) == ["row_id", "xi0", "mu", "sigma", "q99", "p_exceed", "warnings"]
    assert ((pred.xi0 > 0) & (pred.xi0 < 1)).all()
    theta = pred[["mu", "sigma"]].to_numpy()
    np.testing.assert_allclose(pred.p_exceed, exceedance_probability(pred.xi0.to_numpy(), "gamma", theta, 10.0),
                               rtol=1e-12, atol=1e-15)


def test_predict_missing_column_exits_2_naming_it(sim, tmp_path, capsys):
    df = pd.read_csv(sim / "data" / "weather.csv").drop(columns=["temp_max"])
    df.to_csv(tmp_path / "bad.csv", index=False)
    code = main(["predict", "--model", str(sim / "run" / "model.json"), "--data", str(tmp_path / "bad.csv"),
                 "--out", str(tmp_path / "p.csv")])
    assert code == 2
    assert "temp_max" in capsys.readouterr().err


def test_evaluate_matches_report(sim, tmp_path):
    assert main(["evaluate", "--model", str(sim / "run" / "model.json"), "--data", str(sim / "data" / "weather.csv"),
                 "--out", str(tmp_path / "e.csv")]) == 0
    row = read(tmp_path / "e.csv").iloc[0]
    assert row.l_total == pytest.approx(row.l_zero_stage + row.l_positive_stage, abs=1e-9)


def test_importance_reconciles_with_report(sim, tmp_path):
    assert main(["importance", "--model", str(sim / "run" / "model.json"), "--out", str(tmp_path / "i.csv")]) == 0
    imp = read(tmp_path / "i.csv")
    report = json.loads((sim / "run" / "report.json").read_text())
    for stage in ("zero", "positive"):
        assert imp.loc[imp.stage == stage, "delta_loglik"].sum() == pytest.approx(report["delta_loglik"][stage],
                                                                                  abs=1e-9)


def test_roc_single_class_exits_2(sim, tmp_path, capsys):
    code = main(["roc", "--model", str(sim / "run" / "model.json"), "--data", str(sim / "data" / "weather.csv"),
                 "--out", str(tmp_path / "r.csv"), "-t", "1e9"])
    assert code == 2
    assert "both classes" in capsys.readouterr().err


# -- a tiny single-covariate setup with known structure ------------------------------------------


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    rng = np.random.default_rng(0)
    x = np.r_[rng.uniform(0.0, 0.3, 300), rng.uniform(0.35, 0.5, 300), rng.uniform(0.8, 1.0, 300)]
    y = np.where(x < 0.3, 0.0, 0.0)
    y[x >= 0.35] = 10.0 * x[x >= 0.35] * rng.uniform(0.8, 1.2, 600)
    y[x >= 0.8] = 30.0 * x[x >= 0.8] * rng.uniform(0.8, 1.2, 300)
    order = rng.permutation(900)
    df = pd.DataFrame({"date": [f"2020-01-{1 + d % 28:02d}" for d in range(900)], "x": x[order], "faults": y[order]})
    df.to_csv(root / "toy.csv", index=False)
    cfg = RunConfig(data="toy.csv", schema=[{"name": "x", "kind": "numeric"}],
                    terms=[{"kind": "intercept"}, {"kind": "linear", "var": "x", "params": ["mu"]}],
                    zero_terms=[{"kind": "intercept"}, {"kind": "linear", "var": "x"}], max_iter=400)
    (root / "toy.json").write_text(cfg.to_json())
    assert main(["train", "--config", str(root / "toy.json"), "--out", str(root / "run")]) == 0
    return root


def test_perfect_separation_roc(toy, tmp_path):
    assert main(["roc", "--model", str(toy / "run" / "model.json"), "--data", str(toy / "toy.csv"),
                 "--out", str(tmp_path / "roc.csv")]) == 0
    roc = read(tmp_path / "roc.csv")
    assert list(roc.columns) == ["fpr", "tpr", "threshold", "auc"]
    assert (roc.auc == 1.0).all()


def test_linear_partial_effect_has_zero_second_differences(toy, tmp_path):
    out = tmp_path / "pe.csv"
    assert main(["partial", "--model", str(toy / "run" / "model.json"), "--param", "mu", "--term", "linear(x)",
                 "--grid", "0:1:11", "--out", str(out)]) == 0
    pe = read(out)
    assert list(pe.columns) == ["x", "effect", "extrapolated"]
    assert np.max(np.abs(np.diff(pe.effect.to_numpy(), 2))) < 1e-12
    assert pe.effect.iloc[-1] > pe.effect.iloc[0]


def test_intercept_only_predictions_are_constant(toy, tmp_path):
    cfg = json.loads((toy / "toy.json").read_text())
    cfg.update(data=str(toy / "toy.csv"), terms=[{"kind": "intercept"}], zero_terms=[{"kind": "intercept"}])
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "run")]) == 0
    assert main(["predict", "--model", str(tmp_path / "run" / "model.json"), "--data", str(toy / "toy.csv"),
                 "--out", str(tmp_path / "p.csv")]) == 0
    pred = read(tmp_path / "p.csv")
    for c in ("xi0", "mu", "sigma", "q99", "p_exceed"):
        assert pred[c].nunique() == 1


def test_tune_is_deterministic(toy, tmp_path):
    cfg = json.loads((toy / "toy.json").read_text())
    cfg.update(data=str(toy / "toy.csv"), ga={"n_population": 3, "n_generations": 2}, max_iter=60)
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    for d in ("a", "b"):
        assert main(["tune", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / d)]) == 0
    for name in ("tuning.csv", "best.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    best = json.loads((tmp_path / "a" / "best.json").read_text())
    assert len(best["best_genome"]) == 7


def test_console_script_reports_usage_errors():
    r = subprocess.run([sys.executable, "-m", "boostlss.cli", "predict"], capture_output=True, text=True)
    assert r.returncode == 2
    assert "--model" in r.stderr
