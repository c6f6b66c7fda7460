import json

import numpy as np
import pandas as pd
import pytest

import app
from src.metrics import logrank_p_value
from src.services.io import load_draws

TINY_SIMULATION = [
    "--n-subtypes", "2", "--subjects-per-cluster-mean", "12", "--n-modules", "2", "--module-size-mean", "4",
    "--n-confounders", "1", "--modules-per-confounder", "1", "--n-noise", "10",
]
SHORT_CHAIN = ["--k", "2", "--nt", "30", "--nb", "10"]


@pytest.fixture
def simulated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "sim"
    assert app.main(["-q", "simulate", "--seed", "1", "--output-dir", str(out)] + TINY_SIMULATION) == 0
    return out


def fit(sim, out, *extra):
    return app.main(
        ["-q", "fit", "--expression", str(sim / "expression.tsv"), "--clinical", str(sim / "outcome.tsv"),
         "--seed", "3", "--output-dir", str(out)] + SHORT_CHAIN + list(extra)
    )


def test_simulate_outputs(simulated):
    for name in ("expression.tsv", "outcome.tsv", "truth.json", "true_labels.tsv", "resolved_config.env"):
        assert (simulated / name).exists()
    truth = json.loads((simulated / "truth.json").read_text())
    assert min(truth["labels"]) == 1
    assert len(truth["intrinsic"]) > 0


def test_fit_is_reproducible(simulated, tmp_path):
    assert fit(simulated, tmp_path / "a") == 0
    assert fit(simulated, tmp_path / "b") == 0
    for name in ("decisions.json", "labels.tsv", "diagnostics.tsv", "guidance.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    decisions = json.loads((tmp_path / "a" / "decisions.json").read_text())
    assert decisions["K"] == 2
    assert {s["label"] for s in decisions["samples"]} <= {1, 2}


def test_fit_without_guidance(simulated, tmp_path):
    assert app.main(["-q", "fit", "--expression", str(simulated / "expression.tsv"), "--no-guidance",
                     "--output-dir", str(tmp_path / "plain")] + SHORT_CHAIN) == 0
    diagnostics = pd.read_csv(tmp_path / "plain" / "diagnostics.tsv", sep="\t")
    assert "tau2_u0" not in diagnostics.columns
    assert not (tmp_path / "plain" / "guidance.tsv").exists()


def test_kept_draws_round_trip(simulated, tmp_path):
    assert fit(simulated, tmp_path / "run", "--keep-draws") == 0
    trace_dir = tmp_path / "run" / "trace"
    draws = load_draws(trace_dir)
    summary = json.loads((trace_dir / "summary.json").read_text())
    n_genes = len(summary["gene_ids"])
    assert draws["mu"].shape == (20, n_genes, 2)
    assert draws["Z"].shape == (20, len(summary["sample_ids"]))
    assert np.allclose(draws["L"].mean(axis=0), summary["inclusion_frequency"])


def test_precomputed_guidance(simulated, tmp_path):
    assert app.main(["-q", "guidance", "--expression", str(simulated / "expression.tsv"),
                     "--clinical", str(simulated / "outcome.tsv"), "--output-dir", str(tmp_path / "g")]) == 0
    u = pd.read_csv(tmp_path / "g" / "guidance.tsv", sep="\t", index_col=0)["u"]
    assert u.min() == 0.0 and u.max() == 1.0
    assert app.main(["-q", "fit", "--expression", str(simulated / "expression.tsv"),
                     "--guidance", str(tmp_path / "g" / "guidance.tsv"),
                     "--output-dir", str(tmp_path / "f")] + SHORT_CHAIN) == 0


def test_evaluate(simulated, tmp_path):
    assert fit(simulated, tmp_path / "run") == 0
    assert app.main(["-q", "evaluate", "--runs", str(tmp_path / "run"), "--truth", str(simulated / "truth.json"),
                     "--expression", str(simulated / "expression.tsv"), "--output-dir", str(tmp_path / "ev")]) == 0
    table = pd.read_csv(tmp_path / "ev" / "evaluation.tsv", sep="\t")
    assert -1.0 <= table.loc[0, "ari"] <= 1.0
    assert 0.0 <= table.loc[0, "auc"] <= 1.0
    assert (tmp_path / "run" / "evaluation.json").exists()


def test_fit_reports_survival_separation(simulated, tmp_path):
    outcome = pd.read_csv(simulated / "outcome.tsv", sep="\t", index_col=0)
    survival = pd.DataFrame({"time": np.exp(-outcome["outcome"] / 4.0), "event": 1}, index=outcome.index)
    survival.iloc[::5, 1] = 0
    survival.to_csv(tmp_path / "survival.tsv", sep="\t", index_label="sample_id")
    assert fit(simulated, tmp_path / "run", "--outcome-kind", "survival",
               "--clinical", str(tmp_path / "survival.tsv")) == 0
    labels = pd.read_csv(tmp_path / "run" / "labels.tsv", sep="\t", index_col=0)["label"]
    report = json.loads((tmp_path / "run" / "evaluation.json").read_text())
    if labels.nunique() < 2:
        assert report["logrank_p"] is None
    else:
        expected = logrank_p_value(survival.loc[labels.index, "time"], survival.loc[labels.index, "event"], labels)
        assert report["logrank_p"] == pytest.approx(expected)


def test_select_k(simulated, tmp_path):
    assert app.main(["-q", "select-k", "--expression", str(simulated / "expression.tsv"), "--no-guidance",
                     "--k-min", "1", "--k-max", "2", "--nt", "20", "--nb", "10",
                     "--output-dir", str(tmp_path / "k")]) == 0
    table = pd.read_csv(tmp_path / "k" / "bic.tsv", sep="\t")
    assert list(table["K"]) == [1, 2]


def test_flags_override_config_file(simulated, tmp_path):
    config_file = tmp_path / "run.env"
    config_file.write_text("nt=25\nnb=5\nthin=2\n", encoding="utf-8")
    out = tmp_path / "cfg"
    assert app.main(["-q", "--config", str(config_file), "fit", "--expression", str(simulated / "expression.tsv"),
                     "--no-guidance", "--nt", "30", "--output-dir", str(out)]) == 0
    resolved = (out / "resolved_config.env").read_text().splitlines()
    assert "nt=30" in resolved
    assert "nb=5" in resolved
    assert "thin=2" in resolved


def test_replicates_and_sweep(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    common = TINY_SIMULATION + ["--k", "2", "--nt", "20", "--nb", "10"]
    assert app.main(["-q", "replicates", "--replicates", "1", "--output-dir", str(tmp_path / "rep")] + common) == 0
    summary = pd.read_csv(tmp_path / "rep" / "replicates_summary.tsv", sep="\t")
    assert set(summary["method"]) == {"guided", "unguided"}

    assert app.main(["-q", "sweep", "--sweep-axis", "b_tau_mu1", "--sweep-points", "2",
                     "--output-dir", str(tmp_path / "sw")] + common) == 0
    sweep = pd.read_csv(tmp_path / "sw" / "sweep.tsv", sep="\t")
    assert list(sweep["value"]) == [50.0, 500.0]


def test_usage_error_exits_with_one():
    with pytest.raises(SystemExit) as info:
        app.main(["fit", "--nt", "abc"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        app.main([])
    assert info.value.code == 1


def test_missing_input_is_a_data_error(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert app.main(["-q", "fit", "--expression", str(tmp_path / "missing.tsv"), "--no-guidance",
                     "--output-dir", str(tmp_path / "out")]) == 2


def test_invalid_parameter_exits_with_one(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert app.main(["-q", "fit", "--expression", "x.tsv", "--nt", "10", "--nb", "10",
                     "--output-dir", str(tmp_path / "out")]) == 1
