import json
import shutil

import pytest

from idxuq.cli import main
from idxuq.estimator import load_model
from idxuq.synthdb import load_json, schema_from_dict

from .helpers import tiny_config_dict


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """gen + train executed once; read-only for most tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config_dict(seed=11)))
    out = root / "run"
    assert main(["gen", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


def test_gen_writes_artifacts(cli_run):
    _, out = cli_run
    for name in ("schema.json", "workload.json", "dataset.csv", "splits.json"):
        path = out / name
        assert path.exists() and path.stat().st_size > 0


def test_gen_rerun_byte_identical(cli_run, tmp_path):
    cfg_path, out = cli_run
    second = tmp_path / "again"
    assert main(["gen", "--config", str(cfg_path), "--out", str(second)]) == 0
    assert (second / "dataset.csv").read_bytes() == (out / "dataset.csv").read_bytes()


def test_gen_creates_missing_directories(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config_dict(seed=11)))
    nested = tmp_path / "not" / "yet" / "there"
    assert main(["gen", "--config", str(cfg_path), "--out", str(nested)]) == 0
    assert (nested / "dataset.csv").exists()


def test_train_embeds_thresholds(cli_run):
    _, out = cli_run
    model = load_model(out / "model.json")
    assert model.thresholds is not None
    assert model.thresholds.mode == "hybrid"
    assert model.thresholds.alpha == 1.3  # default


def test_train_load_roundtrip(cli_run):
    _, out = cli_run
    a = load_model(out / "model.json")
    b = load_model(out / "model.json")
    assert a.encoder.params_digest() == b.encoder.params_digest()
    assert a.predictor.params_digest() == b.predictor.params_digest()
    assert a.decoder.params_digest() == b.decoder.params_digest()


def test_calibrate_u1_only_marks_mode(cli_run, tmp_path):
    cfg_path, out = cli_run
    work = tmp_path / "calib"
    shutil.copytree(out, work)
    assert main(["calibrate", "--config", str(cfg_path), "--out", str(work),
                 "--u1-only", "--alpha", "1.0"]) == 0
    model = load_model(work / "model.json")
    assert model.thresholds.mode == "u1_only"
    assert model.thresholds.alpha == 1.0
    assert model.thresholds.theta2 is None


def test_eval_commands(cli_run, tmp_path):
    cfg_path, out = cli_run
    work = tmp_path / "evals"
    shutil.copytree(out, work)
    assert main(["eval-uq", "--config", str(cfg_path), "--out", str(work)]) == 0
    assert (work / "uncertainties.csv").exists()
    assert (work / "reports.csv").exists()
    assert "unreliable_recall" in load_json(work / "eval_uq.json")
    assert main(["eval-be", "--config", str(cfg_path), "--out", str(work)]) == 0
    assert (work / "errors.csv").exists()
    pct = load_json(work / "eval_be.json")["error_percentiles"]
    assert set(pct) >= {"model", "whatif", "hybrid"}


def test_tune_budget_percentages(cli_run, tmp_path):
    cfg_path, out = cli_run
    work = tmp_path / "tune"
    shutil.copytree(out, work)
    assert main(["tune", "--config", str(cfg_path), "--out", str(work),
                 "--budgets", "5,15"]) == 0
    schema = schema_from_dict(load_json(work / "schema.json"))
    for port in ("oracle", "whatif", "model", "model_filter"):
        for pct in (5, 15):
            data = load_json(work / f"tuning_{port}_{pct}.json")
            assert data["budget_bytes"] == int(schema.total_bytes * pct / 100)
            assert data["added_bytes"] <= data["budget_bytes"]


def test_tune_byte_budgets(cli_run, tmp_path):
    cfg_path, out = cli_run
    work = tmp_path / "tune_bytes"
    shutil.copytree(out, work)
    assert main(["tune", "--config", str(cfg_path), "--out", str(work),
                 "--budget-bytes", "2000000"]) == 0
    data = load_json(work / "tuning_oracle_2000000B.json")
    assert data["budget_bytes"] == 2_000_000


def test_tune_budget_flags_exclusive(cli_run, capsys):
    cfg_path, out = cli_run
    assert main(["tune", "--config", str(cfg_path), "--out", str(out),
                 "--budgets", "5", "--budget-bytes", "100"]) == 2
    assert "mutually exclusive" in capsys.readouterr().err


def test_report_merges_stage_outputs(cli_run, tmp_path):
    cfg_path, out = cli_run
    work = tmp_path / "report"
    shutil.copytree(out, work)
    for cmd in ("eval-uq", "eval-be", "tune"):
        assert main([cmd, "--config", str(cfg_path), "--out", str(work)]) == 0
    assert main(["report", "--config", str(cfg_path), "--out", str(work)]) == 0
    merged = load_json(work / "metrics.json")
    assert {"unreliable_recall", "error_percentiles", "improvement"} <= set(merged)


def test_report_without_stages_fails(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_inputs_fail_cleanly(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config_dict()))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "run earlier stages first" in err


def test_invalid_config_reports_path(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"schema": {"rows": 1}}))
    assert main(["gen", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2
    assert "schema.rows" in capsys.readouterr().err


def test_seed_override_changes_dataset(cli_run, tmp_path):
    cfg_path, out = cli_run
    other = tmp_path / "other"
    assert main(["gen", "--config", str(cfg_path), "--out", str(other),
                 "--seed", "12"]) == 0
    assert (other / "dataset.csv").read_bytes() != (out / "dataset.csv").read_bytes()


def test_env_var_default_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("IDXUQ_OUT", str(tmp_path / "envroot"))
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(tiny_config_dict(seed=11)))
    assert main(["gen", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "envroot" / "default" / "dataset.csv").exists()
