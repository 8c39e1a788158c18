import json

import pytest
import torch
import yaml

from mtltext.cli import main
from mtltext.corpus import read_split_manifest
from mtltext.experiments import (
    RunResult,
    evaluate_checkpoint,
    report_table,
    run_experiment,
    run_transfer,
)
from mtltext.config import ExperimentConfig
from mtltext.metrics import METRIC_NAMES, MetricsReport
from mtltext.synthetic import synthetic_posts, write_posts_csv


@pytest.fixture
def workspace(tmp_path):
    """Synthetic two-task data plus a desk-scale config file."""
    data_dir = tmp_path / "data"
    for task, seed in (("depression", 1), ("stress", 2)):
        write_posts_csv(synthetic_posts(task, 32, seed=seed), data_dir / f"{task}.csv")
    config = {
        "run_id": "demo",
        "output_dir": str(tmp_path / "runs"),
        "family": "double_encoders",
        "seed": 7,
        "data": {
            task: {"path": str(data_dir / f"{task}.csv"), "text_column": "text",
                   "label_column": "label", "id_column": "id"}
            for task in ("depression", "stress")
        },
        "encoder": {"backend": "toy", "max_length": 16, "width": 8, "layers": 1,
                    "heads": 2, "ff_width": 16, "vocab_size": 64, "seed": 0,
                    "reapply_positions": True, "verify_finite": True,
                    "pretrained_id": "bert-base-uncased"},
        "train": {"learning_rate": 0.01, "lr_step_size": 1000, "lr_gamma": 1.0,
                  "batch_size": 8, "max_epochs": 2, "patience": 2, "beta": 0.1,
                  "seed": 7, "epoch_selection": "min_val_loss"},
    }
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    return tmp_path, config_path


def test_train_command_end_to_end(workspace, capsys):
    tmp_path, config_path = workspace
    assert main(["train", "--config", str(config_path)]) == 0
    run_dir = tmp_path / "runs" / "demo"
    for artifact in ("config.yaml", "split_depression.csv", "split_stress.csv",
                     "history.json", "result.json", "split_composition.json",
                     "checkpoints/best/manifest.json", "checkpoints/best/params.npz"):
        assert (run_dir / artifact).exists(), artifact
    result = json.loads((run_dir / "result.json").read_text())
    assert result["family"] == "double_encoders"
    assert set(result["metrics"]) == {"depression", "stress"}
    printed = json.loads(capsys.readouterr().out)
    assert printed["run_id"] == "demo"


def test_train_duplicate_run_id_rejected(workspace, capsys):
    _, config_path = workspace
    assert main(["train", "--config", str(config_path)]) == 0
    assert main(["train", "--config", str(config_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"
    assert any("already exists" in p for p in err["problems"])


def test_train_stl_via_family_override(workspace):
    import time

    tmp_path, config_path = workspace
    started = time.perf_counter()
    code = main(["train", "--config", str(config_path), "--family", "stl",
                 "--task", "stress", "--run-id", "stl-run"])
    assert code == 0
    assert time.perf_counter() - started < 60.0  # desk-scale smoke budget
    result = json.loads((tmp_path / "runs" / "stl-run" / "result.json").read_text())
    assert result["strategy"] == "Single-Task Learning"
    assert list(result["metrics"]) == ["stress"]


def test_missing_data_file_is_machine_readable_error(workspace, capsys):
    tmp_path, config_path = workspace
    raw = yaml.safe_load(config_path.read_text())
    raw["data"]["stress"]["path"] = str(tmp_path / "data" / "gone.csv")
    raw["run_id"] = "broken"
    config_path.write_text(yaml.safe_dump(raw))
    assert main(["train", "--config", str(config_path)]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert any("not found" in p for p in record["problems"])
    assert not (tmp_path / "runs" / "broken").exists()


def test_evaluate_reproduces_run_metrics(workspace):
    _, config_path = workspace
    config = ExperimentConfig.from_yaml(config_path)
    result = run_experiment(config)
    reports = evaluate_checkpoint(result.checkpoint, split="test")
    for task, report in reports.items():
        for name in METRIC_NAMES:
            assert report.value(name) == result.metrics[task].value(name)
    again = evaluate_checkpoint(result.checkpoint, split="test")
    assert {t: r.to_dict() for t, r in again.items()} == \
        {t: r.to_dict() for t, r in reports.items()}


def test_evaluate_command(workspace, capsys):
    tmp_path, config_path = workspace
    assert main(["train", "--config", str(config_path)]) == 0
    capsys.readouterr()
    checkpoint = tmp_path / "runs" / "demo" / "checkpoints" / "best"
    assert main(["evaluate", "--checkpoint", str(checkpoint),
                 "--split", "validation"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert set(reports) == {"depression", "stress"}
    assert set(reports["stress"]["percent"]) == set(METRIC_NAMES)


def test_ingest_command(workspace, capsys):
    tmp_path, config_path = workspace
    assert main(["ingest", "--config", str(config_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    manifest_dir = tmp_path / "runs" / "demo-ingest"
    assert (manifest_dir / "split_depression.csv").exists()
    assert summary["ingested"]["stress"]["train"]["total"] == 22  # round(0.7 * 32)


def test_sweep_emits_runs_and_curves(workspace):
    tmp_path, config_path = workspace
    config = ExperimentConfig.from_yaml(config_path)
    from mtltext.experiments import sweep_beta

    results = sweep_beta(config, [0.01, 0.1, 0.2, 0.3])
    assert len(results) == 4
    assert [r.beta for r in results] == [0.01, 0.1, 0.2, 0.3]

    sweep_dir = tmp_path / "runs" / "demo-sweep"
    for task in ("depression", "stress"):
        lines = (sweep_dir / f"curve_{task}.csv").read_text().strip().splitlines()
        assert lines[0] == "beta,accuracy,f1"
        assert len(lines) == 5  # header + one point per beta

    # identical split manifests across all runs of the sweep
    manifests = [read_split_manifest(tmp_path / "runs" / f"demo-beta{b:g}" /
                                     "split_depression.csv")
                 for b in (0.01, 0.1, 0.2, 0.3)]
    assert all(m == manifests[0] for m in manifests)


def test_sweep_single_beta(workspace):
    tmp_path, config_path = workspace
    from mtltext.experiments import sweep_beta

    results = sweep_beta(ExperimentConfig.from_yaml(config_path), [0.5])
    assert len(results) == 1 and results[0].beta == 0.5
    curve = (tmp_path / "runs" / "demo-sweep" / "curve_stress.csv").read_text()
    assert len(curve.strip().splitlines()) == 2  # header + one point


def test_report_single_result_table():
    report = MetricsReport(precision=1.0, recall=0.5, f1=2 / 3, accuracy=0.75,
                           specificity=1.0)
    result = RunResult(run_id="only", family="stl", strategy="Single-Task Learning",
                       label="Stacked Encoders", beta=None, best_epoch=0, seed=0,
                       metrics={"stress": report}, checkpoint="")
    display, csv_text = report_table([result], "stress")
    assert "-- Single-Task Learning --" in display
    row = next(line for line in display.splitlines() if "Stacked Encoders" in line)
    assert row.split()[-5:] == ["100.00", "50.00", "66.67", "75.00", "100.00"]
    assert len(csv_text.strip().splitlines()) == 2


def test_sweep_rejects_out_of_range_beta(workspace, capsys):
    tmp_path, config_path = workspace
    assert main(["sweep", "--config", str(config_path), "--betas", "0.1,1.2"]) == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "1.2" in str(record["problems"])
    assert not (tmp_path / "runs").exists()  # rejected before any training


def test_transfer_command_records_lineage(workspace):
    tmp_path, config_path = workspace
    config = ExperimentConfig.from_yaml(config_path)
    result = run_transfer(config, "depression", "stress")
    assert result.strategy == "Transfer Learning"
    assert list(result.metrics) == ["stress"]
    run_dir = tmp_path / "runs" / "demo"
    manifest = json.loads((run_dir / "checkpoints/best/manifest.json").read_text())
    assert manifest["lineage"] == "demo@phase1"
    assert (run_dir / "checkpoints/phase1_best/manifest.json").exists()
    assert (run_dir / "history_source.json").exists()


def test_report_table_groups_and_formats(workspace, capsys):
    tmp_path, config_path = workspace
    assert main(["train", "--config", str(config_path), "--run-id", "mtl-a"]) == 0
    assert main(["train", "--config", str(config_path), "--family", "stl",
                 "--task", "depression", "--run-id", "stl-a"]) == 0
    capsys.readouterr()
    out_base = tmp_path / "report"
    assert main(["report", "--task", "depression",
                 "--runs-root", str(tmp_path / "runs"),
                 "--out", str(out_base)]) == 0
    table = capsys.readouterr().out
    assert "-- Single-Task Learning --" in table
    assert "-- Multi-Task Learning --" in table
    assert "Double Encoders" in table
    csv_text = out_base.with_suffix(".csv").read_text()
    assert csv_text.splitlines()[0].startswith("strategy,run_id,architecture")


def test_report_formats_known_rows():
    def stub(run_id, strategy, label, task, values):
        report = MetricsReport(**{name: v / 100.0 for name, v in
                                  zip(METRIC_NAMES, values)})
        return RunResult(run_id=run_id, family="double_encoders", strategy=strategy,
                         label=label, beta=0.01, best_epoch=0, seed=0,
                         metrics={task: report}, checkpoint="")

    results = [
        stub("r1", "Multi-Task Learning", "Double Encoders", "depression",
             (94.01, 91.94, 92.96, 93.27, 94.52)),
        stub("r2", "Multi-Task Learning", "Attention Fusion Network", "stress",
             (82.24, 85.03, 83.61, 82.66, 80.00)),
    ]
    display, csv_text = report_table(results, "depression")
    row = next(line for line in display.splitlines() if "Double Encoders" in line)
    assert row.split()[-5:] == ["94.01", "91.94", "92.96", "93.27", "94.52"]
    display, _ = report_table(results, "stress")
    row = next(line for line in display.splitlines()
               if "Attention Fusion Network" in line)
    assert row.split()[-5:] == ["82.24", "85.03", "83.61", "82.66", "80.00"]


def test_env_overrides_output_dir_and_precision(workspace, monkeypatch):
    tmp_path, config_path = workspace
    alt = tmp_path / "elsewhere"
    monkeypatch.setenv("MTLTEXT_OUTPUT_DIR", str(alt))
    monkeypatch.setenv("MTLTEXT_PRECISION", "float64")
    config = ExperimentConfig.from_yaml(config_path)
    assert config.output_dir == str(alt)
    assert config.torch_dtype() == torch.float64
    result = run_experiment(config)
    assert result.checkpoint.startswith(str(alt))
    import numpy as np

    with np.load(alt / "demo" / "checkpoints/best/params.npz") as blob:
        assert blob[blob.files[0]].dtype == np.float64


def test_run_experiment_reproducible(workspace):
    _, config_path = workspace
    import dataclasses

    config = ExperimentConfig.from_yaml(config_path)
    first = run_experiment(dataclasses.replace(config, run_id="rep-a"))
    second = run_experiment(dataclasses.replace(config, run_id="rep-b"))
    assert first.best_epoch == second.best_epoch
    for task in ("depression", "stress"):
        assert first.metrics[task].to_dict() == second.metrics[task].to_dict()
