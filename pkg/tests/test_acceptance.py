"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Everything runs on the toy backend at desk scale. Stated tolerances and
runtime budgets are asserted, not just measured.
"""

import dataclasses
import json
import random
import time

import pytest
import torch
import yaml

from mtltext.corpus import read_split_manifest, split_corpus
from mtltext.encoders import EncoderConfig
from mtltext.experiments import evaluate_checkpoint, run_experiment
from mtltext.config import ExperimentConfig
from mtltext.gradcheck import (
    analytic_gradients,
    finite_difference_gradients,
    max_relative_error,
)
from mtltext.metrics import ConfusionCounts, compute_metrics, confusion
from mtltext.models import FusionGate, attention_fusion, build_model, parameter_partition
from mtltext.synthetic import synthetic_posts, write_posts_csv
from mtltext.training import (
    EarlyStopping,
    TrainConfig,
    cross_entropy,
    joint_loss,
    step_lr,
    train_mtl,
    train_stl,
    transfer_train,
)

DESK_ENCODER = EncoderConfig(backend="toy", max_length=16, width=8, layers=1,
                             heads=2, ff_width=16, vocab_size=64, seed=0)
OVERFIT = TrainConfig(learning_rate=0.01, lr_step_size=1000, lr_gamma=1.0,
                      batch_size=8, max_epochs=40, patience=40, beta=0.3, seed=0)


class Stopwatch:
    def __init__(self, criterion: str, budget_seconds: float):
        self.criterion = criterion
        self.budget = budget_seconds

    def __enter__(self):
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.started
        status = "PASS" if exc_type is None else "FAIL"
        print(f"[acceptance] {self.criterion}: {status} ({elapsed:.1f}s)")
        if exc_type is None:
            assert elapsed < self.budget, (
                f"{self.criterion} exceeded its {self.budget:.0f}s budget: {elapsed:.1f}s")


def test_criterion_1_fusion_gate_normalization():
    with Stopwatch("criterion 1 (fusion-gate normalization, 10k inputs)", 10.0):
        gate = FusionGate(8)
        gen = torch.Generator().manual_seed(42)
        h_task = torch.randn(10_000, 8, generator=gen) * 3.0
        h_shared = torch.randn(10_000, 8, generator=gen) * 3.0
        fused, weights = attention_fusion(h_task, h_shared, gate)
        assert torch.all(weights > 0.0) and torch.all(weights < 1.0)
        assert (weights.sum(-1) - 1.0).abs().max().item() < 1e-6
        lo = torch.minimum(h_task, h_shared)
        hi = torch.maximum(h_task, h_shared)
        assert torch.all(fused >= lo - 1e-6) and torch.all(fused <= hi + 1e-6)


class _SingleTaskLoss(torch.nn.Module):
    def __init__(self, model, ids, mask, labels):
        super().__init__()
        self.model = model
        self.args = (ids, mask, labels)

    def forward(self):
        ids, mask, labels = self.args
        return cross_entropy(self.model(ids, mask), labels)


class _JointLoss(torch.nn.Module):
    def __init__(self, model, batches, beta):
        super().__init__()
        self.model = model
        self.batches = batches
        self.beta = beta

    def forward(self):
        losses = {}
        for task, (ids, mask, labels) in self.batches.items():
            losses[task] = cross_entropy(self.model.task_logits(task, ids, mask), labels)
        return joint_loss(losses["depression"], losses["stress"], self.beta).total


def _desk_batches(model):
    ids_d, mask_d = model.tokenizer.tokenize_batch(["hollow weary numb"])
    ids_s, mask_s = model.tokenizer.tokenize_batch(["deadline panic backlog"])
    return {
        "depression": (ids_d, mask_d, torch.tensor([1])),
        "stress": (ids_s, mask_s, torch.tensor([0])),
    }


def test_criterion_2_gradient_check_all_families():
    with Stopwatch("criterion 2 (finite-difference gradient check)", 300.0):
        config = dataclasses.replace(DESK_ENCODER, verify_finite=False)
        worst = {}
        for family in ("stl", "double_encoders", "attention_fusion"):
            task = "depression" if family == "stl" else None
            model = build_model(family, config, seed=17, task=task,
                                dtype=torch.float64)
            batches = _desk_batches(model)
            if family == "stl":
                loss_module = _SingleTaskLoss(model, *batches["depression"])
            else:
                loss_module = _JointLoss(model, batches, beta=0.3)
            _, analytic = analytic_gradients(loss_module, ())
            numeric = finite_difference_gradients(loss_module, (), step=1e-4)
            worst[family] = max_relative_error(analytic, numeric)
            assert worst[family] < 1e-3, (family, worst[family])
        print(f"  max relative errors: { {k: f'{v:.2e}' for k, v in worst.items()} }")


def test_criterion_3_joint_loss_properties():
    with Stopwatch("criterion 3 (joint-loss properties)", 120.0):
        # affine in beta: exact fit from evaluations at 0, 0.5, 1
        ld, ls = 1.4173, 0.6021
        at0 = joint_loss(ld, ls, 0.0).total
        at_half = joint_loss(ld, ls, 0.5).total
        at1 = joint_loss(ld, ls, 1.0).total
        assert at0 == pytest.approx(ld, abs=1e-15)
        assert at1 == pytest.approx(ls, abs=1e-15)
        assert at_half == pytest.approx(at0 + 0.5 * (at1 - at0), rel=1e-12)

        # gradient superposition on shared parameters, relative error < 1e-6
        config = dataclasses.replace(DESK_ENCODER, verify_finite=False)
        model = build_model("attention_fusion", config, seed=23, dtype=torch.float64)
        batches = _desk_batches(model)
        beta = 0.3

        def shared_grads(loss_module):
            for p in model.parameters():
                p.grad = None
            loss_module().backward()
            return {name: (p.grad.clone() if p.grad is not None
                           else torch.zeros_like(p))
                    for name, p in model.named_parameters()
                    if name.startswith("shared_encoder.")}

        def task_loss(task):
            ids, mask, labels = batches[task]
            return cross_entropy(model.task_logits(task, ids, mask), labels)

        g_d = shared_grads(lambda: task_loss("depression"))
        g_s = shared_grads(lambda: task_loss("stress"))
        g_joint = shared_grads(
            lambda: joint_loss(task_loss("depression"), task_loss("stress"), beta).total)
        for name in g_joint:
            expected = (1 - beta) * g_d[name] + beta * g_s[name]
            scale = torch.maximum(g_joint[name].abs(), expected.abs()).clamp_min(1e-12)
            keep = (g_joint[name].abs() + expected.abs()) > 1e-12
            if keep.any():
                rel = ((g_joint[name] - expected).abs() / scale)[keep]
                assert rel.max().item() < 1e-6, name

        # beta = 0: ten optimizer steps leave stress-owned parameters untouched
        data = {task: synthetic_posts(task, 40, seed=i)
                for i, task in enumerate(("depression", "stress"))}
        config10 = TrainConfig(learning_rate=0.01, lr_step_size=1000, lr_gamma=1.0,
                               batch_size=4, max_epochs=1, patience=1, beta=0.0,
                               seed=0)  # 40 posts / batch 4 = 10 paired steps
        model = build_model("attention_fusion", DESK_ENCODER, seed=29)
        stress_owned = parameter_partition(model)["stress"]
        named = dict(model.named_parameters())
        before = {name: named[name].detach().clone() for name in stress_owned}
        train_mtl(model, data, data, config10)
        named = dict(model.named_parameters())
        for name in stress_owned:
            assert torch.equal(named[name], before[name]), name


def test_criterion_4_metrics_oracle():
    with Stopwatch("criterion 4 (metrics vs brute-force oracle)", 5.0):
        report = compute_metrics(ConfusionCounts(tp=3, fp=1, fn=2, tn=4))
        assert [report.as_percent(n) for n in
                ("precision", "recall", "f1", "accuracy", "specificity")] == \
            [75.00, 60.00, 66.67, 70.00, 80.00]

        rng = random.Random(2024)
        for _ in range(1000):
            n = rng.randint(1, 50)
            predictions = [rng.randint(0, 1) for _ in range(n)]
            labels = [rng.randint(0, 1) for _ in range(n)]
            counts = confusion(predictions, labels)
            pairs = list(zip(predictions, labels))
            assert counts.tp == sum(1 for p, l in pairs if p == l == 1)
            assert counts.fp == sum(1 for p, l in pairs if p == 1 and l == 0)
            assert counts.fn == sum(1 for p, l in pairs if p == 0 and l == 1)
            assert counts.tn == sum(1 for p, l in pairs if p == l == 0)
            report = compute_metrics(counts)
            total = counts.total
            assert report.accuracy == (counts.tp + counts.tn) / total
            if counts.tp + counts.fp:
                assert report.precision == counts.tp / (counts.tp + counts.fp)
            if counts.tp + counts.fn:
                assert report.recall == counts.tp / (counts.tp + counts.fn)
            if counts.tn + counts.fp:
                assert report.specificity == counts.tn / (counts.tn + counts.fp)


def _train_accuracy(model, posts, task):
    ids, mask = model.tokenizer.tokenize_batch([p.text for p in posts])
    with torch.no_grad():
        predictions = model.task_logits(task, ids, mask).argmax(-1)
    return (predictions == torch.tensor([p.label for p in posts])).float().mean().item()


def test_criterion_5_overfit_smoke_all_families():
    with Stopwatch("criterion 5 (overfit smoke, three families)", 600.0):
        data = {task: synthetic_posts(task, 64, seed=i)
                for i, task in enumerate(("depression", "stress"))}

        for task in ("depression", "stress"):
            model = build_model("stl", DESK_ENCODER, seed=31, task=task)
            model, history = train_stl(model, data[task], data[task], OVERFIT)
            assert len(history.records) <= 200
            assert _train_accuracy(model, data[task], task) >= 0.95, ("stl", task)
            assert history.best_epoch == min(
                range(len(history.records)), key=lambda i: history.monitored[i])

        for family in ("double_encoders", "attention_fusion"):
            model = build_model(family, DESK_ENCODER, seed=31)
            model, history = train_mtl(model, data, data, OVERFIT)
            assert len(history.records) <= 200
            for task in ("depression", "stress"):
                assert _train_accuracy(model, data[task], task) >= 0.95, (family, task)
            # best-epoch bookkeeping: argmin of the monitored joint loss
            assert history.best_epoch == min(
                range(len(history.records)), key=lambda i: history.monitored[i])
            if history.stopped_early:
                tail = history.monitored[history.best_epoch + 1:]
                assert len(tail) == OVERFIT.patience


def test_criterion_6_pipeline_parity(tmp_path):
    with Stopwatch("criterion 6 (transfer handoff + checkpoint parity)", 300.0):
        # transfer: phase 2 must start from the phase-1 best-epoch encoders
        splits = {task: split_corpus(synthetic_posts(task, 40, seed=i), seed=9)
                  for i, task in enumerate(("depression", "stress"))}
        config = TrainConfig(learning_rate=0.01, lr_step_size=1000, lr_gamma=1.0,
                             batch_size=8, max_epochs=3, patience=3, seed=11)
        replica = build_model("stl", DESK_ENCODER, seed=11, task="depression")
        replica, _ = train_stl(replica, splits["depression"].train,
                               splits["depression"].validation,
                               dataclasses.replace(config, learning_rate=1e-4))
        phase1_state = {k: v.clone() for k, v in replica.state_dict().items()}
        # target lr below float32 resolution: updates round to zero, exposing
        # the exact phase-2 starting parameters in the returned model
        outcome = transfer_train("depression", "stress", splits, DESK_ENCODER,
                                 config, source_lr=1e-4, target_lr=1e-30)
        final = outcome.model.state_dict()
        for name, tensor in phase1_state.items():
            if not name.startswith("head."):
                assert torch.equal(final[name], tensor), name
        assert not torch.equal(final["head.weight"], phase1_state["head.weight"])

        # checkpoint: save -> load -> evaluate reproduces in-memory metrics bitwise
        data_dir = tmp_path / "data"
        for task, seed in (("depression", 1), ("stress", 2)):
            write_posts_csv(synthetic_posts(task, 32, seed=seed),
                            data_dir / f"{task}.csv")
        exp = ExperimentConfig.from_dict({
            "run_id": "parity", "output_dir": str(tmp_path / "runs"),
            "family": "double_encoders", "seed": 7,
            "data": {task: {"path": str(data_dir / f"{task}.csv"),
                            "id_column": "id"}
                     for task in ("depression", "stress")},
            "encoder": DESK_ENCODER.to_dict(),
            "train": {"learning_rate": 0.01, "lr_step_size": 1000, "lr_gamma": 1.0,
                      "batch_size": 8, "max_epochs": 2, "patience": 2, "beta": 0.1,
                      "seed": 7},
        })
        result = run_experiment(exp)
        reloaded = evaluate_checkpoint(result.checkpoint, split="test")
        for task, report in reloaded.items():
            assert report.to_dict()["raw"] == result.metrics[task].to_dict()["raw"]


def test_criterion_7_schedule_and_stopping():
    with Stopwatch("criterion 7 (step decay + patience contract)", 120.0):
        posts = synthetic_posts("stress", 12, seed=0)
        config = TrainConfig(learning_rate=1e-5, lr_step_size=5, lr_gamma=0.1,
                             batch_size=4, max_epochs=15, patience=15, seed=0)
        model = build_model("stl", DESK_ENCODER, seed=0, task="stress")
        _, history = train_stl(model, posts, posts, config)
        assert [r.epoch for r in history.records] == list(range(15))
        for record in history.records:
            assert record.learning_rate["stress"] == step_lr(1e-5, record.epoch)

        stopper = EarlyStopping(patience=8)
        sequence = [1.0, 0.9] + [0.95 + 0.001 * i for i in range(8)]
        halts = [stopper.update(v) for v in sequence]
        assert halts == [False] * 9 + [True]  # stops exactly at the 8th bad epoch
        assert stopper.best_index == 1


def test_criterion_8_sweep_shape(tmp_path, capsys):
    with Stopwatch("criterion 8 (beta sweep shape)", 300.0):
        from mtltext.cli import main

        data_dir = tmp_path / "data"
        for task, seed in (("depression", 1), ("stress", 2)):
            write_posts_csv(synthetic_posts(task, 32, seed=seed),
                            data_dir / f"{task}.csv")
        config = {
            "run_id": "sw", "output_dir": str(tmp_path / "runs"),
            "family": "attention_fusion", "seed": 5,
            "data": {task: {"path": str(data_dir / f"{task}.csv"), "id_column": "id"}
                     for task in ("depression", "stress")},
            "encoder": DESK_ENCODER.to_dict(),
            "train": {"learning_rate": 0.01, "lr_step_size": 1000, "lr_gamma": 1.0,
                      "batch_size": 8, "max_epochs": 2, "patience": 2, "beta": 0.1,
                      "seed": 5},
        }
        config_path = tmp_path / "config.yaml"
        config_path.write_text(yaml.safe_dump(config))
        assert main(["sweep", "--config", str(config_path),
                     "--betas", "0.01,0.1,0.2,0.3"]) == 0
        results = json.loads(capsys.readouterr().out)
        assert len(results) == 4
        assert [r["beta"] for r in results] == [0.01, 0.1, 0.2, 0.3]
        for r in results:
            assert set(r["metrics"]) == {"depression", "stress"}

        sweep_dir = tmp_path / "runs" / "sw-sweep"
        for task in ("depression", "stress"):
            lines = (sweep_dir / f"curve_{task}.csv").read_text().strip().splitlines()
            assert lines[0] == "beta,accuracy,f1"
            assert len(lines) == 1 + 4  # four points per metric per task

        manifests = [read_split_manifest(tmp_path / "runs" / f"sw-beta{b:g}" /
                                         "split_stress.csv")
                     for b in (0.01, 0.1, 0.2, 0.3)]
        assert all(m == manifests[0] for m in manifests)
