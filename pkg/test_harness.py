#!/usr/bin/env python3
"""
Test Experiment Harness
Cross-validation choice, run aggregation, failure handling and report files
"""

import json

import numpy as np
import pandas as pd
import pytest

from recourse.classifiers import recourse_svm
from recourse.explainers.local_explainer import ExplainerConfig
from recourse.harness import experiment
from recourse.harness.experiment import (
    RECORD_COLUMNS,
    ExperimentConfig,
    KernelFamily,
    Method,
    MetricSummary,
    cross_validate,
    percent_reduction,
    run_experiment,
    summarize,
    write_report,
)
from recourse.harness.report_writer import csv_path_for
from recourse.models.dataset import SyntheticSpec, make_synthetic
from recourse.models.evaluation import RecourseEvaluation
from recourse.solvers.kernels import KernelKind
from recourse.utils.errors import ContractViolation, ExperimentError

SMALL_EXPLAINER = ExplainerConfig(n_samples=300, n_sets=1, n_candidates=2, top_k=2)


@pytest.fixture(scope="module")
def synthetic():
    return make_synthetic(SyntheticSpec(n_per_cell=40, seed=2))


def small_svm_config(**overrides):
    settings = dict(
        dataset="synthetic_linear",
        method=Method.SVM,
        kernel_family=KernelFamily.LINEAR,
        lambda_grid=(0.5, 10.0),
        n_runs=2,
        sample_size=80,
        cv_folds=2,
        max_iters=3,
        seed=1,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def record(run_id, phase, split_name, u_abs, accuracy=0.9):
    return {
        "run_id": run_id, "seed": 0, "method": "svm", "model": "recourse_svm", "phase": phase,
        "split": split_name, "accuracy": accuracy, "u_abs": u_abs, "recourse_pos_group": 0.0,
        "recourse_neg_group": u_abs, "flagged": False, "lam": 1.0, "kernel": "linear",
    }


def fake_evaluation(u_abs):
    return RecourseEvaluation(
        recourse_pos_group=u_abs, recourse_neg_group=0.0, u_abs=u_abs, negatives_pos_group=3, negatives_neg_group=3
    )


# STATISTICS
def test_percent_reduction():
    assert percent_reduction(2.0, 1.0) == (0.5, False)
    assert percent_reduction(1.0, 1.5) == (-0.5, False)
    assert percent_reduction(0.0, 1.0) == (0.0, True)
    assert percent_reduction(1e-15, 1.0) == (0.0, True)
    assert percent_reduction(-1e-13, 0.0) == (0.0, True)


def test_metric_summary_is_ordered():
    summary = MetricSummary.of([4.0, 1.0, 3.0, 2.0])
    assert summary.min <= summary.q25 <= summary.median <= summary.q75 <= summary.max
    assert summary.mean == pytest.approx(2.5)
    assert summary.count == 4


def test_metric_summary_of_nothing():
    summary = MetricSummary.of([])
    assert summary.count == 0 and np.isnan(summary.mean)


def test_summarize_from_records():
    records = [
        record(0, "before", "train", 0.4), record(0, "after", "train", 0.1),
        record(1, "before", "train", 0.2), record(1, "after", "train", 0.2),
        record(0, "before", "test", 0.0), record(0, "after", "test", 0.3),
    ]
    stats = summarize(records)
    assert stats.metrics["train/u_abs/before"].mean == pytest.approx(0.3)
    assert stats.metrics["train/u_abs/after"].mean == pytest.approx(0.15)
    assert stats.reduction["train"] == pytest.approx(0.5)
    assert not stats.reduction_flagged["train"]
    assert stats.reduction_flagged["test"]
    assert stats.run_reductions["train"].median == pytest.approx(0.375)


# CROSS-VALIDATION
def test_single_grid_point_skips_cv(monkeypatch, synthetic):
    def must_not_train(*args, **kwargs):
        raise AssertionError("training should not run for a single grid point")

    monkeypatch.setattr(recourse_svm, "train_iterative", must_not_train)
    choice = cross_validate(synthetic, small_svm_config(lambda_grid=(2.0,)))
    assert choice.lam == 2.0
    assert choice.kernel.kind is KernelKind.LINEAR


@pytest.mark.parametrize(
    "accuracies, expected",
    [({0.5: 0.8, 2.0: 0.9}, 2.0), ({0.5: 0.8, 2.0: 0.8}, 0.5)],
    ids=["higher-accuracy", "smaller-lambda"],
)
def test_cv_tie_rule(monkeypatch, synthetic, accuracies, expected):
    u_by_lam = {0.5: 0.1, 1.0: 0.3, 2.0: 0.1}
    monkeypatch.setattr(recourse_svm, "train_iterative", lambda ds, kernel, cost, cfg: cfg.lam)
    monkeypatch.setattr(recourse_svm, "evaluate_recourse", lambda lam, ds: fake_evaluation(u_by_lam[lam]))
    monkeypatch.setattr(recourse_svm, "accuracy", lambda lam, ds: accuracies.get(lam, 0.5))

    choice = cross_validate(synthetic, small_svm_config(lambda_grid=(0.5, 1.0, 2.0)))
    assert choice.lam == expected
    assert choice.mean_u_abs == pytest.approx(0.1)


# RUNS
def test_svm_experiment(synthetic):
    report = run_experiment(small_svm_config(), dataset=synthetic, progress_interval=60)
    assert report.n_failed == 0
    assert len(report.records) == 2 * 4
    assert {r["phase"] for r in report.records} == {"before", "after"}
    for r in report.records:
        assert 0.0 <= r["accuracy"] <= 1.0
        assert r["u_abs"] >= 0.0
        assert r["lam"] in (0.0, 0.5, 10.0)
    assert report.statistics.metrics["test/accuracy/after"].count == 2


@pytest.mark.slow
def test_agnostic_experiment(synthetic):
    cfg = ExperimentConfig(
        dataset="synthetic_linear", method=Method.AGNOSTIC, n_runs=2, sample_size=80, explainer=SMALL_EXPLAINER, seed=4
    )
    report = run_experiment(cfg, dataset=synthetic, progress_interval=60)
    assert report.n_failed == 0
    assert len(report.records) == 2 * 4
    assert all(r["model"] == "logistic" and r["lam"] is None for r in report.records)


@pytest.mark.slow
def test_experiment_is_deterministic(synthetic):
    first = run_experiment(small_svm_config(), dataset=synthetic)
    second = run_experiment(small_svm_config(), dataset=synthetic)
    assert first.records == second.records


def test_minority_of_failures_is_tolerated(monkeypatch, synthetic):
    def sometimes_fails(cfg, ds, run_id, seed):
        if run_id == 1:
            raise RuntimeError("run blew up")
        return [record(run_id, "before", "train", 0.2), record(run_id, "after", "train", 0.1)]

    monkeypatch.setattr(experiment, "execute_run", sometimes_fails)
    report = run_experiment(small_svm_config(n_runs=3), dataset=synthetic)
    assert report.n_failed == 1
    assert report.failures[0]["run_id"] == 1
    assert report.failures[0]["error"] == "RuntimeError"
    assert len(report.records) == 4


def test_majority_of_failures_raises(monkeypatch, synthetic):
    def mostly_fails(cfg, ds, run_id, seed):
        if run_id > 0:
            raise RuntimeError("run blew up")
        return [record(run_id, "before", "train", 0.2)]

    monkeypatch.setattr(experiment, "execute_run", mostly_fails)
    with pytest.raises(ExperimentError) as info:
        run_experiment(small_svm_config(n_runs=3), dataset=synthetic)
    assert info.value.failed == 2 and info.value.total == 3


def test_config_validation():
    with pytest.raises(ContractViolation):
        small_svm_config(lambda_grid=())
    with pytest.raises(ContractViolation):
        small_svm_config(n_runs=0)
    assert ExperimentConfig(dataset="credit").resolved_sample_size == 5000
    assert ExperimentConfig(dataset="german", scale=0.1).resolved_sample_size == 100


# REPORTS
def test_report_files(tmp_path, monkeypatch, synthetic):
    monkeypatch.setattr(
        experiment,
        "execute_run",
        lambda cfg, ds, run_id, seed: [record(run_id, "before", "test", 0.4), record(run_id, "after", "test", 0.2)],
    )
    report = run_experiment(small_svm_config(), dataset=synthetic)
    json_path, csv_path = write_report(report, tmp_path / "out" / "report.json")

    assert csv_path == csv_path_for(json_path) == tmp_path / "out" / "report.records.csv"
    payload = json.loads(json_path.read_text())
    assert payload["schema_version"] == 1
    assert payload["n_failed"] == 0
    assert payload["statistics"]["reduction"]["test"] == pytest.approx(0.5)

    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == RECORD_COLUMNS
    assert len(frame) == 4
