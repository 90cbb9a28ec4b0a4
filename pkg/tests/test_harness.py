from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from podn.detector import DISTANCE, FEATURE
from podn.errors import ShapeError, SplitError
from podn.harness import (
    evaluate_top1,
    method_settings,
    run_dir,
    run_experiment,
    run_suite,
    separation_stats,
)
from podn.incremental import DISTANCE_INIT, ODN_INIT, LabelOracle
from podn.model import ExpandableNet, ModelConfig
from podn.prototypes import PrototypeBank
from utils.config import load_settings
from utils.data_processing import Dataset
from utils.reports import load_report, read_metrics, save_report


def linear_net(head_w, head_b, labels):
    head_w = np.asarray(head_w, dtype=float)
    config = ModelConfig(input_dim=head_w.shape[0], hidden_dims=(), n_categories=head_w.shape[1])
    return ExpandableNet(config, [], [], head_w, np.asarray(head_b, dtype=float), list(labels))


def test_evaluate_top1_perfect_net():
    net = linear_net(np.eye(2), np.zeros(2), ["a", "b"])
    test = Dataset(np.arange(10), ["a", "b"] * 5, np.tile([[1.0, 0.0], [0.0, 1.0]], (5, 1)))
    top1 = evaluate_top1(net, test, ["a"])
    assert top1["known_accuracy"] == top1["unknown_accuracy"] == top1["combined_accuracy"] == 1.0
    assert (top1["n_known"], top1["n_unknown"]) == (5, 5)
    assert top1["absent_labels"] == [] and top1["absent_count"] == 0


def test_evaluate_top1_constant_prediction(rng):
    net = linear_net(np.zeros((3, 2)), [1.0, 0.0], ["a", "b"])
    test = Dataset(np.arange(8), ["a"] * 4 + ["b"] * 4, rng.normal(size=(8, 3)))
    top1 = evaluate_top1(net, test, ["a"])
    assert top1["combined_accuracy"] == 0.5
    assert top1["known_accuracy"] == 1.0 and top1["unknown_accuracy"] == 0.0


def test_evaluate_top1_combined_is_weighted_mean(rng):
    net = linear_net(rng.normal(size=(4, 3)), rng.normal(size=3), ["a", "b", "c"])
    test = Dataset(np.arange(30), rng.choice(["a", "b", "c"], size=30), rng.normal(size=(30, 4)))
    top1 = evaluate_top1(net, test, ["a", "b"])
    weighted = (top1["n_known"] * top1["known_accuracy"] + top1["n_unknown"] * top1["unknown_accuracy"]) / 30
    assert top1["combined_accuracy"] == pytest.approx(weighted, abs=1e-12)


def test_evaluate_top1_absent_label_counts_as_error():
    net = linear_net(np.eye(2), np.zeros(2), ["a", "b"])
    test = Dataset(np.arange(3), ["a", "b", "z"], [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    top1 = evaluate_top1(net, test, ["a"])
    assert top1["absent_labels"] == ["z"] and top1["absent_count"] == 1
    assert top1["unknown_accuracy"] == 0.5
    assert top1["combined_accuracy"] == pytest.approx(2 / 3)
    with pytest.raises(ShapeError):
        evaluate_top1(net, Dataset([], [], np.empty((0, 2))), ["a"])


def test_separation_stats_orthogonal_prototypes():
    P = 10.0 * np.eye(3)
    labels = ["a", "b", "c"]
    net = linear_net(np.eye(3), np.zeros(3), labels)
    bank = PrototypeBank(P.copy(), np.zeros(3), labels)
    stats = separation_stats(bank, net, Dataset(np.arange(3), labels, P))
    assert stats["categories"] == 3
    assert stats["diagonal_mean"] == pytest.approx(1000.0, rel=1e-12)
    assert stats["off_diagonal_mean"] == pytest.approx(1 / 200.001, rel=1e-12)
    assert stats["prototype_spread"] == pytest.approx(np.sqrt(200.0))
    assert stats["feature_spread"] == pytest.approx(np.sqrt(200.0))


def test_separation_stats_identical_prototypes(rng):
    labels = ["a", "b", "c"]
    net = linear_net(np.eye(3), np.zeros(3), labels)
    bank = PrototypeBank(np.ones((3, 3)), np.zeros(3), labels)
    stats = separation_stats(bank, net, Dataset(np.arange(9), labels * 3, rng.normal(size=(9, 3))))
    assert stats["prototype_spread"] == 0.0


def test_separation_stats_skips_absent_categories():
    labels = ["a", "b", "c"]
    net = linear_net(np.eye(3), np.zeros(3), labels)
    bank = PrototypeBank(5.0 * np.eye(3), np.zeros(3), labels)
    stats = separation_stats(bank, net, Dataset(np.arange(2), ["a", "c"], 5.0 * np.eye(3)[[0, 2]]))
    assert stats["categories"] == 2
    assert stats["prototype_spread"] == pytest.approx(np.sqrt(50.0))


def test_method_settings(quick_config):
    radius = method_settings(quick_config)
    assert radius.train.weights.w2 == 0.01 and radius.mode == DISTANCE
    assert radius.incremental.init == DISTANCE_INIT
    assert radius.train.seed == quick_config.seed + 3
    assert radius.train.radius_backprop is True

    podn = method_settings(replace(quick_config, method="podn"))
    assert podn.train.weights.w2 == 0.0 and podn.train.weights.w1 == 0.1

    odn = method_settings(replace(quick_config, method="odn_baseline"))
    assert (odn.train.weights.w1, odn.train.weights.w2) == (0.0, 0.0)
    assert odn.mode == FEATURE and odn.incremental.init == ODN_INIT


@pytest.fixture(scope="module")
def quick_report(quick_config):
    return quick_config, run_experiment(quick_config)


def test_run_experiment_report(quick_report):
    config, report = quick_report
    assert report.method == "podn_radius" and report.seed == config.seed
    assert len(report.training_log) == 15
    assert len(report.incremental_log) == 5 * 10
    assert 0.0 <= report.detection["f1"] <= 1.0
    assert report.separation["categories"] == 3
    budget = report.label_budget
    assert budget["oracle_queries"] == budget["labels_consumed"]
    assert budget["final_n"] == 3 + budget["expansions"]
    assert sum(row["oracle"] for row in report.incremental_log) == budget["labels_consumed"]
    if budget["expansions"]:
        assert budget["labels_per_new_category"] >= 5
    assert report.per_sample is not None and len(report.per_sample) == 5 * 10


def test_run_experiment_is_deterministic(quick_report):
    config, report = quick_report
    again = run_experiment(config)
    assert again.to_dict() == report.to_dict()
    pd.testing.assert_frame_equal(again.per_sample, report.per_sample)


def test_report_json_round_trip(quick_report, tmp_path):
    _, report = quick_report
    restored = load_report(save_report(report, tmp_path / "report.json"))
    assert restored == report
    assert restored.metrics() == report.metrics()


def test_podn_without_radius_term(quick_config):
    report = run_experiment(replace(quick_config, method="podn"))
    assert all(entry["loss3"] == 0.0 for entry in report.training_log)
    assert report.config["train"]["w2"] == 0.01


def test_radius_term_changes_the_trained_model(quick_config, quick_report):
    _, radius = quick_report
    podn = run_experiment(replace(quick_config, method="podn"))
    assert any(entry["loss3"] > 0.0 for entry in radius.training_log)
    radius_loss1 = [entry["loss1"] for entry in radius.training_log]
    podn_loss1 = [entry["loss1"] for entry in podn.training_log]
    assert radius_loss1[0] != podn_loss1[0]
    assert radius.separation["prototype_spread"] != podn.separation["prototype_spread"]


def test_odn_baseline_runs_in_feature_space(quick_config):
    report = run_experiment(replace(quick_config, method="odn_baseline"))
    assert all(entry["total"] == entry["loss1"] for entry in report.training_log)
    assert report.detection is not None


def test_closed_baseline_never_consults_the_oracle(quick_config, monkeypatch):
    def refuse(self, sample_id):
        raise AssertionError(f"oracle consulted for {sample_id}")

    monkeypatch.setattr(LabelOracle, "query", refuse)
    report = run_experiment(replace(quick_config, method="closed_baseline", label_budget=20))
    assert report.label_budget == {"labels_consumed": 20, "oracle_queries": 0, "training_samples": 3 * 20 + 20}
    assert report.detection is None and report.incremental_log == []
    assert report.top1["absent_labels"] == []


def test_closed_baseline_matches_podn_radius_budget(quick_config, quick_report):
    _, radius = quick_report
    closed = run_experiment(replace(quick_config, method="closed_baseline"))
    assert closed.label_budget["labels_consumed"] == radius.label_budget["labels_consumed"]


def test_run_experiment_writes_files(quick_config, tmp_path):
    config = replace(quick_config, out_dir=str(tmp_path))
    report = run_experiment(config)
    folder = run_dir(config)
    assert folder == tmp_path / "podn_radius_seed0"
    for name in ("report.json", "training_log.csv", "incremental_log.csv", "categories.csv", "detection.csv"):
        assert (folder / name).exists(), name
    assert load_report(folder / "report.json") == report
    training = pd.read_csv(folder / "training_log.csv")
    assert {"epoch", "loss1", "loss2", "loss3", "total", "train_accuracy"} <= set(training.columns)
    categories = pd.read_csv(folder / "categories.csv")
    assert list(categories.columns) == ["iteration", "n_categories"]
    assert categories["n_categories"].is_monotonic_increasing


def test_run_experiment_adds_context_to_errors(quick_config):
    config = replace(quick_config, data=replace(quick_config.data, per_cluster=8))
    with pytest.raises(SplitError, match="podn_radius seed 0"):
        run_experiment(config)


def test_run_suite_exports_metrics(quick_config, tmp_path):
    config = replace(quick_config, out_dir=str(tmp_path / "suite"))
    db = tmp_path / "metrics.duckdb"
    result = run_suite(config, methods=["closed_baseline", "podn_radius"], seeds=[0, 1], db_path=db, progress=False)
    assert len(result.runs) == 4
    assert result.summary["method"].tolist() == ["closed_baseline", "podn_radius"]
    assert result.files["suite"].exists() and result.files["summary"].exists()

    stored = read_metrics(db)
    assert set(stored["run_id"]) == {"closed_baseline_seed0", "closed_baseline_seed1",
                                     "podn_radius_seed0", "podn_radius_seed1"}
    assert stored["value"].notna().all()
    assert "f1" not in set(stored.loc[stored["method"] == "closed_baseline", "metric"])

    radius = result.runs[result.runs["method"] == "podn_radius"].set_index("seed")
    closed = result.runs[result.runs["method"] == "closed_baseline"].set_index("seed")
    pd.testing.assert_series_equal(closed["labels_consumed"], radius["labels_consumed"], check_dtype=False)

    run_suite(config, methods=["podn_radius"], seeds=[0], db_path=db, progress=False)
    assert len(read_metrics(db)) == len(stored)


def test_run_suite_rejects_unknown_method(quick_config):
    with pytest.raises(ValueError, match="unknown methods"):
        run_suite(quick_config, methods=["svm"], seeds=[0], progress=False)


def test_run_suite_parallel_matches_sequential(quick_config):
    sequential = run_suite(quick_config, methods=["podn"], seeds=[0, 1], progress=False)
    parallel = run_suite(quick_config, methods=["podn"], seeds=[0, 1], jobs=2, progress=False)
    pd.testing.assert_frame_equal(sequential.runs, parallel.runs)


@pytest.fixture(scope="module")
def reference_suite():
    config = replace(load_settings(None), out_dir=None)
    return run_suite(config, seeds=range(10), jobs=4, progress=False).runs


def mean_of(runs, method, column):
    return runs.loc[runs["method"] == method, column].mean()


@pytest.mark.slow
def test_reference_detection_f1_and_ordering(reference_suite):
    radius = mean_of(reference_suite, "podn_radius", "f1")
    podn = mean_of(reference_suite, "podn", "f1")
    odn = mean_of(reference_suite, "odn_baseline", "f1")
    assert radius >= 0.90
    assert radius - podn >= -0.02
    assert podn - odn >= -0.02


@pytest.mark.slow
def test_reference_open_set_accuracy_beats_closed_baseline(reference_suite):
    radius = mean_of(reference_suite, "podn_radius", "combined_accuracy")
    closed = mean_of(reference_suite, "closed_baseline", "combined_accuracy")
    assert radius >= closed + 0.03


@pytest.mark.slow
def test_reference_labels_per_new_category(reference_suite):
    assert 5.0 <= mean_of(reference_suite, "podn_radius", "labels_per_new_category") <= 8.0


@pytest.mark.slow
def test_reference_prototypes_spread_wider_than_mean_features(reference_suite):
    radius = reference_suite[reference_suite["method"] == "podn_radius"]
    assert int((radius["prototype_spread"] >= radius["feature_spread"]).sum()) >= 8
