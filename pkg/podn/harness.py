"""
Experiment runner: split protocol, both evaluation phases, baselines and
multi-seed suites.

Seeds of one run derive from the experiment seed: data ``seed``, split
``seed + 1``, model init ``seed + 2``, training ``seed + 3``, memory bank
``seed + 4``.
"""
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from podn.detector import DISTANCE, FEATURE, calibrate, collect_calibration_rows, evaluate_detection
from podn.errors import PodnError, ShapeError
from podn.incremental import (
    ODN_INIT,
    IncrementalConfig,
    LabelOracle,
    build_memory_bank,
    run_incremental_phase,
)
from podn.model import ExpandableNet, ModelConfig, forward, predict
from podn.prototypes import PrototypeBank, TrainConfig, distance_matrix, encode_labels, train_initial
from utils.config import METHODS, ExperimentConfig, config_to_dict
from utils.data_processing import Dataset, generate_synthetic, load_dataset, open_split, sample_stream_prefix
from utils.reports import export_metrics, write_run_files

logger = logging.getLogger(__name__)


@dataclass
class ExperimentReport:
    method: str
    seed: int
    config: dict
    top1: dict
    label_budget: dict
    detection: Optional[dict] = None
    separation: Optional[dict] = None
    training_log: List[dict] = field(default_factory=list)
    incremental_log: List[dict] = field(default_factory=list)
    per_sample: Optional[pd.DataFrame] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        doc = asdict(replace(self, per_sample=None))
        doc.pop("per_sample")
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentReport":
        return cls(**doc)

    def metrics(self) -> dict:
        """Flat scalar metrics, one suite row."""
        row = {"method": self.method, "seed": self.seed}
        if self.detection is not None:
            row.update({k: self.detection[k] for k in ("precision", "recall", "f1", "known_accept_rate")})
        row.update({k: self.top1[k] for k in ("known_accuracy", "unknown_accuracy", "combined_accuracy")})
        for key in ("labels_consumed", "expansions", "labels_per_new_category"):
            if key in self.label_budget:
                row[key] = self.label_budget[key]
        if self.separation is not None:
            row.update({k: self.separation[k] for k in
                        ("diagonal_mean", "off_diagonal_mean", "prototype_spread", "feature_spread")})
        return row


@dataclass(frozen=True)
class MethodSettings:
    train: TrainConfig
    mode: str
    incremental: IncrementalConfig


def method_settings(config: ExperimentConfig) -> MethodSettings:
    """Loss weights, score space and weight init of each method."""
    train = replace(config.train, seed=config.seed + 3)
    incremental = config.incremental
    mode = DISTANCE
    if config.method == "podn":
        train = replace(train, weights=replace(train.weights, w2=0.0))
    elif config.method in ("odn_baseline", "closed_baseline"):
        train = replace(train, weights=replace(train.weights, w1=0.0, w2=0.0))
    if config.method == "odn_baseline":
        mode = FEATURE
        incremental = replace(incremental, init=ODN_INIT)
    return MethodSettings(train, mode, incremental)


def evaluate_top1(net: ExpandableNet, test: Dataset, known_labels: Sequence[str]) -> dict:
    """
    Plain argmax accuracy over every test sample, split by known/unknown truth.

    Samples whose label has no head column always count as errors and are
    also reported under ``absent_labels``/``absent_count``.
    """
    if len(test) == 0:
        raise ShapeError("cannot evaluate accuracy on an empty test set")
    predicted = np.asarray(net.labels)[predict(net, test.features)]
    correct = predicted == test.labels
    known = np.isin(test.labels, list(known_labels))
    absent = sorted(set(test.labels.tolist()) - set(net.labels))

    def accuracy(mask):
        return float(np.mean(correct[mask])) if mask.any() else 0.0

    return {
        "known_accuracy": accuracy(known),
        "unknown_accuracy": accuracy(~known),
        "combined_accuracy": float(np.mean(correct)),
        "n_known": int(known.sum()),
        "n_unknown": int((~known).sum()),
        "absent_labels": absent,
        "absent_count": int(np.isin(test.labels, absent).sum()),
    }


def _mean_pairwise_distance(rows: np.ndarray) -> float:
    if rows.shape[0] < 2:
        return 0.0
    dists = np.linalg.norm(rows[:, None, :] - rows[None, :, :], axis=2)
    return float(dists[np.triu_indices(rows.shape[0], k=1)].mean())


def separation_stats(bank: PrototypeBank, net: ExpandableNet, dataset: Dataset) -> dict:
    """
    Two separation statistics over the categories present in ``dataset``:

    * mean diagonal vs. mean off-diagonal entry of the category-mean D matrix
      (row c is the mean distance row of the samples of category c);
    * mean pairwise distance between prototype rows vs. between per-category
      mean features, both in the logit space.
    """
    present = [label for label in bank.labels if label in set(dataset.labels.tolist())]
    columns = np.array([bank.labels.index(label) for label in present], dtype=np.int64)
    logits = forward(net, dataset.features)
    D = distance_matrix(logits, bank).values

    mean_rows = np.vstack([D[dataset.labels == label].mean(axis=0) for label in present])
    diagonal = mean_rows[np.arange(len(present)), columns]
    off = np.ones_like(mean_rows, dtype=bool)
    off[np.arange(len(present)), columns] = False
    mean_features = np.vstack([logits[dataset.labels == label].mean(axis=0) for label in present])

    return {
        "categories": len(present),
        "diagonal_mean": float(diagonal.mean()),
        "off_diagonal_mean": float(mean_rows[off].mean()) if off.any() else 0.0,
        "prototype_spread": _mean_pairwise_distance(bank.P[columns]),
        "feature_spread": _mean_pairwise_distance(mean_features),
    }


def _dataset_for(config: ExperimentConfig) -> Dataset:
    data = config.data
    if data.dataset_path:
        return load_dataset(data.dataset_path)
    return generate_synthetic(data.n_clusters, data.dim, data.per_cluster, data.separation,
                              data.sigma, seed=config.seed)


def _run_open_set(config: ExperimentConfig, split, model_config: ModelConfig,
                  settings: MethodSettings) -> ExperimentReport:
    net, bank, training_log = train_initial(split.initial, model_config, settings.train)

    y = encode_labels(split.initial.labels, net.labels)
    rows = collect_calibration_rows(net, bank, split.initial.features, y, settings.mode)
    thresholds = calibrate(rows, config.detector.eps_mu, config.detector.rho, settings.mode, net.labels)
    logger.info("thresholds calibrated in %s space: eta %s", settings.mode, np.round(thresholds.eta, 4))

    detection = evaluate_detection(net, bank, thresholds, split.test.features, split.test_unknown_mask(),
                                   ids=split.test.ids.tolist())
    held_out_known = split.test.subset(np.flatnonzero(~split.test_unknown_mask()))
    separation = separation_stats(bank, net, held_out_known)

    memory = build_memory_bank(split.initial.features, split.initial.labels,
                               settings.incremental.memory_k, seed=config.seed + 4)
    ids, X = split.stream()
    result = run_incremental_phase(net, bank, thresholds, ids, X, LabelOracle(split.oracle_labels()),
                                   memory, settings.incremental, settings.train)

    top1 = evaluate_top1(result.net, split.test, split.known_labels)
    logger.info("phase 2: combined top-1 %.4f after %d expansions", top1["combined_accuracy"],
                len(result.expansions))
    return ExperimentReport(
        method=config.method,
        seed=config.seed,
        config=config_to_dict(config),
        top1=top1,
        label_budget={**result.summary(), "oracle_queries": result.labels_consumed},
        detection=detection.to_dict(),
        separation=separation,
        training_log=training_log,
        incremental_log=result.log,
        per_sample=detection.per_sample,
    )


def _run_closed_set(config: ExperimentConfig, split, model_config: ModelConfig,
                    settings: MethodSettings) -> ExperimentReport:
    budget = config.label_budget
    if budget is None:
        matched = run_experiment(replace(config, method="podn_radius", out_dir=None))
        budget = matched.label_budget["labels_consumed"]
        logger.info("closed baseline budget matched to podn_radius: %d labels", budget)

    train_set = sample_stream_prefix(split, budget)
    registry = sorted(split.known_labels + split.unknown_labels)
    net, _, training_log = train_initial(train_set, model_config, settings.train, registry=registry,
                                         allow_empty=True)
    top1 = evaluate_top1(net, split.test, split.known_labels)
    logger.info("closed baseline: combined top-1 %.4f with %d stream labels", top1["combined_accuracy"], budget)
    return ExperimentReport(
        method=config.method,
        seed=config.seed,
        config=config_to_dict(config),
        top1=top1,
        label_budget={"labels_consumed": int(budget), "oracle_queries": 0, "training_samples": len(train_set)},
        training_log=training_log,
    )


def run_dir(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / f"{config.method}_seed{config.seed}"


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """
    One seeded run: data, split, initial training, calibration, phase-1
    detection, incremental phase and phase-2 accuracy. Files are written
    under ``run_dir(config)`` when ``config.out_dir`` is set.
    """
    if config.method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {config.method!r}")
    logger.info("run %s seed %d", config.method, config.seed)
    try:
        dataset = _dataset_for(config)
        split = open_split(dataset, config.data.known_count, config.data.min_incremental,
                           config.data.test_fraction, seed=config.seed + 1)
        model_config = ModelConfig(dataset.feature_dim, config.hidden_dims, len(split.known_labels),
                                   seed=config.seed + 2)
        settings = method_settings(config)
        if config.method == "closed_baseline":
            report = _run_closed_set(config, split, model_config, settings)
        else:
            report = _run_open_set(config, split, model_config, settings)
    except PodnError as exc:
        raise type(exc)(f"{config.method} seed {config.seed}: {exc}") from exc

    if config.out_dir:
        write_run_files(report, run_dir(config))
    return report


def _run_seed(config: ExperimentConfig, methods: Sequence[str], seed: int) -> List[dict]:
    """Every method for one seed; podn_radius goes first so the closed baseline can reuse its budget."""
    ordered = sorted(methods, key=lambda m: m != "podn_radius")
    budget = config.label_budget
    rows = []
    for method in ordered:
        run_config = replace(config, method=method, seed=seed,
                             label_budget=budget if method == "closed_baseline" else config.label_budget)
        report = run_experiment(run_config)
        if method == "podn_radius" and budget is None:
            budget = report.label_budget["labels_consumed"]
        rows.append(report.metrics())
    return rows


@dataclass
class SuiteResult:
    runs: pd.DataFrame
    summary: pd.DataFrame
    files: Dict[str, Path] = field(default_factory=dict)


def run_suite(config: ExperimentConfig, methods: Sequence[str] = METHODS, seeds: Iterable[int] = range(10),
              jobs: int = 1, db_path=None, progress: bool = True) -> SuiteResult:
    """
    Run every (method, seed) pair. Seeds run concurrently with ``jobs > 1``;
    each seed keeps its methods sequential.
    """
    methods = list(dict.fromkeys(methods))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    seeds = list(seeds)

    rows = []
    with tqdm(total=len(seeds), desc="seeds", disable=not progress) as bar:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_run_seed, config, methods, seed) for seed in seeds]
                for future in as_completed(futures):
                    rows.extend(future.result())
                    bar.update(1)
        else:
            for seed in seeds:
                rows.extend(_run_seed(config, methods, seed))
                bar.update(1)

    runs = pd.DataFrame(rows).sort_values(["method", "seed"], kind="stable").reset_index(drop=True)
    summary = runs.drop(columns=["seed"]).groupby("method").mean(numeric_only=True).reset_index()

    files = {}
    if config.out_dir:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files["suite"] = out_dir / "suite.csv"
        runs.to_csv(files["suite"], index=False)
        files["summary"] = out_dir / "summary.csv"
        summary.to_csv(files["summary"], index=False)
    if db_path is not None:
        export_metrics(runs, db_path)
        files["db"] = Path(db_path)
    logger.info("suite done: %d runs over %d seeds", len(runs), len(seeds))
    return SuiteResult(runs, summary, files)
