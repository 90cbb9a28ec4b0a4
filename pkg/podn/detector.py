"""
Triplet-threshold unknown detection.

Each category i gets an accept threshold eta_i (mean top score of its correctly
classified rows), a reject threshold mu_i = eps_mu * eta_i and a margin
threshold delta_i = rho * mean(top - second). Score rows are distance
probabilities (the row softmax of D that loss22 trains) in ``distance`` mode and
logit rows in ``feature`` mode; the decision rule is the same for both.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from podn.errors import CalibrationError, ShapeError
from podn.model import ExpandableNet, forward
from podn.numerics import argmax_rows, as_matrix, softmax_rows
from podn.prototypes import PrototypeBank, distance_matrix

logger = logging.getLogger(__name__)

DISTANCE = "distance"
FEATURE = "feature"
MODES = (DISTANCE, FEATURE)


class Outcome(str, Enum):
    ACCEPT = "accept"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    category: Optional[int]
    top_value: float
    margin: float

    @property
    def is_unknown(self) -> bool:
        return self.outcome is Outcome.UNKNOWN


@dataclass(frozen=True)
class ThresholdSet:
    eta: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    labels: tuple
    mode: str = DISTANCE
    eps_mu: float = 0.5
    rho: float = 0.5

    def __post_init__(self):
        for name in ("eta", "mu", "delta"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "labels", tuple(self.labels))
        if not (self.eta.size == self.mu.size == self.delta.size == len(self.labels)):
            raise ShapeError("threshold vectors and labels differ in length")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def n_categories(self) -> int:
        return self.eta.size

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "eps_mu": self.eps_mu,
            "rho": self.rho,
            "labels": list(self.labels),
            "eta": self.eta.tolist(),
            "mu": self.mu.tolist(),
            "delta": self.delta.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ThresholdSet":
        return cls(np.array(doc["eta"]), np.array(doc["mu"]), np.array(doc["delta"]),
                   tuple(doc["labels"]), doc["mode"], doc["eps_mu"], doc["rho"])


def top_two(rows: np.ndarray) -> tuple:
    """Top value, second value and argmax of every row."""
    rows = as_matrix(rows, "score rows")
    if rows.shape[1] < 2:
        raise ShapeError(f"score rows need at least 2 entries, got {rows.shape[1]}")
    ordered = np.sort(rows, axis=1)
    return ordered[:, -1], ordered[:, -2], argmax_rows(rows)


def calibrate(rows_per_category: Sequence[np.ndarray], eps_mu: float = 0.5, rho: float = 0.5,
              mode: str = DISTANCE, labels: Optional[Sequence[str]] = None) -> ThresholdSet:
    """Triplet thresholds from the correctly classified score rows of each category."""
    if labels is None:
        labels = [str(i) for i in range(len(rows_per_category))]
    eta, delta = [], []
    for i, rows in enumerate(rows_per_category):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise CalibrationError(f"category {labels[i]!r} has no correctly classified rows")
        top, second, _ = top_two(rows)
        eta.append(float(np.mean(top)))
        delta.append(rho * float(np.mean(top - second)))
    eta = np.array(eta)
    return ThresholdSet(eta, eps_mu * eta, np.array(delta), tuple(labels), mode, eps_mu, rho)


def decide_rows(rows, thresholds: ThresholdSet) -> tuple:
    """
    Vectorized decision rule.

    Returns ``(unknown_mask, categories, top, margin)``. A row is accepted as
    its argmax l when top > eta_l; it is unknown when every entry is below
    its mu; otherwise it is accepted only if top - second > delta_l.
    """
    rows = as_matrix(rows, "score rows")
    if rows.shape[1] != thresholds.n_categories:
        raise ShapeError(f"rows have {rows.shape[1]} entries, thresholds {thresholds.n_categories}")
    top, second, cats = top_two(rows)
    margin = top - second
    clear_accept = top > thresholds.eta[cats]
    all_below = np.all(rows < thresholds.mu[None, :], axis=1)
    hard_accept = ~clear_accept & ~all_below & (margin > thresholds.delta[cats])
    unknown = ~(clear_accept | hard_accept)
    return unknown, cats, top, margin


def decide(score_row, thresholds: ThresholdSet) -> Decision:
    unknown, cats, top, margin = decide_rows(np.asarray(score_row, dtype=np.float64)[None, :], thresholds)
    if unknown[0]:
        return Decision(Outcome.UNKNOWN, None, float(top[0]), float(margin[0]))
    return Decision(Outcome.ACCEPT, int(cats[0]), float(top[0]), float(margin[0]))


def score_rows(net: ExpandableNet, bank: PrototypeBank, X, mode: str = DISTANCE) -> np.ndarray:
    """
    Logits in feature mode. In distance mode, the row softmax of D, so every
    score lies in (0, 1) however close a sample sits to its prototype.
    """
    logits = forward(net, X)
    if mode == FEATURE:
        return logits
    return softmax_rows(distance_matrix(logits, bank).values)


def collect_calibration_rows(net: ExpandableNet, bank: PrototypeBank, X, y, mode: str = DISTANCE,
                             fallback_to_all: bool = False) -> List[np.ndarray]:
    """
    Correctly classified score rows per category (argmax of the row equals the label).

    With ``fallback_to_all`` a category without any correct row contributes
    all of its rows instead.
    """
    rows = score_rows(net, bank, X, mode)
    y = np.asarray(y, dtype=np.int64)
    correct = argmax_rows(rows) == y
    per_category = []
    for c in range(rows.shape[1]):
        mine = y == c
        picked = rows[mine & correct]
        if picked.shape[0] == 0 and fallback_to_all and mine.any():
            logger.warning("category %r has no correctly classified calibration row; using all %d rows",
                           bank.labels[c], int(mine.sum()))
            picked = rows[mine]
        per_category.append(picked)
    return per_category


@dataclass
class DetectionReport:
    precision: float
    recall: float
    f1: float
    known_accept_rate: float
    tp: int
    fp: int
    fn: int
    tn: int
    per_sample: Optional[pd.DataFrame] = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("precision", "recall", "f1", "known_accept_rate", "tp", "fp", "fn", "tn")}


def detection_metrics(truth_unknown, predicted_unknown) -> DetectionReport:
    """Binary precision/recall/F1 with unknown as the positive class."""
    truth = np.asarray(truth_unknown, dtype=bool).astype(int)
    pred = np.asarray(predicted_unknown, dtype=bool).astype(int)
    if truth.size == 0:
        raise ShapeError("cannot evaluate detection on an empty test set")
    precision, recall, f1, _ = precision_recall_fscore_support(
        truth, pred, average="binary", pos_label=1, zero_division=0
    )
    tn, fp, fn, tp = confusion_matrix(truth, pred, labels=[0, 1]).ravel()
    knowns = truth == 0
    accept_rate = float(np.mean(pred[knowns] == 0)) if knowns.any() else 0.0
    return DetectionReport(float(precision), float(recall), float(f1), accept_rate,
                           int(tp), int(fp), int(fn), int(tn))


def evaluate_detection(net: ExpandableNet, bank: PrototypeBank, thresholds: ThresholdSet,
                       X, truth_unknown, ids: Optional[Sequence] = None) -> DetectionReport:
    """Phase-1 evaluation: score, decide and compare with the known/unknown truth."""
    X = as_matrix(X, "test samples")
    if X.shape[0] == 0:
        raise ShapeError("cannot evaluate detection on an empty test set")
    rows = score_rows(net, bank, X, thresholds.mode)
    unknown, cats, top, margin = decide_rows(rows, thresholds)
    report = detection_metrics(truth_unknown, unknown)
    if ids is None:
        ids = np.arange(X.shape[0])
    report.per_sample = pd.DataFrame({
        "id": list(ids),
        "truth": np.where(np.asarray(truth_unknown, dtype=bool), "unknown", "known"),
        "decision": [Outcome.UNKNOWN.value if u else thresholds.labels[c] for u, c in zip(unknown, cats)],
        "top": top,
        "margin": margin,
    })
    logger.info("detection: precision %.3f recall %.3f f1 %.3f", report.precision, report.recall, report.f1)
    return report


def save_thresholds(thresholds: ThresholdSet, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(thresholds.to_dict()), encoding="utf-8")
    return path


def load_thresholds(path) -> ThresholdSet:
    return ThresholdSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
