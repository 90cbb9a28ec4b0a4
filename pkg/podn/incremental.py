"""
Incremental phase: detect unknowns in a stream, label them through an oracle
and grow the net, the prototypes and the radiuses one category at a time.
"""
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Sequence

import numpy as np

from podn.detector import ThresholdSet, calibrate, collect_calibration_rows, decide, score_rows
from podn.errors import ExpansionError, OracleMissError, ShapeError, UnbalancedError
from podn.model import ExpandableNet, expand_output_dim, forward
from podn.numerics import as_matrix
from podn.prototypes import PrototypeBank, TrainConfig, distance_matrix, fit

logger = logging.getLogger(__name__)

DISTANCE_INIT = "distance"
ODN_INIT = "odn"


class LabelOracle:
    """Ground-truth labels for stream samples; every query is metered."""

    def __init__(self, labels: Mapping):
        self._labels = dict(labels)
        self.labels_consumed = 0
        self.consumption = Counter()

    def query(self, sample_id) -> str:
        try:
            label = self._labels[sample_id]
        except KeyError:
            raise OracleMissError(f"no ground truth for sample {sample_id!r}") from None
        self.labels_consumed += 1
        self.consumption[label] += 1
        return label


@dataclass
class MemoryBank:
    """K retained samples per category for balance training."""
    k: int
    samples: Dict[str, np.ndarray] = field(default_factory=dict)

    def add_category(self, label: str, rows) -> None:
        rows = as_matrix(rows, "memory samples")
        if rows.shape[0] != self.k:
            raise UnbalancedError(f"category {label!r} brings {rows.shape[0]} samples, memory holds {self.k}")
        self.samples[label] = rows.copy()

    def stacked(self, registry: Sequence[str]) -> tuple:
        """Samples and integer labels of every category in ``registry`` order."""
        missing = [label for label in registry if label not in self.samples]
        if missing:
            raise UnbalancedError(f"memory has no samples for {missing}")
        X = np.vstack([self.samples[label] for label in registry])
        y = np.repeat(np.arange(len(registry)), self.k)
        return X, y


def build_memory_bank(X, labels: Sequence[str], k: int = 5, seed: int = 0) -> MemoryBank:
    X = as_matrix(X, "samples")
    labels = np.asarray([str(label) for label in labels])
    rng = np.random.default_rng(seed)
    memory = MemoryBank(k)
    for label in sorted(set(labels)):
        idx = np.flatnonzero(labels == label)
        if idx.size < k:
            raise UnbalancedError(f"category {label!r} has {idx.size} samples, memory needs {k}")
        memory.add_category(label, X[rng.choice(idx, size=k, replace=False)])
    return memory


@dataclass(frozen=True)
class IncrementalConfig:
    trigger: int = 5
    memory_k: int = 5
    allometry: float = 10.0
    finetune_epochs: int = 10
    init: str = DISTANCE_INIT
    odn_alpha: float = 0.5
    odn_beta: float = 0.5
    odn_m: int = 3


def mean_normalized_alpha(rows) -> np.ndarray:
    """Average the distance rows, then scale the mean row to sum to one."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.size == 0:
        raise ShapeError("no distance rows to normalize")
    if (rows <= 0).any():
        raise ValueError("distance rows must be strictly positive")
    mean_row = rows.mean(axis=0)
    return mean_row / mean_row.sum()


def distance_weight_init(alpha, head_w) -> np.ndarray:
    """New head column ``(1/N) * sum_n alpha_n * w_n``."""
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    head_w = as_matrix(head_w, "head weights")
    n = head_w.shape[1]
    if alpha.size != n:
        raise ShapeError(f"{alpha.size} weights for {n} head columns")
    if abs(alpha.sum() - 1.0) > 1e-6:
        raise ValueError(f"alpha must sum to 1, sums to {alpha.sum()}")
    return (head_w @ alpha) / n


def odn_weight_init(feature_scores, head_w, alpha_param: float = 0.5, beta_param: float = 0.5,
                    m: int = 3) -> np.ndarray:
    """
    Baseline column ``alpha * mean(all columns) + beta * mean(M most similar columns)``.

    Similarity ranks categories by their mean score over ``feature_scores``
    (one row per trigger sample), highest first, ties to the lower index.
    """
    head_w = as_matrix(head_w, "head weights")
    n = head_w.shape[1]
    if m > n or m < 1:
        raise ValueError(f"M must lie in [1, {n}], got {m}")
    scores = np.atleast_2d(np.asarray(feature_scores, dtype=np.float64)).mean(axis=0)
    if scores.size != n:
        raise ShapeError(f"scores have {scores.size} entries for {n} head columns")
    nearest = np.argsort(-scores, kind="stable")[:m]
    return alpha_param * head_w.mean(axis=1) + beta_param * head_w[:, nearest].mean(axis=1)


def expand_category(net: ExpandableNet, bank: PrototypeBank, samples, label: str,
                    init: str = DISTANCE_INIT, odn_alpha: float = 0.5, odn_beta: float = 0.5,
                    odn_m: int = 3) -> tuple:
    """
    Add category ``label`` to the head, the prototypes and the radiuses.

    Existing prototype rows gain a zero coordinate, the new prototype is the
    mean post-expansion logit of ``samples`` and the new radius is the mean of
    the existing ones.
    """
    if label in net.labels or label in bank.labels:
        raise ExpansionError(f"category {label!r} is already known")
    samples = as_matrix(samples, "trigger samples")
    logits = forward(net, samples)
    if init == ODN_INIT:
        column = odn_weight_init(logits, net.head_w, odn_alpha, odn_beta, min(odn_m, net.n_categories))
    else:
        alpha = mean_normalized_alpha(distance_matrix(logits, bank).values)
        column = distance_weight_init(alpha, net.head_w)
    grown = expand_output_dim(net, column, float(np.mean(net.head_b)), label)

    n = bank.n_categories
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = bank.P
    P[n] = forward(grown, samples).mean(axis=0)
    r = np.append(bank.r, np.mean(bank.r))
    grown_bank = PrototypeBank(P, r, [*bank.labels, label], bank.epsilon_dist)
    logger.info("expanded to %d categories with %r (%s init)", grown.n_categories, label, init)
    return grown, grown_bank


def finetune_balanced(net: ExpandableNet, bank: PrototypeBank, memory: MemoryBank, new_samples,
                      allometry_factor: float, epochs: int, train_config: TrainConfig) -> tuple:
    """
    Fine-tune on K memory samples per known category plus the K new samples.

    The new (last) head column and its bias learn ``allometry_factor`` times
    faster. The new category must not be in ``memory`` yet.
    """
    new_samples = as_matrix(new_samples, "new samples")
    known = net.labels[:-1]
    for label in known:
        count = memory.samples[label].shape[0] if label in memory.samples else 0
        if count != memory.k:
            raise UnbalancedError(f"memory holds {count} samples of {label!r}, expected {memory.k}")
    if new_samples.shape[0] != memory.k:
        raise UnbalancedError(f"{new_samples.shape[0]} new samples, expected {memory.k}")

    X_known, y_known = memory.stacked(known)
    X = np.vstack([X_known, new_samples])
    y = np.concatenate([y_known, np.full(memory.k, len(known))])

    tuned, tuned_bank = net.copy(), bank.copy()
    head_scale = np.ones(tuned.n_categories)
    head_scale[-1] = allometry_factor
    fit(tuned, tuned_bank, X, y, train_config, head_scale=head_scale, epochs=epochs)
    return tuned, tuned_bank


@dataclass
class IncrementalResult:
    net: ExpandableNet
    bank: PrototypeBank
    thresholds: ThresholdSet
    log: List[dict]
    expansions: List[str]
    labels_consumed: int
    consumption: Dict[str, int]

    @property
    def labels_per_new_category(self) -> float:
        return self.labels_consumed / len(self.expansions) if self.expansions else 0.0

    def summary(self) -> dict:
        return {
            "expansions": len(self.expansions),
            "new_categories": list(self.expansions),
            "labels_consumed": self.labels_consumed,
            "labels_per_new_category": self.labels_per_new_category,
            "per_category": dict(sorted(self.consumption.items())),
            "final_n": self.net.n_categories,
        }


def recalibrate(net: ExpandableNet, bank: PrototypeBank, memory: MemoryBank,
                previous: ThresholdSet) -> ThresholdSet:
    """Thresholds for the enlarged category set, calibrated on the memory bank."""
    X, y = memory.stacked(net.labels)
    rows = collect_calibration_rows(net, bank, X, y, previous.mode, fallback_to_all=True)
    return calibrate(rows, previous.eps_mu, previous.rho, previous.mode, net.labels)


def run_incremental_phase(net: ExpandableNet, bank: PrototypeBank, thresholds: ThresholdSet,
                          stream_ids: Sequence, stream_X, oracle: LabelOracle, memory: MemoryBank,
                          config: IncrementalConfig, train_config: TrainConfig) -> IncrementalResult:
    """
    Walk the stream once. Unknown decisions go to the oracle; a new category
    is incorporated as soon as ``config.trigger`` of its samples are labeled.
    """
    if config.trigger < memory.k:
        raise UnbalancedError(f"trigger {config.trigger} is smaller than memory size {memory.k}")
    stream_X = as_matrix(stream_X, "stream")
    buffers = defaultdict(list)
    expansions, log = [], []

    for iteration, (sample_id, x) in enumerate(zip(stream_ids, stream_X)):
        row = score_rows(net, bank, x[None, :], thresholds.mode)[0]
        decision = decide(row, thresholds)
        consulted, expanded_label = False, None
        if decision.is_unknown:
            label = oracle.query(sample_id)
            consulted = True
            if label not in net.labels:
                buffers[label].append(x)
                if len(buffers[label]) >= config.trigger:
                    samples = np.vstack(buffers.pop(label))
                    net, bank = expand_category(net, bank, samples, label, config.init,
                                                config.odn_alpha, config.odn_beta, config.odn_m)
                    balanced = samples[:memory.k]
                    net, bank = finetune_balanced(net, bank, memory, balanced, config.allometry,
                                                  config.finetune_epochs,
                                                  replace(train_config, seed=train_config.seed + iteration))
                    memory.add_category(label, balanced)
                    thresholds = recalibrate(net, bank, memory, thresholds)
                    expansions.append(label)
                    expanded_label = label
        log.append({
            "iteration": iteration,
            "id": sample_id,
            "decision": decision.outcome.value if decision.is_unknown else net.labels[decision.category],
            "oracle": consulted,
            "expansion": expanded_label or "",
            "n_categories": net.n_categories,
        })
        logger.debug("stream %d: sample %r -> %s", iteration, sample_id, log[-1]["decision"])

    logger.info("incremental phase: %d expansions, %d labels consumed", len(expansions), oracle.labels_consumed)
    return IncrementalResult(net, bank, thresholds, log, expansions,
                             oracle.labels_consumed, dict(oracle.consumption))
