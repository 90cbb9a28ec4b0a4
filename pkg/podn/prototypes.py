"""
Prototype and prototype-radius training for the initial phase.

The total objective is::

    total = loss1 + w1 * (omega * loss21 + loss22) + w2 * loss3

with loss1 the softmax cross entropy on the logits, loss21 the L2 pull between
features and their category prototype, loss22 the cross entropy over the
distance matrix and loss3 the L2 fit of each radius to the top distance score
of correctly classified samples. All gradients are derived by hand.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from podn.errors import LabelError, ShapeError, TrainingDivergedError
from podn.model import ExpandableNet, ModelConfig, backward, forward_cached, init_net
from podn.numerics import (
    OptimizerState,
    all_finite,
    argmax_rows,
    as_matrix,
    check_labels,
    clip_grad_norm,
    cross_entropy_mean,
    sgd_momentum_step,
    softmax_rows,
)

logger = logging.getLogger(__name__)

EPSILON_DIST = 0.001


@dataclass
class PrototypeBank:
    """N x N prototype matrix (row j is category j) plus one radius per category."""
    P: np.ndarray
    r: np.ndarray
    labels: List[str] = field(default_factory=list)
    epsilon_dist: float = EPSILON_DIST

    def __post_init__(self):
        self.P = as_matrix(self.P, "prototype matrix")
        self.r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        if self.P.shape[0] != self.r.shape[0]:
            raise ShapeError(f"{self.P.shape[0]} prototypes but {self.r.shape[0]} radiuses")
        if not self.labels:
            self.labels = [str(i) for i in range(self.P.shape[0])]

    @property
    def n_categories(self) -> int:
        return self.P.shape[0]

    @property
    def max_radius(self) -> float:
        return 1.0 / self.epsilon_dist

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.P.copy(), self.r.copy(), list(self.labels), self.epsilon_dist)


def init_bank(labels: Sequence[str], epsilon_dist: float = EPSILON_DIST) -> PrototypeBank:
    """Zero prototypes and zero radiuses."""
    n = len(labels)
    return PrototypeBank(np.zeros((n, n)), np.zeros(n), list(labels), epsilon_dist)


@dataclass(frozen=True)
class LossWeights:
    omega: float = 1.0
    w1: float = 0.1
    w2: float = 0.01

    def __post_init__(self):
        if min(self.omega, self.w1, self.w2) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


@dataclass
class LossBreakdown:
    loss1: float
    loss21: float
    loss22: float
    loss2: float
    loss3: float
    total: float
    T: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DistanceMatrix:
    """``values[i, j] = 1 / (squared[i, j] + eps)`` with ``residuals[i, j] = f_i - p_j``."""
    values: np.ndarray
    squared: np.ndarray
    residuals: np.ndarray


@dataclass
class LossGradients:
    net: List[np.ndarray]
    prototypes: np.ndarray
    radiuses: np.ndarray

    def as_list(self) -> List[np.ndarray]:
        return [*self.net, self.prototypes, self.radiuses]


def distance_matrix(features, bank: PrototypeBank) -> DistanceMatrix:
    features = as_matrix(features, "features")
    if features.shape[1] != bank.P.shape[1]:
        raise ShapeError(f"features have {features.shape[1]} columns, prototypes {bank.P.shape[1]}")
    residuals = features[:, None, :] - bank.P[None, :, :]
    squared = np.einsum("ijk,ijk->ij", residuals, residuals)
    return DistanceMatrix(1.0 / (squared + bank.epsilon_dist), squared, residuals)


def _distance_chain(grad_D: np.ndarray, dm: DistanceMatrix) -> tuple:
    """Chain a gradient on D into gradients on the features and the prototypes."""
    # dD/dsq = -D^2, dsq/df_i = 2 (f_i - p_j), dsq/dp_j = -2 (f_i - p_j)
    grad_sq = -grad_D * dm.values ** 2
    weighted = 2.0 * grad_sq[:, :, None] * dm.residuals
    return weighted.sum(axis=1), -weighted.sum(axis=0)


def prototype_l2_loss(features, labels, P) -> tuple:
    """
    ``(1/2S) * sum ||f_i - p_{y_i}||^2`` and its gradients.

    Returns ``(loss, grad_features, grad_prototypes)``.
    """
    features = as_matrix(features, "features")
    P = as_matrix(P, "prototype matrix")
    s = features.shape[0]
    labels = check_labels(labels, P.shape[0], s)
    diff = features - P[labels]
    loss = float(np.sum(diff ** 2) / (2.0 * s))
    grad_f = diff / s
    grad_P = np.zeros_like(P)
    np.add.at(grad_P, labels, -grad_f)
    return loss, grad_f, grad_P


def distance_classification_loss(dm: DistanceMatrix, labels) -> tuple:
    """
    Cross entropy over the softmaxed rows of D.

    Returns ``(loss, grad_features, grad_prototypes)``.
    """
    probs = softmax_rows(dm.values)
    loss, grad_D = cross_entropy_mean(probs, labels)
    grad_f, grad_P = _distance_chain(grad_D, dm)
    return loss, grad_f, grad_P


def radius_loss(dm: DistanceMatrix, labels, bank: PrototypeBank) -> tuple:
    """
    ``(1/2T) * sum (r_t - d_t)^2`` over samples whose distance-argmax equals the label.

    ``d_t`` is the top D score of the row and ``r_t`` the radius of the label.
    Returns ``(loss, T, grad_radiuses, grad_D)``; with ``T == 0`` everything is zero.
    """
    D = dm.values
    s, n = D.shape
    labels = check_labels(labels, n, s)
    correct = np.flatnonzero(argmax_rows(D) == labels)
    grad_r = np.zeros(n)
    grad_D = np.zeros_like(D)
    T = int(correct.size)
    if T == 0:
        return 0.0, 0, grad_r, grad_D
    cats = labels[correct]
    d = D[correct, cats]
    resid = bank.r[cats] - d
    loss = float(np.sum(resid ** 2) / (2.0 * T))
    np.add.at(grad_r, cats, resid / T)
    grad_D[correct, cats] = -resid / T
    return loss, T, grad_r, grad_D


def total_loss(net: ExpandableNet, bank: PrototypeBank, batch, labels,
               weights: LossWeights, radius_backprop: bool = False) -> tuple:
    """Compose every loss term; returns ``(LossBreakdown, LossGradients)``."""
    cache = forward_cached(net, batch)
    f = cache.logits
    if f.shape[1] != bank.n_categories:
        raise ShapeError(f"net has {f.shape[1]} outputs, bank {bank.n_categories} categories")
    labels = check_labels(labels, bank.n_categories, f.shape[0])

    loss1, grad_f = cross_entropy_mean(softmax_rows(f), labels)
    dm = distance_matrix(f, bank)
    loss21, gf21, gP21 = prototype_l2_loss(f, labels, bank.P)
    loss22, gf22, gP22 = distance_classification_loss(dm, labels)
    if weights.w2 > 0:
        loss3, T, grad_r, gD3 = radius_loss(dm, labels, bank)
    else:
        # radius module switched off
        loss3, T, grad_r, gD3 = 0.0, 0, np.zeros(bank.n_categories), None

    loss2 = weights.omega * loss21 + loss22
    total = loss1 + weights.w1 * loss2 + weights.w2 * loss3

    grad_f = grad_f + weights.w1 * (weights.omega * gf21 + gf22)
    grad_P = weights.w1 * (weights.omega * gP21 + gP22)
    if radius_backprop and T > 0:
        gf3, gP3 = _distance_chain(gD3, dm)
        grad_f = grad_f + weights.w2 * gf3
        grad_P = grad_P + weights.w2 * gP3
    net_grads, _ = backward(net, cache, grad_f)

    breakdown = LossBreakdown(loss1, loss21, loss22, loss2, loss3, total, T)
    return breakdown, LossGradients(net_grads, grad_P, weights.w2 * grad_r)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    prototype_lr_scale: float = 10.0
    radius_lr_scale: float = 100.0
    weights: LossWeights = field(default_factory=LossWeights)
    radius_backprop: bool = False
    max_grad_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.max_grad_norm > 0:
            raise ValueError(f"max_grad_norm must be positive, got {self.max_grad_norm}")


def evaluate_breakdown(net: ExpandableNet, bank: PrototypeBank, X, y,
                       weights: LossWeights) -> LossBreakdown:
    breakdown, _ = total_loss(net, bank, X, y, weights)
    return breakdown


def bounded_step(grads: LossGradients, max_norm: float) -> List[np.ndarray]:
    """
    Gradients in ``fit`` parameter order, with the net tensors and the
    prototypes each clipped to ``max_norm``. Radius gradients pass unchanged.
    """
    net_grads, _ = clip_grad_norm(grads.net, max_norm)
    (prototypes,), _ = clip_grad_norm([grads.prototypes], max_norm)
    return [*net_grads, prototypes, grads.radiuses]


def fit(net: ExpandableNet, bank: PrototypeBank, X, y, config: TrainConfig,
        head_scale=1.0, epochs: Optional[int] = None) -> List[dict]:
    """
    Mini-batch SGD with momentum on ``total_loss``; updates ``net`` and ``bank`` in place.

    Each update uses ``bounded_step``: a feature landing next to a prototype
    makes the D gradient grow like D^2, and the clip keeps one such batch
    from throwing the weights out of range.

    ``head_scale`` is the lr scale of the head weight and bias (a float or an
    array over head columns). Returns one log entry per epoch.
    """
    X = as_matrix(X, "training samples")
    y = np.asarray(y, dtype=np.int64)
    epochs = config.epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed)

    n_hidden = len(net.parameters()) - 2
    head_scale = np.asarray(head_scale, dtype=np.float64)
    scales = [1.0] * n_hidden + [
        head_scale.reshape(1, -1) if head_scale.ndim else float(head_scale),
        head_scale.reshape(-1) if head_scale.ndim else float(head_scale),
        config.prototype_lr_scale,
        config.radius_lr_scale,
    ]
    params = [*net.parameters(), bank.P, bank.r]
    state = OptimizerState.for_params(params, config.learning_rate, config.momentum, scales)

    log = []
    for epoch in range(epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = total_loss(net, bank, X[idx], y[idx], config.weights, config.radius_backprop)
            sgd_momentum_step(params, bounded_step(grads, config.max_grad_norm), state)
            np.clip(bank.r, 0.0, bank.max_radius, out=bank.r)
            if not all_finite(params):
                raise TrainingDivergedError(f"non-finite parameters after epoch {epoch} update")
        breakdown = evaluate_breakdown(net, bank, X, y, config.weights)
        accuracy = float(np.mean(argmax_rows(forward_cached(net, X).logits) == y))
        entry = {"epoch": epoch, **breakdown.to_dict(), "train_accuracy": accuracy}
        logger.debug("epoch %d: %s", epoch, entry)
        log.append(entry)
    return log


def encode_labels(labels: Sequence[str], registry: Sequence[str]) -> np.ndarray:
    index = {label: i for i, label in enumerate(registry)}
    try:
        return np.array([index[label] for label in labels], dtype=np.int64)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} is not among {list(registry)}") from None


def train_initial(dataset, model_config: ModelConfig, train_config: TrainConfig,
                  registry: Optional[Sequence[str]] = None, allow_empty: bool = False) -> tuple:
    """
    Joint training of the net, the prototypes and the radiuses on known categories.

    ``dataset`` exposes ``features`` (S x d) and ``labels`` (S strings). The head
    follows ``registry`` (default: the sorted labels of ``dataset``). A registry
    category without samples raises ``LabelError`` unless ``allow_empty`` is set,
    in which case it still gets a column.
    Returns ``(net, bank, log)``.
    """
    X = as_matrix(dataset.features, "training samples")
    if X.shape[0] == 0:
        raise ShapeError("cannot train on an empty dataset")
    if registry is None:
        registry = sorted(set(str(label) for label in dataset.labels))
    registry = list(registry)
    model_config = replace(model_config, n_categories=len(registry), input_dim=X.shape[1])
    y = encode_labels([str(label) for label in dataset.labels], registry)
    empty = [label for i, label in enumerate(registry) if not np.any(y == i)]
    if empty and not allow_empty:
        raise LabelError(f"categories without training samples: {empty}")

    net = init_net(model_config, registry)
    bank = init_bank(registry)
    log = fit(net, bank, X, y, train_config)
    logger.info(
        "initial training done: %d categories, total loss %.4f, train accuracy %.3f",
        len(registry), log[-1]["total"] if log else float("nan"),
        log[-1]["train_accuracy"] if log else float("nan"),
    )
    return net, bank, log


def save_bank(bank: PrototypeBank, path) -> Path:
    path = Path(path)
    doc = {
        "labels": list(bank.labels),
        "epsilon_dist": bank.epsilon_dist,
        "prototypes": bank.P.tolist(),
        "radiuses": bank.r.tolist(),
    }
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def load_bank(path) -> PrototypeBank:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    n = len(doc["labels"])
    P = np.array(doc["prototypes"], dtype=np.float64).reshape(n, n)
    return PrototypeBank(P, np.array(doc["radiuses"], dtype=np.float64), doc["labels"], doc["epsilon_dist"])
