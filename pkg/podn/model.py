"""
Feed-forward feature extractor with an expandable classification head.

The head has one column per category, so the logits it produces are the
N-dimensional features the prototype matrix is measured against.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from podn.errors import ExpansionError, ShapeError
from podn.numerics import (
    argmax_rows,
    as_matrix,
    column_matmul,
    glorot_uniform,
    matmul,
    relu,
    relu_grad,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple = (32,)
    n_categories: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ShapeError(f"layer sizes must be >= 1, got {self.input_dim}, {self.hidden_dims}")
        if self.n_categories < 2:
            raise ShapeError(f"at least 2 categories are required, got {self.n_categories}")


@dataclass
class ExpandableNet:
    """
    Hidden layers ``weights[k]`` (fan_in x fan_out) with biases, then a head
    ``head_w`` (hidden_last x N) whose column n is the predictor of category n.
    """
    config: ModelConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    head_w: np.ndarray
    head_b: np.ndarray
    labels: List[str] = field(default_factory=list)

    @property
    def n_categories(self) -> int:
        return self.head_w.shape[1]

    @property
    def hidden_last(self) -> int:
        return self.head_w.shape[0]

    def parameters(self) -> List[np.ndarray]:
        """All tensors in a fixed order; the head weight and bias come last."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        params.extend([self.head_w, self.head_b])
        return params

    def copy(self) -> "ExpandableNet":
        return ExpandableNet(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            labels=list(self.labels),
        )


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]
    logits: np.ndarray


def init_net(config: ModelConfig, labels: Optional[Sequence[str]] = None) -> ExpandableNet:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    dims = [config.input_dim, *config.hidden_dims]
    weights = [glorot_uniform(dims[k], dims[k + 1], rng) for k in range(len(dims) - 1)]
    biases = [np.zeros(dims[k + 1]) for k in range(len(dims) - 1)]
    head_w = glorot_uniform(dims[-1], config.n_categories, rng)
    head_b = np.zeros(config.n_categories)
    if labels is None:
        labels = [str(i) for i in range(config.n_categories)]
    if len(labels) != config.n_categories:
        raise ShapeError(f"{len(labels)} labels for {config.n_categories} categories")
    return ExpandableNet(config, weights, biases, head_w, head_b, list(labels))


def forward_cached(net: ExpandableNet, batch) -> ForwardCache:
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != net.config.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns, net expects {net.config.input_dim}"
        )
    pre, acts = [], []
    h = batch
    for w, b in zip(net.weights, net.biases):
        z = matmul(h, w) + b
        h = relu(z)
        pre.append(z)
        acts.append(h)
    logits = column_matmul(h, net.head_w) + net.head_b
    return ForwardCache(batch, pre, acts, logits)


def forward(net: ExpandableNet, batch) -> np.ndarray:
    """S x N logits (the feature batch)."""
    return forward_cached(net, batch).logits


def backward(net: ExpandableNet, cache: ForwardCache, grad_logits) -> tuple:
    """
    Backpropagate ``grad_logits`` (S x N) through the net.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` in the order of
    ``net.parameters()``. Several loss paths reaching the logits are handled by
    summing their gradients before the call.
    """
    g = as_matrix(grad_logits, "upstream gradient")
    if g.shape != cache.logits.shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match logits {cache.logits.shape}")
    last = cache.activations[-1] if cache.activations else cache.inputs
    head_w_grad = matmul(last.T, g)
    head_b_grad = g.sum(axis=0)
    grad_h = matmul(g, net.head_w.T)

    layer_grads = []
    for k in reversed(range(len(net.weights))):
        dz = grad_h * relu_grad(cache.pre_activations[k])
        below = cache.activations[k - 1] if k > 0 else cache.inputs
        layer_grads.append((matmul(below.T, dz), dz.sum(axis=0)))
        grad_h = matmul(dz, net.weights[k].T)

    grads = []
    for w_grad, b_grad in reversed(layer_grads):
        grads.extend([w_grad, b_grad])
    grads.extend([head_w_grad, head_b_grad])
    return grads, grad_h


def expand_output_dim(net: ExpandableNet, init_column, init_bias: float,
                      label: Optional[str] = None) -> ExpandableNet:
    """Return a copy of ``net`` with one more head column; existing columns are untouched."""
    column = np.asarray(init_column, dtype=np.float64).reshape(-1)
    if column.shape[0] != net.hidden_last:
        raise ShapeError(f"new column has length {column.shape[0]}, head expects {net.hidden_last}")
    if label is None:
        label = str(net.n_categories)
    if label in net.labels:
        raise ExpansionError(f"category {label!r} is already in the head")
    grown = net.copy()
    grown.head_w = np.hstack([net.head_w, column[:, None]])
    grown.head_b = np.append(net.head_b, float(init_bias))
    grown.labels.append(label)
    logger.debug("head expanded to %d categories with %r", grown.n_categories, label)
    return grown


def predict(net: ExpandableNet, batch) -> np.ndarray:
    """Argmax of the logits per row, ties to the lowest index."""
    return argmax_rows(forward(net, batch))


def save_checkpoint(net: ExpandableNet, path) -> Path:
    """
    Write ``net`` as a JSON document::

        {"format": 1,
         "config": {"input_dim", "hidden_dims", "n_categories", "seed"},
         "labels": [...head-column order...],
         "weights": [[...rows...], ...], "biases": [[...], ...],
         "head_w": [[...rows...]], "head_b": [...]}

    ``n_categories`` in the config is the initial count; the current count is
    ``len(labels)``.
    """
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "input_dim": net.config.input_dim,
            "hidden_dims": list(net.config.hidden_dims),
            "n_categories": net.config.n_categories,
            "seed": net.config.seed,
        },
        "labels": list(net.labels),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "head_w": net.head_w.tolist(),
        "head_b": net.head_b.tolist(),
    }
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def load_checkpoint(path) -> ExpandableNet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    cfg = doc["config"]
    config = ModelConfig(cfg["input_dim"], tuple(cfg["hidden_dims"]), cfg["n_categories"], cfg["seed"])
    weights = [np.array(w, dtype=np.float64).reshape(a, b) for w, (a, b) in
               zip(doc["weights"], _layer_shapes(config))]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    head_w = np.array(doc["head_w"], dtype=np.float64).reshape(_head_rows(config), len(doc["labels"]))
    head_b = np.array(doc["head_b"], dtype=np.float64)
    return ExpandableNet(config, weights, biases, head_w, head_b, list(doc["labels"]))


def _layer_shapes(config: ModelConfig):
    dims = [config.input_dim, *config.hidden_dims]
    return [(dims[k], dims[k + 1]) for k in range(len(dims) - 1)]


def _head_rows(config: ModelConfig) -> int:
    return config.hidden_dims[-1] if config.hidden_dims else config.input_dim
