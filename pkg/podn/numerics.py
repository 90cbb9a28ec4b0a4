"""
Dense linear algebra, activations, losses and the momentum optimizer.

Every array handled here is a float64 numpy array. Matrices are 2-D and
row-major; vectors are 1-D.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Union

import numpy as np

from podn.errors import LabelError, ShapeError

Scale = Union[float, np.ndarray]


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Return ``values`` as a 2-D float64 array, raising ShapeError otherwise."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product ``a @ b`` in double precision."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def column_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Matrix product computed one output column at a time.

    Column j of the result depends only on ``a`` and ``b[:, j]``, so appending
    columns to ``b`` leaves the existing output columns bit-identical.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
    for j in range(b.shape[1]):
        out[:, j] = a @ np.ascontiguousarray(b[:, j])
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, 0.0)


def argmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(as_matrix(m), axis=1)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction."""
    m = as_matrix(m)
    if m.size == 0:
        raise ShapeError("softmax of an empty matrix")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def check_labels(labels, n_classes: int, n_rows: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n_rows:
        raise ShapeError(f"{labels.shape[0]} labels for {n_rows} rows")
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise LabelError(
            f"label {int(labels[bad][0])} out of range for {n_classes} categories"
        )
    return labels


def cross_entropy_mean(probs: np.ndarray, labels) -> tuple:
    """
    Mean negative log-likelihood of ``labels`` under the row distributions ``probs``.

    Returns ``(loss, grad)`` where ``grad`` is the gradient with respect to the
    pre-softmax logits, ``(probs - onehot) / S``.
    """
    probs = as_matrix(probs, "probabilities")
    s, n = probs.shape
    labels = check_labels(labels, n, s)
    picked = probs[np.arange(s), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))
    grad = probs.copy()
    grad[np.arange(s), labels] -= 1.0
    grad /= s
    return loss, grad


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class OptimizerState:
    """
    Classic momentum state: one velocity buffer and one lr scale per tensor.

    A scale may be a float or an array broadcastable to its tensor, which is
    how a single head column gets its own learning rate.
    """
    velocity: List[np.ndarray]
    learning_rate: float
    momentum: float = 0.9
    lr_scale: List[Scale] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.lr_scale:
            self.lr_scale = [1.0] * len(self.velocity)
        if len(self.lr_scale) != len(self.velocity):
            raise ShapeError(
                f"{len(self.lr_scale)} lr scales for {len(self.velocity)} tensors"
            )

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float,
                   momentum: float = 0.9, lr_scale=None) -> "OptimizerState":
        velocity = [np.zeros_like(p, dtype=np.float64) for p in params]
        return cls(velocity, learning_rate, momentum, list(lr_scale or []))


def sgd_momentum_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                      state: OptimizerState):
    """
    One in-place update: ``v <- momentum*v - lr*scale*g`` then ``p <- p + v``.

    Returns ``(params, state)`` for convenience; both are mutated.
    """
    if not (len(params) == len(grads) == len(state.velocity)):
        raise ShapeError(
            f"{len(params)} params, {len(grads)} grads, {len(state.velocity)} velocities"
        )
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(
                f"tensor {i}: param {p.shape}, grad {g.shape}, velocity {v.shape}"
            )
        v *= state.momentum
        v -= state.learning_rate * state.lr_scale[i] * g
        p += v
    return params, state


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple:
    """
    Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    Returns ``(clipped, total_norm)``; the inputs are not modified. A
    non-finite norm leaves the gradients as they are.
    """
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))
    if not np.isfinite(total) or total <= max_norm:
        return [np.asarray(g, dtype=np.float64) for g in grads], total
    factor = max_norm / (total + 1e-6)
    return [np.asarray(g, dtype=np.float64) * factor for g in grads], total


def finite_diff_grad(loss_fn: Callable[[], float], params: Sequence[np.ndarray],
                     h: float = 1e-5) -> List[np.ndarray]:
    """
    Central-difference gradient of ``loss_fn`` with respect to every entry of ``params``.

    ``loss_fn`` takes no arguments and reads ``params``, which are perturbed in
    place and restored afterwards.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(a, b) -> float:
    """Norm-based relative error, ``|a-b| / max(|a|+|b|, 1e-12)`` over flattened arrays."""
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, (list, tuple)) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, (list, tuple)) else np.ravel(b)
    denom = max(float(np.linalg.norm(a) + np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def all_finite(arrays: Sequence[np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays)
