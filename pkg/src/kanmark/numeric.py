"""Float64 building blocks shared by every model: activations, losses and
first-order optimizers (SGD and Adam).

Everything operates on plain numpy arrays. Functions are pure except
``optimizer_step``, which updates parameters and optimizer state in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Floor applied inside log() so a saturated softmax cannot produce -inf.
LOG_FLOOR = 1e-300


class ShapeError(ValueError):
    """Operand shapes (or dimensions across objects) do not line up."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array, or raise."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite entries")
    return a


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # Branch on sign so neither exp() argument is large positive; the
    # discarded branch may overflow to inf (or inf/inf) harmlessly.
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(x >= 0.0,
                        1.0 / (1.0 + np.exp(-x)),
                        np.exp(x) / (1.0 + np.exp(x)))


def silu(x):
    """x * sigmoid(x), elementwise; float in, float out."""
    arr = np.asarray(x, dtype=np.float64)
    out = arr * sigmoid(arr)
    return float(out) if out.ndim == 0 else out


def silu_grad(x):
    """d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))."""
    arr = np.asarray(x, dtype=np.float64)
    s = sigmoid(arr)
    out = s * (1.0 + arr * (1.0 - s))
    return float(out) if out.ndim == 0 else out


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mse_loss(pred, target):
    """Mean squared error over all elements.

    Returns (loss, grad) with grad = 2 * (pred - target) / element_count.
    """
    pred = as_matrix(pred, "pred")
    target = as_matrix(target, "target")
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return loss, grad


def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy against integer class labels.

    Returns (loss, grad) with grad = (softmax - one_hot) / rows.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy_loss: {labels.shape} labels for {logits.shape[0]} rows")
    labels = labels.astype(np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ValueError("cross_entropy_loss: label out of range")
    p = softmax(logits)
    rows = np.arange(logits.shape[0])
    loss = float(np.mean(-np.log(np.maximum(p[rows, labels], LOG_FLOOR))))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= logits.shape[0]
    return loss, grad


@dataclass
class OptimizerState:
    """SGD or Adam hyperparameters plus per-parameter Adam moments.

    Moments are allocated lazily on the first step and are positional: the
    same parameter list (same order, same shapes) must be passed every call.
    """

    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list, repr=False)
    v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")


def sgd(lr: float) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=lr)


def adam(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
         epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState(kind="adam", learning_rate=lr, beta1=beta1,
                          beta2=beta2, epsilon=epsilon)


def optimizer_step(params, grads, state: OptimizerState):
    """Apply one optimizer step, updating ``params`` in place.

    SGD: p -= lr * g. Adam: bias-corrected first/second moment update.
    ``params`` and ``grads`` are parallel lists of same-shape arrays.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"param shape {p.shape} vs grad shape {np.shape(g)}")

    state.step_count += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return params, state

    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state tracks a different parameter set")
    t = state.step_count
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError("optimizer moment shape does not match parameter")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
