"""Plain fully-connected networks with ReLU hidden activations and
hand-derived gradients. Used as the pruning-study baseline and as the
watermark detector.
"""

from __future__ import annotations

import numpy as np

from .numeric import (ShapeError, as_matrix, cross_entropy_loss, mse_loss,
                      optimizer_step, relu)

HEADS = ("logits", "scalar")


class MlpModel:
    """Affine -> relu per hidden layer, final affine raw."""

    def __init__(self, weights, biases, head: str = "logits"):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {head!r}")
        if len(weights) != len(biases) or not weights:
            raise ShapeError("weights and biases must be parallel, non-empty lists")
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k}: non-finite parameters")
        for a, b in zip(weights, weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ShapeError(f"layer shapes do not chain: {a.shape} -> {b.shape}")
        self.weights = weights
        self.biases = biases
        self.head = head

    @classmethod
    def create(cls, widths, head: str = "logits", seed: int = 0) -> "MlpModel":
        """He-initialized weights, zero biases."""
        if len(widths) < 2:
            raise ValueError("widths must list at least input and output dims")
        rng = np.random.default_rng(seed)
        weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a))
                   for a, b in zip(widths, widths[1:])]
        biases = [np.zeros(b) for b in widths[1:]]
        return cls(weights, biases, head)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def forward(self, x) -> np.ndarray:
        out, _ = self.forward_with_cache(x)
        return out

    def forward_with_cache(self, x):
        h = as_matrix(x, "mlp input")
        if h.shape[1] != self.weights[0].shape[1]:
            raise ShapeError(f"mlp expects {self.weights[0].shape[1]} inputs, "
                             f"got {h.shape[1]}")
        inputs, pre = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w.T + b
            pre.append(z)
            h = z if k == len(self.weights) - 1 else relu(z)
        return h, {"inputs": inputs, "pre": pre}

    def backward(self, cache: dict, g_out: np.ndarray) -> list[np.ndarray]:
        """Gradients for [w0, b0, w1, b1, ...] given d(loss)/d(output)."""
        if cache is None or "inputs" not in cache:
            raise ValueError("missing forward cache")
        inputs, pre = cache["inputs"], cache["pre"]
        g = np.asarray(g_out, dtype=np.float64)
        if g.shape != pre[-1].shape:
            raise ShapeError(f"upstream grad shape {g.shape} does not match "
                             f"output shape {pre[-1].shape}")
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            if k != len(self.weights) - 1:
                g = g * (pre[k] > 0.0)
            grads[2 * k] = g.T @ inputs[k]
            grads[2 * k + 1] = g.sum(axis=0)
            if k > 0:
                g = g @ self.weights[k]
        return grads

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def predict(self, x) -> np.ndarray:
        return self.forward(x)

    def train_step(self, x, y, task: str, opt) -> float:
        """One gradient step on cross-entropy (classification) or MSE."""
        out, cache = self.forward_with_cache(x)
        if task == "classification":
            loss, g = cross_entropy_loss(out, y)
        elif task == "regression":
            loss, g = mse_loss(out, np.asarray(y, dtype=np.float64).reshape(out.shape))
        else:
            raise ValueError(f"unknown task {task!r}")
        grads = self.backward(cache, g)
        optimizer_step(self.parameters(), grads, opt)
        return loss

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.head)


def prune_mlp(model: MlpModel, ratio: float) -> MlpModel:
    """Global magnitude pruning: zero the floor(ratio * W) smallest-|w|
    weights across all weight matrices; biases untouched; ties broken by
    traversal (layer-major, row-major) order. Returns a new model.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"prune ratio must be in [0, 1], got {ratio}")
    pruned = model.copy()
    flat = np.concatenate([np.abs(w).ravel() for w in pruned.weights])
    n_prune = int(np.floor(ratio * flat.size + 1e-9))
    if n_prune == 0:
        return pruned
    order = np.argsort(flat, kind="stable")[:n_prune]
    keep = np.ones(flat.size, dtype=bool)
    keep[order] = False
    offset = 0
    for w in pruned.weights:
        block = keep[offset:offset + w.size].reshape(w.shape)
        w *= block
        offset += w.size
    return pruned
