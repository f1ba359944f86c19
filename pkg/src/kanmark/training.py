"""Shared training loop and evaluation helpers for KAN and MLP models."""

from __future__ import annotations

import numpy as np

from .data import epoch_batches
from .numeric import as_matrix, cross_entropy_loss, mse_loss

TASKS = ("classification", "regression")


def fit(model, inputs, targets, task: str, epochs: int, opt,
        batch_size: int = 64, seed: int = 0) -> list[float]:
    """Train in place for the given epochs; returns mean loss per epoch.

    Batch order is a seeded shuffle, so the whole run is deterministic in
    (model state, seed).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    inputs = as_matrix(inputs, "inputs")
    targets = np.asarray(targets)
    if inputs.shape[0] == 0:
        raise ValueError("empty training data")
    if targets.shape[0] != inputs.shape[0]:
        raise ValueError("one target per input row required")
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        losses = []
        for idx in epoch_batches(inputs.shape[0], batch_size, rng):
            losses.append(model.train_step(inputs[idx], targets[idx], task, opt))
        history.append(float(np.mean(losses)))
    return history


def accuracy(logits: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax matches the label."""
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def rmse(pred: np.ndarray, targets) -> float:
    diff = pred.ravel() - np.asarray(targets, dtype=np.float64).ravel()
    return float(np.sqrt(np.mean(diff * diff)))


def evaluate(model, inputs, targets, task: str) -> dict:
    """Loss plus accuracy (classification) or RMSE (regression)."""
    out = model.predict(inputs)
    if task == "classification":
        loss, _ = cross_entropy_loss(out, targets)
        return {"loss": loss, "accuracy": accuracy(out, targets)}
    if task == "regression":
        target_mat = np.asarray(targets, dtype=np.float64).reshape(out.shape)
        loss, _ = mse_loss(out, target_mat)
        return {"loss": loss, "rmse": rmse(out, targets)}
    raise ValueError(f"unknown task {task!r}")
