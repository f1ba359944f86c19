"""KAN layers and models: per-edge learnable activations built from a SiLU
basis path plus a B-spline path, with exact hand-derived gradients,
first-layer activation capture, and activation-importance pruning.
"""

from __future__ import annotations

import copy

import numpy as np

from .numeric import (ShapeError, as_matrix, cross_entropy_loss, mse_loss,
                      optimizer_step, sigmoid, silu_grad)
from .spline import SplineGrid, basis_derivative_matrix, basis_matrix, basis_values, build_grid


class KanLayer:
    """One layer of per-edge activation functions.

    Edge (j, i) computes
        phi(x) = w_b[j,i] * silu(x) + w_s[j,i] * sum_m coeffs[j,i,m] * B_m(x)
    and node j outputs the sum of its incoming edges. ``prune_mask`` zeroes
    edges individually: a masked edge contributes exactly 0 to the forward
    pass and receives zero gradient.
    """

    def __init__(self, grid: SplineGrid, coeffs, w_b, w_s, prune_mask=None):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.ndim != 3:
            raise ShapeError(f"coeffs must be 3-D, got shape {coeffs.shape}")
        out_dim, in_dim, m = coeffs.shape
        if m != grid.basis_count:
            raise ShapeError(f"coeffs have {m} basis columns, grid has {grid.basis_count}")
        w_b = np.asarray(w_b, dtype=np.float64)
        w_s = np.asarray(w_s, dtype=np.float64)
        if w_b.shape != (out_dim, in_dim) or w_s.shape != (out_dim, in_dim):
            raise ShapeError("w_b / w_s must be (out_dim, in_dim)")
        if prune_mask is None:
            prune_mask = np.ones((out_dim, in_dim))
        prune_mask = np.asarray(prune_mask, dtype=np.float64)
        if prune_mask.shape != (out_dim, in_dim):
            raise ShapeError("prune_mask must be (out_dim, in_dim)")
        if not np.all((prune_mask == 0.0) | (prune_mask == 1.0)):
            raise ValueError("prune_mask entries must be 0 or 1")
        for name, a in (("coeffs", coeffs), ("w_b", w_b), ("w_s", w_s)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
        self.grid = grid
        self.coeffs = coeffs
        self.w_b = w_b
        self.w_s = w_s
        self.prune_mask = prune_mask
        self.in_dim = in_dim
        self.out_dim = out_dim

    @classmethod
    def create(cls, in_dim: int, out_dim: int, grid: SplineGrid,
               rng: np.random.Generator) -> "KanLayer":
        """Fresh layer: spline coefficients ~ N(0, 0.1^2), unit mixing
        weights, so every edge starts close to a plain SiLU."""
        coeffs = rng.normal(0.0, 0.1, size=(out_dim, in_dim, grid.basis_count))
        w_b = np.ones((out_dim, in_dim))
        w_s = np.ones((out_dim, in_dim))
        return cls(grid, coeffs, w_b, w_s)

    def parameters(self) -> list[np.ndarray]:
        return [self.coeffs, self.w_b, self.w_s]

    def edge_activation(self, j: int, i: int, x: float) -> float:
        """Single-edge activation value at a scalar input."""
        if not (0 <= j < self.out_dim and 0 <= i < self.in_dim):
            raise IndexError(f"edge ({j}, {i}) out of range for "
                             f"{self.out_dim}x{self.in_dim} layer")
        bv = basis_values(self.grid, x)
        spline_part = float(self.coeffs[j, i] @ bv)
        base_part = float(x) * float(sigmoid(np.float64(x)))
        return float(self.prune_mask[j, i]
                     * (self.w_b[j, i] * base_part + self.w_s[j, i] * spline_part))

    def forward(self, x) -> tuple[np.ndarray, dict]:
        """Batch forward; returns (outputs, cache-for-backward)."""
        x = as_matrix(x, "layer input")
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"layer expects {self.in_dim} inputs, got {x.shape[1]}")
        batch = x.shape[0]
        s = x * sigmoid(x)
        bv = basis_matrix(self.grid, x.ravel()).reshape(batch, self.in_dim,
                                                        self.grid.basis_count)
        spl = np.einsum("bim,jim->bji", bv, self.coeffs)
        mb = self.prune_mask * self.w_b
        ms = self.prune_mask * self.w_s
        y = s @ mb.T + np.einsum("bji,ji->bj", spl, ms)
        cache = {"x": x, "s": s, "bv": bv, "spl": spl}
        return y, cache

    def backward(self, cache: dict, gy: np.ndarray, need_input_grad: bool = True):
        """Gradients of a scalar loss given upstream d(loss)/d(outputs).

        Returns ([d_coeffs, d_w_b, d_w_s], d_inputs). ``d_inputs`` is None
        when ``need_input_grad`` is False (first layer of a model).
        """
        if cache is None or "x" not in cache:
            raise ValueError("missing forward cache")
        x, s, bv, spl = cache["x"], cache["s"], cache["bv"], cache["spl"]
        gy = np.asarray(gy, dtype=np.float64)
        if gy.shape != (x.shape[0], self.out_dim):
            raise ShapeError(f"upstream grad shape {gy.shape} does not match "
                             f"cached batch ({x.shape[0]}, {self.out_dim})")
        mask = self.prune_mask
        g_wb = mask * (gy.T @ s)
        g_ws = mask * np.einsum("bj,bji->ji", gy, spl)
        g_coeffs = (mask * self.w_s)[:, :, None] * np.einsum("bj,bim->jim", gy, bv)
        gx = None
        if need_input_grad:
            dbv = basis_derivative_matrix(self.grid, x.ravel()).reshape(bv.shape)
            dspl = np.einsum("bim,jim->bji", dbv, self.coeffs)
            gx = silu_grad(x) * (gy @ (mask * self.w_b)) \
                + np.einsum("bj,bji,ji->bi", gy, dspl, mask * self.w_s)
        return [g_coeffs, g_wb, g_ws], gx

    def per_edge_activations(self, x) -> np.ndarray:
        """All edge outputs for a batch; shape (batch, out_dim, in_dim)."""
        x = as_matrix(x, "layer input")
        if x.shape[1] != self.in_dim:
            raise ShapeError(f"layer expects {self.in_dim} inputs, got {x.shape[1]}")
        s = x * sigmoid(x)
        bv = basis_matrix(self.grid, x.ravel()).reshape(x.shape[0], self.in_dim,
                                                        self.grid.basis_count)
        spl = np.einsum("bim,jim->bji", bv, self.coeffs)
        return self.prune_mask * (self.w_b * s[:, None, :] + self.w_s * spl)

    def copy(self) -> "KanLayer":
        return KanLayer(self.grid, self.coeffs.copy(), self.w_b.copy(),
                        self.w_s.copy(), self.prune_mask.copy())


class KanModel:
    """Stack of KanLayers; adjacent layer widths must chain."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers

    @classmethod
    def create(cls, widths, grid: SplineGrid | None = None, seed: int = 0) -> "KanModel":
        if len(widths) < 2:
            raise ValueError("widths must list at least input and output dims")
        grid = grid if grid is not None else build_grid()
        rng = np.random.default_rng(seed)
        return cls([KanLayer.create(a, b, grid, rng)
                    for a, b in zip(widths, widths[1:])])

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def forward(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Full forward pass; returns (output, first-layer outputs)."""
        out, layer0, _ = self.forward_with_cache(x)
        return out, layer0

    def forward_with_cache(self, x):
        """Forward pass keeping per-layer caches for :meth:`backward`."""
        h = as_matrix(x, "model input")
        if h.shape[1] != self.layers[0].in_dim:
            raise ShapeError(f"model expects {self.layers[0].in_dim} inputs, "
                             f"got {h.shape[1]}")
        caches = []
        layer0 = None
        for k, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            caches.append(cache)
            if k == 0:
                layer0 = h.copy()
        return h, layer0, caches

    def backward(self, caches, g_out: np.ndarray) -> list[np.ndarray]:
        """Exact gradients for every layer's [coeffs, w_b, w_s], layer-major."""
        if caches is None or len(caches) != len(self.layers):
            raise ValueError("caches do not match model layers")
        per_layer = [None] * len(self.layers)
        g = g_out
        for k in range(len(self.layers) - 1, -1, -1):
            per_layer[k], g = self.layers[k].backward(caches[k], g,
                                                      need_input_grad=(k > 0))
        return [t for layer_grads in per_layer for t in layer_grads]

    def parameters(self) -> list[np.ndarray]:
        return [t for layer in self.layers for t in layer.parameters()]

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def train_step(self, x, y, task: str, opt) -> float:
        """One gradient step on the main-task loss; returns the loss."""
        out, _, caches = self.forward_with_cache(x)
        if task == "classification":
            loss, g = cross_entropy_loss(out, y)
        elif task == "regression":
            loss, g = mse_loss(out, np.asarray(y, dtype=np.float64).reshape(out.shape))
        else:
            raise ValueError(f"unknown task {task!r}")
        grads = self.backward(caches, g)
        optimizer_step(self.parameters(), grads, opt)
        return loss

    def copy(self) -> "KanModel":
        return KanModel([layer.copy() for layer in self.layers])


def edge_importance(model: KanModel, layer_index: int, calibration) -> np.ndarray:
    """Mean |edge activation| over a calibration batch of model inputs.

    The batch is propagated through preceding layers so importances reflect
    what the layer actually sees.
    """
    calibration = as_matrix(calibration, "calibration")
    if calibration.shape[0] == 0:
        raise ValueError("calibration batch is empty")
    if not 0 <= layer_index < len(model.layers):
        raise IndexError(f"layer index {layer_index} out of range")
    h = calibration
    for layer in model.layers[:layer_index]:
        h, _ = layer.forward(h)
    acts = model.layers[layer_index].per_edge_activations(h)
    return np.abs(acts).mean(axis=0)


def prune_kan(model: KanModel, ratio: float, calibration) -> KanModel:
    """Mask the globally least-important floor(ratio * edge_count) edges.

    Edges are ranked ascending by mean |activation| across all layers, ties
    broken by (layer, output, input) order. Pruned edges are zeroed (coeffs,
    w_b, w_s) in addition to masked so a later retrain restarts them from 0.
    Returns a new model; the input is untouched.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"prune ratio must be in [0, 1], got {ratio}")
    entries = []
    for k, layer in enumerate(model.layers):
        imp = edge_importance(model, k, calibration)
        for j in range(layer.out_dim):
            for i in range(layer.in_dim):
                entries.append((imp[j, i], k, j, i))
    entries.sort()
    # Tiny epsilon so ratios like 0.3 * 10 hit the mathematical floor.
    n_prune = int(np.floor(ratio * len(entries) + 1e-9))
    pruned = model.copy()
    for _, k, j, i in entries[:n_prune]:
        layer = pruned.layers[k]
        layer.prune_mask[j, i] = 0.0
        layer.coeffs[j, i, :] = 0.0
        layer.w_b[j, i] = 0.0
        layer.w_s[j, i] = 0.0
    return pruned


def lift_prune_masks(model: KanModel) -> KanModel:
    """Re-enable every masked edge in place (zeroed parameters stay zero)."""
    for layer in model.layers:
        layer.prune_mask[:] = 1.0
    return model
