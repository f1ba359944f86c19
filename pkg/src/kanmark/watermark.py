"""Activation watermarking pipeline: keyed perturbation-signal generation,
two-phase embedding, detector dataset construction with shuffle
augmentation, detector training, and ownership verification.

The watermark lives in the first layer's activation outputs: embedding
alternates a main-task step over all parameters with a signal step that
pulls the layer outputs O toward perturb(O) = idct(dct(O) + P), updating
only that layer's parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import epoch_batches
from .kan import KanModel
from .mlp import MlpModel
from .numeric import ShapeError, adam, as_matrix, mse_loss, optimizer_step
from .training import fit
from .transform import dct, perturb_rows


@dataclass(frozen=True)
class PerturbationSignal:
    """Keyed sparse frequency-domain watermark vector.

    ``values[k] = amplitude * u_k`` with u_k in {-1, +1} drawn from the
    keyed generator for k inside [band_lo, band_hi], zero elsewhere.
    """

    key: int
    length: int
    band: tuple[int, int]
    amplitude: float
    values: np.ndarray


def gen_signal(key: int, length: int, band, amplitude: float) -> PerturbationSignal:
    """Deterministic signed-constant perturbation on a frequency band.

    amplitude = 0 yields the all-zero signal (used to disable phase 2).
    """
    k_lo, k_hi = int(band[0]), int(band[1])
    if not 0 <= k_lo <= k_hi < length:
        raise ValueError(f"band [{k_lo}, {k_hi}] invalid for length {length}")
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    rng = np.random.default_rng(key)
    signs = rng.integers(0, 2, size=k_hi - k_lo + 1) * 2.0 - 1.0
    values = np.zeros(length)
    values[k_lo:k_hi + 1] = amplitude * signs
    values.setflags(write=False)
    return PerturbationSignal(int(key), int(length), (k_lo, k_hi),
                              float(amplitude), values)


def layer_outputs(model: KanModel, x, layer_index: int = 0) -> np.ndarray:
    """Outputs of the indexed layer for a batch of model inputs."""
    if not 0 <= layer_index < len(model.layers):
        raise IndexError(f"layer index {layer_index} out of range")
    h = as_matrix(x, "inputs")
    for layer in model.layers[:layer_index + 1]:
        h, _ = layer.forward(h)
    return h


def calibrate_amplitude(model: KanModel, calibration, band,
                        scale: float = 0.3, layer_index: int = 0) -> float:
    """scale * RMS of the in-band DCT coefficients of clean layer outputs."""
    outs = layer_outputs(model, calibration, layer_index)
    spectra = np.stack([dct(row) for row in outs])
    k_lo, k_hi = int(band[0]), int(band[1])
    in_band = spectra[:, k_lo:k_hi + 1]
    return float(scale * np.sqrt(np.mean(in_band ** 2)))


def default_band(length: int) -> tuple[int, int]:
    """Mid-frequency band [N//4, N//2]: away from DC and from the fragile
    top frequencies."""
    return length // 4, min(length // 2, length - 1)


def signal_step(model: KanModel, x, target: np.ndarray, opt,
                layer_index: int = 0) -> float:
    """One gradient step pulling layer outputs toward an explicit target.

    Only the indexed layer's parameters move. Returns the signal loss.
    """
    h = as_matrix(x, "inputs")
    for layer in model.layers[:layer_index]:
        h, _ = layer.forward(h)
    layer = model.layers[layer_index]
    out, cache = layer.forward(h)
    loss, g_out = mse_loss(out, target)
    grads, _ = layer.backward(cache, g_out, need_input_grad=False)
    optimizer_step(layer.parameters(), grads, opt)
    return loss


def embed(model: KanModel, signal: PerturbationSignal, inputs, targets,
          task: str, epochs: int, lr_main: float = 1e-3,
          lr_wm: float | None = None, batch_size: int = 64, seed: int = 0,
          layer_index: int = 0) -> KanModel:
    """Two-phase watermark embedding; returns a new, watermarked model.

    Per batch: (1) a main-task step on all parameters; (2) recompute the
    layer outputs O, form the moving target perturb(O), and take a signal
    step on the watermarked layer only. A zero signal skips phase 2
    entirely, which makes the run bit-identical to plain training under the
    same seed.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not 0 <= layer_index < len(model.layers):
        raise IndexError(f"layer index {layer_index} out of range")
    if signal.length != model.layers[layer_index].out_dim:
        raise ShapeError(f"signal length {signal.length} vs layer width "
                         f"{model.layers[layer_index].out_dim}")
    inputs = as_matrix(inputs, "inputs")
    targets = np.asarray(targets)
    wm = model.copy()
    opt_main = adam(lr_main)
    opt_wm = adam(lr_main if lr_wm is None else lr_wm)
    active = bool(np.any(signal.values))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in epoch_batches(inputs.shape[0], batch_size, rng):
            xb = inputs[idx]
            wm.train_step(xb, targets[idx], task, opt_main)
            if active:
                current = layer_outputs(wm, xb, layer_index)
                target = perturb_rows(current, signal.values)
                signal_step(wm, xb, target, opt_wm, layer_index)
    return wm


@dataclass
class DetectorDataset:
    """Labeled activation rows: watermarked (1) vs clean (0), each original
    row accompanied by shuffled variants with the same label."""

    inputs: np.ndarray
    labels: np.ndarray
    provenance: list[str]

    WM_TAGS = ("wm", "wm_shuffled")
    CLEAN_TAGS = ("clean", "clean_shuffled")

    def validate(self) -> None:
        n = self.inputs.shape[0]
        if self.labels.shape != (n,) or len(self.provenance) != n:
            raise ShapeError("detector dataset fields disagree on row count")
        for label, tag in zip(self.labels, self.provenance):
            expected = 1 if tag in self.WM_TAGS else 0
            if tag not in self.WM_TAGS + self.CLEAN_TAGS or label != expected:
                raise ValueError(f"label {label} inconsistent with provenance {tag!r}")
        if int(self.labels.sum()) * 2 != n:
            raise ValueError("watermarked and clean row counts differ")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def build_detector_dataset(model_wm: KanModel, model_clean: KanModel, inputs,
                           n_shuffles: int = 10, seed: int = 0,
                           layer_index: int = 0) -> DetectorDataset:
    """Per sample: the watermarked and clean layer outputs, plus
    ``n_shuffles`` independent random permutations of each, labeled like
    their originals."""
    wm_dim = model_wm.layers[layer_index].out_dim
    if wm_dim != model_clean.layers[layer_index].out_dim:
        raise ShapeError("models disagree on watermarked layer width")
    inputs = as_matrix(inputs, "inputs")
    if inputs.shape[0] == 0:
        raise ValueError("empty detector source data")
    o_wm = layer_outputs(model_wm, inputs, layer_index)
    o_clean = layer_outputs(model_clean, inputs, layer_index)
    rng = np.random.default_rng(seed)
    rows, labels, provenance = [], [], []
    for d in range(inputs.shape[0]):
        rows.append(o_wm[d])
        labels.append(1)
        provenance.append("wm")
        rows.append(o_clean[d])
        labels.append(0)
        provenance.append("clean")
        for _ in range(n_shuffles):
            rows.append(o_wm[d][rng.permutation(wm_dim)])
            labels.append(1)
            provenance.append("wm_shuffled")
        for _ in range(n_shuffles):
            rows.append(o_clean[d][rng.permutation(wm_dim)])
            labels.append(0)
            provenance.append("clean_shuffled")
    return DetectorDataset(np.asarray(rows), np.asarray(labels, dtype=np.int64),
                           provenance)


def train_detector(dataset: DetectorDataset, hidden=(64, 32), epochs: int = 50,
                   lr: float = 1e-3, batch_size: int = 128,
                   seed: int = 0) -> MlpModel:
    """Train the MLP detector with cross-entropy on the labeled rows."""
    if len(dataset) == 0:
        raise ValueError("empty detector dataset")
    if len(np.unique(dataset.labels)) < 2:
        raise ValueError("detector dataset must contain both classes")
    widths = [dataset.inputs.shape[1], *hidden, 2]
    detector = MlpModel.create(widths, head="logits", seed=seed)
    fit(detector, dataset.inputs, dataset.labels, "classification", epochs,
        adam(lr), batch_size=batch_size, seed=seed)
    return detector


@dataclass(frozen=True)
class VerificationResult:
    detection_rate: float
    threshold: float
    decision: bool


def verify(suspect: KanModel, detector: MlpModel, test_inputs,
           tau: float = 0.5, layer_index: int = 0) -> VerificationResult:
    """Fraction of test samples whose layer outputs the detector classifies
    as watermarked; ownership is claimed when the rate reaches tau.

    The test data must be unseen by both the suspect's training and the
    detector's training (caller contract).
    """
    outs = layer_outputs(suspect, test_inputs, layer_index)
    if outs.shape[1] != detector.widths[0]:
        raise ShapeError(f"layer width {outs.shape[1]} vs detector input "
                         f"{detector.widths[0]}")
    predicted = np.argmax(detector.predict(outs), axis=1)
    rate = float(np.mean(predicted == 1))
    return VerificationResult(rate, float(tau), bool(rate >= tau))
