"""Shared fixtures: the desk-scale digits dataset (written and re-read
through the IDX pathway) and the classification watermark pipeline reused
across watermark, attack, and acceptance tests."""

import numpy as np
import pytest

from kanmark import (Dataset, KanModel, adam, build_detector_dataset,
                     calibrate_amplitude, embed, fit, gen_signal, load_idx,
                     split_dataset, train_detector, write_idx)
from kanmark.watermark import default_band

# Desk-scale classification run shared by the pipeline tests (criteria 4-6).
CLASS_SETUP = {
    "hidden": 32,
    "clean_epochs": 50,
    "lr": 1e-3,
    "batch": 64,
    "wm_epochs": 8,
    "wm_lr_main": 2e-3,
    "wm_lr_wm": 1e-3,
    "amplitude_scale": 0.3,
    "det_hidden": (64, 32),
    "det_epochs": 50,
    "det_lr": 1e-3,
    "n_shuffles": 10,
    "det_samples": 2000,
}


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """sklearn digits written out as an IDX pair (the desk MNIST stand-in)."""
    sklearn_datasets = pytest.importorskip("sklearn.datasets")
    raw = sklearn_datasets.load_digits()
    inputs = 2.0 * (raw.data / 16.0) - 1.0
    ds = Dataset(inputs, raw.target.astype(np.int64))
    root = tmp_path_factory.mktemp("digits")
    images, labels = root / "digits-images-idx3", root / "digits-labels-idx1"
    write_idx(ds, images, labels, image_shape=(8, 8))
    return str(images), str(labels)


@pytest.fixture(scope="session")
def digits_splits(digits_idx):
    ds = load_idx(*digits_idx)
    return split_dataset(ds, (0.7, 0.15, 0.15), seed=11)


@pytest.fixture(scope="session")
def class_pipeline(digits_splits):
    """Clean model, watermarked model, and detector at the desk config."""
    train, test, hold = digits_splits
    d = train.inputs.shape[1]
    s = CLASS_SETUP
    clean = KanModel.create([d, s["hidden"], 10], seed=101)
    fit(clean, train.inputs, train.targets, "classification",
        s["clean_epochs"], adam(s["lr"]), s["batch"], seed=102)
    band = default_band(s["hidden"])
    calibration = train.inputs[:256]
    alpha = calibrate_amplitude(clean, calibration, band, s["amplitude_scale"])
    signal = gen_signal(key=777, length=s["hidden"], band=band, amplitude=alpha)
    wm = embed(clean, signal, train.inputs, train.targets, "classification",
               epochs=s["wm_epochs"], lr_main=s["wm_lr_main"],
               lr_wm=s["wm_lr_wm"], seed=103)
    det_data = build_detector_dataset(wm, clean, train.inputs[:s["det_samples"]],
                                      n_shuffles=s["n_shuffles"], seed=104)
    detector = train_detector(det_data, hidden=s["det_hidden"],
                              epochs=s["det_epochs"], lr=s["det_lr"], seed=105)
    return {"train": train, "test": test, "hold": hold, "clean": clean,
            "wm": wm, "signal": signal, "detector": detector,
            "calibration": calibration}
