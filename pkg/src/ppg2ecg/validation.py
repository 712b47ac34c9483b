"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError
from .preprocessing import WINDOW_SAMPLES


def check_windows(x, name="X") -> np.ndarray:
    """Coerce to a finite (n, 512) float32 matrix of normalized windows."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != WINDOW_SAMPLES:
        raise DimensionError(f"{name} must be (n, {WINDOW_SAMPLES}), got {arr.shape}")
    if arr.shape[0] == 0:
        raise InputError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_window_pair(x, y):
    xa = check_windows(x, "X")
    ya = check_windows(y, "y")
    if xa.shape != ya.shape:
        raise DimensionError(f"X {xa.shape} and y {ya.shape} must align window for window")
    return xa, ya


def check_modalities(x, name="X"):
    """Split (n, 1024) rows into (ppg, ecg) halves; (n, 512) means one modality."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] not in (WINDOW_SAMPLES, 2 * WINDOW_SAMPLES):
        raise DimensionError(
            f"{name} must be (n, {WINDOW_SAMPLES}) or (n, {2 * WINDOW_SAMPLES}), got {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise InputError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite values")
    if arr.shape[1] == WINDOW_SAMPLES:
        return (arr,)
    return (arr[:, :WINDOW_SAMPLES], arr[:, WINDOW_SAMPLES:])


def check_labels(y, n_rows, name="y"):
    labels = list(np.asarray(y).ravel().tolist())
    if len(labels) != n_rows:
        raise DimensionError(f"{name} has {len(labels)} entries for {n_rows} windows")
    return labels
