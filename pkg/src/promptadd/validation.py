"""Input validation helpers for the estimator layer."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


def check_waveform_array(X, delta=None) -> np.ndarray:
    """Coerce X to a finite float64 (n_samples, delta) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ConfigError(f"X must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigError("X contains NaN or Inf")
    if delta is not None and X.shape[1] != delta:
        raise ConfigError(
            f"X has {X.shape[1]} samples per waveform, expected {delta}"
        )
    return X


def check_binary_labels(y, n: int) -> np.ndarray:
    """Coerce y to length-n uint8 labels containing both classes."""
    y = np.asarray(y)
    if y.shape != (n,):
        raise ConfigError(f"y must have shape ({n},), got {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("y must contain only 0 (real) and 1 (fake)")
    if y.min() == y.max():
        raise ConfigError("y must contain both classes")
    return y.astype(np.uint8)
