"""Shared helpers for the test suite."""
import numpy as np


def rel_err(a, b):
    """Elementwise |a-b| / max(1, |a|, |b|), reduced to the max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
