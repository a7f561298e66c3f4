"""Class-balanced cross-entropy for imbalanced real/fake training sets.

Weights follow the effective-number-of-samples scheme: a class observed
n times gets weight (1 - beta) / (1 - beta^n). beta = 0 recovers plain
unweighted cross-entropy; beta -> 1 approaches inverse-frequency weighting.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


def class_balanced_weights(counts: Sequence[int], beta: float) -> np.ndarray:
    """Per-class weights (1 - beta) / (1 - beta^n_y) for each count n_y."""
    beta = float(beta)
    if not 0.0 <= beta < 1.0:
        raise ConfigError(f"beta must lie in [0, 1), got {beta}")
    counts = np.asarray(counts)
    if counts.ndim != 1 or len(counts) == 0:
        raise ConfigError("counts must be a non-empty 1-D sequence")
    if np.any(counts <= 0):
        raise ConfigError(f"class counts must be positive, got {counts.tolist()}")
    if beta == 0.0:
        return np.ones(len(counts), dtype=np.float64)
    n = counts.astype(np.float64)
    return (1.0 - beta) / (1.0 - np.power(beta, n))


def cb_cross_entropy(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Mean over the batch of w_{y_i} * (-log softmax(z_i)[y_i]).

    Plain-numpy path (logsumexp-stabilized) for evaluation and testing;
    the trainer builds the same quantity as a graph via `cb_loss_graph`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise ConfigError(
            f"logits must be (batch, n_classes) aligned with labels, "
            f"got {logits.shape} and {len(labels)} labels"
        )
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    nll = lse - logits[np.arange(len(labels)), labels]
    return float(np.mean(np.asarray(weights)[labels] * nll))


def cb_loss_graph(logit_nodes: Sequence[ad.Tensor], labels: Sequence[int],
                  weights: np.ndarray) -> ad.Tensor:
    """Differentiable class-balanced loss over per-sample logit nodes."""
    if len(logit_nodes) == 0:
        raise ConfigError("empty batch")
    if len(logit_nodes) != len(labels):
        raise ConfigError("logit/label count mismatch")
    weights = np.asarray(weights, dtype=np.float64)
    total = None
    for z, y in zip(logit_nodes, labels):
        term = ad.mul_scalar(ad.cross_entropy(z, int(y)), float(weights[int(y)]))
        total = term if total is None else ad.add(total, term)
    return ad.mul_scalar(total, 1.0 / len(logit_nodes))
