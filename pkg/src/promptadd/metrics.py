"""Detection-error metrics over detector scores.

Scoring convention everywhere in this package: higher score means "more
fake", labels are 0 = real (bona fide) and 1 = fake (spoofed). A false
acceptance is a real item scored at or above the decision threshold; a
false rejection is a fake item scored below it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class EERReport:
    eer: float
    n_real: int
    n_fake: int


def _validated(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError(
            f"scores and labels must be aligned 1-D arrays, "
            f"got {scores.shape} and {labels.shape}"
        )
    if len(scores) == 0:
        raise ValueError("empty score set")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 (real) or 1 (fake)")
    real = np.sort(scores[labels == 0])
    fake = np.sort(scores[labels == 1])
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("need scores from both classes to compute error rates")
    return scores, real, fake


def det_points(scores: Sequence[float], labels: Sequence[int]) -> list:
    """(FAR, FRR) at every distinct score plus a sentinel above the max.

    Thresholds ascend, so the list runs from (1, 0) toward (0, 1). Tied
    scores fall on the same side of every threshold by construction.
    """
    scores, real, fake = _validated(scores, labels)
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    # at t: FAR = #(real >= t)/n_real, FRR = #(fake < t)/n_fake
    far = (len(real) - np.searchsorted(real, thresholds, side="left")) / len(real)
    frr = np.searchsorted(fake, thresholds, side="left") / len(fake)
    return list(zip(far.tolist(), frr.tolist()))


def compute_eer(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Equal error rate of the score set under the fake-positive convention.

    FAR falls and FRR rises as the threshold sweeps upward; the EER is the
    common value at the crossing, linearly interpolated between the two
    consecutive threshold points where FAR - FRR changes sign. A constant
    score set therefore lands at exactly 0.5.
    """
    pts = det_points(scores, labels)
    far = np.array([p[0] for p in pts])
    frr = np.array([p[1] for p in pts])
    diff = far - frr
    # diff starts at +1 (threshold at the min score) and ends at -1
    i = int(np.argmax(diff <= 0.0))
    d0, d1 = diff[i - 1], diff[i]
    if d0 == d1:
        return float(far[i])
    alpha = d0 / (d0 - d1)
    return float(far[i - 1] + alpha * (far[i] - far[i - 1]))


def evaluate_scores(scores: Sequence[float], labels: Sequence[int]) -> EERReport:
    _, real, fake = _validated(scores, labels)
    return EERReport(eer=compute_eer(scores, labels), n_real=len(real), n_fake=len(fake))
