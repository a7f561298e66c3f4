"""Estimator-style front door: fit/predict wrappers over the training loops.

WaveformDetector pretrains a detector from scratch; PromptTuner adapts a
fitted detector to new data under a tuning mode. Both follow scikit-learn
conventions (constructor params stored verbatim, fitted state in
underscore attributes, get_params/set_params via BaseEstimator), so they
compose with model_selection utilities when convenient.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import train_test_split

from .data import LabeledDataset, SplitDatasets
from .errors import ConfigError
from .model import Detector, ModelConfig
from .training import Hyperparams, adapt, pretrain_source
from .validation import check_binary_labels, check_waveform_array


def _split_for_fit(X, y, dev_fraction, seed) -> SplitDatasets:
    X_tr, X_dev, y_tr, y_dev = train_test_split(
        X, y, test_size=dev_fraction, stratify=y, random_state=seed
    )
    dev = LabeledDataset(X_dev, y_dev, "dev")
    return SplitDatasets(LabeledDataset(X_tr, y_tr, "train"), dev, dev)


class _ScoringMixin:
    """Prediction surface shared by both estimators."""

    def _fitted_detector(self) -> Detector:
        det = getattr(self, "detector_", None)
        if det is None:
            raise NotFittedError(
                f"{type(self).__name__} is not fitted yet; call fit first"
            )
        return det

    def decision_function(self, X) -> np.ndarray:
        """Per-waveform detection score, logit(fake) - logit(real)."""
        det = self._fitted_detector()
        X = check_waveform_array(X, delta=det.config.delta)
        return det.scores(X)

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0.0).astype(np.uint8)

    def predict_proba(self, X) -> np.ndarray:
        det = self._fitted_detector()
        X = check_waveform_array(X, delta=det.config.delta)
        logits = np.array([det.logits(w) for w in X])
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


class WaveformDetector(_ScoringMixin, ClassifierMixin, BaseEstimator):
    """Train the detector end to end on labeled waveforms.

    fit(X, y) carves a stratified dev split out of X, trains with the
    class-balanced loss, and keeps the epoch with the lowest dev EER.
    """

    def __init__(self, d=32, n_layers=2, n_heads=2, conv=((8, 4, 16), (4, 2, 32)),
                 head_hidden=16, delta=128, ff_mult=2, eta=1e-3, lam=1e-4,
                 batch=8, beta=0.999, epochs=10, dev_fraction=0.25,
                 random_state=0, verbose=False):
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.conv = conv
        self.head_hidden = head_hidden
        self.delta = delta
        self.ff_mult = ff_mult
        self.eta = eta
        self.lam = lam
        self.batch = batch
        self.beta = beta
        self.epochs = epochs
        self.dev_fraction = dev_fraction
        self.random_state = random_state
        self.verbose = verbose

    def fit(self, X, y):
        X = check_waveform_array(X, delta=self.delta)
        y = check_binary_labels(y, len(X))
        config = ModelConfig(d=self.d, n_layers=self.n_layers,
                             n_heads=self.n_heads, conv=self.conv,
                             head_hidden=self.head_hidden, delta=self.delta,
                             ff_mult=self.ff_mult)
        hp = Hyperparams(eta=self.eta, lam=self.lam, batch=self.batch,
                         beta=self.beta, epochs=self.epochs)
        splits = _split_for_fit(X, y, self.dev_fraction, self.random_state)
        result = pretrain_source(config, splits, hp, seed=self.random_state,
                                 verbose=self.verbose)
        self.detector_ = Detector(config, result.best_registry)
        self.result_ = result
        self.best_dev_eer_ = result.best_dev_eer
        self.classes_ = np.array([0, 1], dtype=np.uint8)
        self.n_features_in_ = self.delta
        return self


class PromptTuner(_ScoringMixin, ClassifierMixin, BaseEstimator):
    """Adapt a fitted detector to a small labeled target set.

    `base` is a fitted WaveformDetector (or a bare Detector). The tuning
    mode picks what trains: "A" prompt only, "B" prompt plus the final
    linear layer, "C" all parameters; with_prompt=False drops the prompt
    (illegal for mode A, which would have nothing left to train).
    """

    def __init__(self, base=None, mode="A", with_prompt=True, n_p=5, eta=1e-3,
                 lam=1e-4, batch=4, beta=0.999, epochs=10, dev_fraction=0.25,
                 random_state=0, verbose=False):
        self.base = base
        self.mode = mode
        self.with_prompt = with_prompt
        self.n_p = n_p
        self.eta = eta
        self.lam = lam
        self.batch = batch
        self.beta = beta
        self.epochs = epochs
        self.dev_fraction = dev_fraction
        self.random_state = random_state
        self.verbose = verbose

    def _base_detector(self) -> Detector:
        base = self.base
        if isinstance(base, Detector):
            return base
        if isinstance(base, WaveformDetector):
            return base._fitted_detector()
        raise ConfigError(
            "base must be a fitted WaveformDetector or a Detector instance"
        )

    def fit(self, X, y):
        pretrained = self._base_detector()
        X = check_waveform_array(X, delta=pretrained.config.delta)
        y = check_binary_labels(y, len(X))
        hp = Hyperparams(eta=self.eta, lam=self.lam, batch=self.batch,
                         beta=self.beta, n_p=self.n_p, epochs=self.epochs)
        splits = _split_for_fit(X, y, self.dev_fraction, self.random_state)
        result = adapt(pretrained, self.mode, self.with_prompt, splits, hp,
                       seed=self.random_state, verbose=self.verbose)
        self.detector_ = Detector(pretrained.config, result.best_registry)
        self.result_ = result
        self.best_dev_eer_ = result.best_dev_eer
        self.classes_ = np.array([0, 1], dtype=np.uint8)
        self.n_features_in_ = pretrained.config.delta
        return self
