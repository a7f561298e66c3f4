"""Optimization loops: source pretraining and target-side adaptation.

Adaptation never touches source data; it sees only the small labeled
target set and the pretrained parameters. Every loop tracks dev EER per
epoch and returns a snapshot of the best-epoch parameters, so a divergent
tail cannot overwrite a good early epoch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .data import LabeledDataset, SplitDatasets
from .errors import ConfigError, TrainingDivergenceError
from .losses import cb_loss_graph, class_balanced_weights
from .metrics import EERReport, compute_eer, evaluate_scores
from .model import (
    Detector,
    ModelConfig,
    ParamRegistry,
    build_model,
    init_prompt,
    trainable_params,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class Hyperparams:
    """One training recipe: step size eta, decoupled weight decay lam,
    batch size, class-balance beta, prompt length, epoch budget."""

    eta: float = 1e-3
    lam: float = 1e-4
    batch: int = 8
    beta: float = 0.999
    n_p: int = 5
    epochs: int = 100

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.batch < 1:
            raise ConfigError(f"batch must be at least 1, got {self.batch}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.n_p < 1:
            raise ConfigError(f"n_p must be at least 1, got {self.n_p}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")


class Adam:
    """Adam with decoupled weight decay.

    Decay multiplies parameters by (1 - eta*lam) before the moment update,
    so with a zero gradient and lam = 0 a step is an exact no-op."""

    def __init__(self, params: Sequence[Tuple[str, ad.Tensor]], eta: float, lam: float):
        self.params = list(params)
        self.eta = float(eta)
        self.lam = float(lam)
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in self.params}
        self._v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                raise TrainingDivergenceError(f"parameter {name!r} has no gradient")
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(
                    f"non-finite gradient on parameter {name!r}"
                )
            if self.lam != 0.0:
                p.data *= 1.0 - self.eta * self.lam
            m = self._m[name]
            v = self._v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            p.data -= self.eta * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_eer: float


@dataclass
class AdaptResult:
    """Outcome of one training run (pretraining or adaptation)."""

    best_registry: ParamRegistry
    best_dev_eer: float
    best_epoch: int
    history: List[EpochStats] = field(default_factory=list)
    seed: int = 0


def evaluate(detector: Detector, ds: LabeledDataset) -> EERReport:
    """EER of detector scores over a labeled dataset (needs both classes)."""
    if len(ds) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return evaluate_scores(detector.scores(ds.waveforms), ds.labels.astype(int))


def _run_epochs(detector: Detector, trainable: Sequence[Tuple[str, ad.Tensor]],
                train: LabeledDataset, dev: LabeledDataset, hp: Hyperparams,
                seed: int, verbose: bool) -> AdaptResult:
    n_real, n_fake = train.counts()
    if n_real == 0 or n_fake == 0:
        raise ConfigError(
            f"training data needs both classes, got {n_real} real / {n_fake} fake"
        )
    weights = class_balanced_weights([n_real, n_fake], hp.beta)
    opt = Adam(trainable, hp.eta, hp.lam)
    tensors = [t for _, t in trainable]
    rng = np.random.default_rng(seed)
    n = len(train)

    best: Optional[AdaptResult] = None
    history: List[EpochStats] = []
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, hp.batch):
            idx = order[lo:lo + hp.batch]
            ad.zero_grads(tensors)
            nodes = [detector.forward_graph(train.waveforms[i]) for i in idx]
            loss = cb_loss_graph(nodes, train.labels[idx], weights)
            if not np.isfinite(loss.data):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}"
                )
            ad.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
        train_loss = loss_sum / n
        dev_eer = evaluate(detector, dev).eer
        history.append(EpochStats(epoch, train_loss, dev_eer))
        if verbose:
            print(f"epoch={epoch} loss={train_loss:.6f} dev_eer={dev_eer:.6f}")
        if best is None or dev_eer < best.best_dev_eer:
            best = AdaptResult(detector.registry.copy(), dev_eer, epoch, seed=seed)
    best.history = history
    return best


def pretrain_source(config: ModelConfig, source: SplitDatasets, hp: Hyperparams,
                    seed: int, verbose: bool = False) -> AdaptResult:
    """Train a fresh detector on source data (full fine-tuning, no prompt).

    Returns the parameters of the epoch with the lowest source dev EER."""
    _check_delta(config, source.train)
    detector = build_model(config, seed)
    trainable = trainable_params(detector.registry, "C", with_prompt=False)
    return _run_epochs(detector, trainable, source.train, source.dev, hp,
                       seed, verbose)


def adapt(pretrained: Detector, mode: str, with_prompt: bool,
          d_t: SplitDatasets, hp: Hyperparams, seed: int,
          verbose: bool = False) -> AdaptResult:
    """Tune a copy of the pretrained detector on a small target set.

    mode/with_prompt select the trainable subset; everything else is
    bitwise frozen. The prompt, when used, is freshly initialized from
    target token statistics. Source data is not an input by design."""
    _check_delta(pretrained.config, d_t.train)
    if len(d_t.train) == 0:
        raise ConfigError("target training split is empty")
    work = Detector(pretrained.config, pretrained.registry.copy())
    if with_prompt:
        stats = work.token_statistics(d_t.train.waveforms)
        prompt_seed, loop_seed = _derive_seeds(seed)
        work.registry.prompt = init_prompt(pretrained.config.d, hp.n_p, stats,
                                           prompt_seed)
    else:
        work.registry.prompt = None
        loop_seed = seed
    trainable = trainable_params(work.registry, mode, with_prompt)
    result = _run_epochs(work, trainable, d_t.train, d_t.dev, hp, loop_seed,
                         verbose)
    result.seed = seed
    return result


def _derive_seeds(seed: int) -> Tuple[int, int]:
    ss = np.random.SeedSequence(seed)
    a, b = ss.generate_state(2)
    return int(a), int(b)


def _check_delta(config: ModelConfig, ds: LabeledDataset) -> None:
    if len(ds) and ds.delta != config.delta:
        raise ConfigError(
            f"dataset waveform length {ds.delta} does not match model "
            f"delta {config.delta}"
        )
