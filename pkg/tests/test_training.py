"""Optimizer contract and the pretrain/adapt loop mechanics."""
import numpy as np
import pytest

from promptadd import autodiff as ad
from promptadd.data import DomainConfig, split, synth_generate
from promptadd.errors import ConfigError, TrainingDivergenceError
from promptadd.model import ModelConfig, build_model
from promptadd.training import (
    Adam,
    AdaptResult,
    Hyperparams,
    adapt,
    evaluate,
    pretrain_source,
)

CFG = ModelConfig(d=8, n_layers=1, n_heads=2, conv=((4, 4, 8),),
                  head_hidden=4, delta=32, ff_mult=1)
DOMAIN = DomainConfig(delta=32, base_freq_range=(0.06, 0.15))


def tiny_splits(n_real=9, n_fake=9, seed=0, shift=0.0):
    ds = synth_generate(DOMAIN.shifted(shift), n_real, n_fake, seed=seed)
    return split(ds, (0.5, 0.25, 0.25), seed=seed + 1)


def scalar_param(value):
    return ad.parameter(np.array(value))


def test_hyperparams_validation_and_defaults():
    hp = Hyperparams()
    assert hp.epochs == 100 and hp.n_p == 5
    for bad in (dict(eta=0.0), dict(lam=-1e-4), dict(batch=0),
                dict(beta=1.0), dict(n_p=0), dict(epochs=0)):
        with pytest.raises(ConfigError):
            Hyperparams(**bad)


def test_adam_first_step_magnitude():
    p = scalar_param(1.0)
    opt = Adam([("p", p)], eta=0.1, lam=0.0)
    p.grad = np.array(1.0)
    opt.step()
    assert abs((1.0 - float(p.data)) - 0.1) < 1e-6


def test_adam_zero_grad_is_noop_without_decay():
    p = scalar_param(1.2345)
    opt = Adam([("p", p)], eta=0.1, lam=0.0)
    p.grad = np.array(0.0)
    opt.step()
    assert float(p.data) == 1.2345


def test_adam_pure_decay_with_zero_grad():
    p = scalar_param(2.0)
    opt = Adam([("p", p)], eta=0.1, lam=0.5)
    p.grad = np.array(0.0)
    opt.step()
    # decay only: 2 * (1 - 0.1*0.5); zero moments give a zero adam step
    assert float(p.data) == 2.0 * (1.0 - 0.05)


def test_adam_decay_applies_before_moment_step():
    p = scalar_param(1.0)
    opt = Adam([("p", p)], eta=0.1, lam=0.5)
    p.grad = np.array(1.0)
    opt.step()
    expected = 1.0 * (1.0 - 0.05) - 0.1 * (1.0 / (1.0 + 1e-8))
    assert abs(float(p.data) - expected) < 1e-12


def test_adam_rejects_nan_grad_naming_parameter():
    p = scalar_param(1.0)
    opt = Adam([("fragile.weight", p)], eta=0.1, lam=0.0)
    p.grad = np.array(np.nan)
    with pytest.raises(TrainingDivergenceError, match="fragile.weight"):
        opt.step()


def test_pretrain_runs_and_returns_best_epoch():
    source = tiny_splits()
    hp = Hyperparams(eta=3e-3, lam=1e-4, batch=4, beta=0.99, epochs=3)
    res = pretrain_source(CFG, source, hp, seed=1)
    assert len(res.history) == 3
    assert res.best_dev_eer == min(h.dev_eer for h in res.history)
    assert res.history[res.best_epoch - 1].dev_eer == res.best_dev_eer
    # returned registry really is the best epoch's parameters
    from promptadd.model import Detector
    assert evaluate(Detector(CFG, res.best_registry), source.dev).eer == res.best_dev_eer


def test_single_epoch_history():
    res = pretrain_source(CFG, tiny_splits(), Hyperparams(epochs=1, batch=4), seed=0)
    assert len(res.history) == 1


def test_verbose_prints_one_line_per_epoch(capsys):
    pretrain_source(CFG, tiny_splits(), Hyperparams(epochs=2, batch=4), seed=0,
                    verbose=True)
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 loss=") and " dev_eer=" in lines[0]
    assert lines[1].startswith("epoch=2 ")


def fixture_pretrained():
    hp = Hyperparams(eta=3e-3, lam=1e-4, batch=4, beta=0.99, epochs=2)
    res = pretrain_source(CFG, tiny_splits(), hp, seed=3)
    from promptadd.model import Detector
    return Detector(CFG, res.best_registry)


def test_adapt_freezes_everything_outside_the_mode(tmp_path):
    det = fixture_pretrained()
    target = tiny_splits(seed=5, shift=0.4)
    hp = Hyperparams(eta=1e-2, lam=1e-4, batch=4, beta=0.99, n_p=3, epochs=2)

    res_a = adapt(det, "A", True, target, hp, seed=7)
    frozen = res_a.best_registry
    assert frozen.content_hash() == det.registry.content_hash()  # all theta_f
    assert frozen.prompt is not None and frozen.prompt.n_p == 3

    res_b = adapt(det, "B", True, target, hp, seed=7)
    names = det.registry.names()
    untouched = [n for n in names if not n.startswith("out.")]
    assert res_b.best_registry.content_hash(untouched) == det.registry.content_hash(untouched)
    assert res_b.best_registry.content_hash(["out.weight", "out.bias"]) != \
        det.registry.content_hash(["out.weight", "out.bias"])

    res_lin = adapt(det, "B", False, target, hp, seed=7)
    assert res_lin.best_registry.prompt is None

    # the pretrained detector itself is never mutated
    assert det.registry.prompt is None


def test_adapt_is_deterministic():
    det = fixture_pretrained()
    target = tiny_splits(seed=6, shift=0.3)
    hp = Hyperparams(eta=5e-3, batch=4, n_p=2, epochs=2)
    r1 = adapt(det, "B", True, target, hp, seed=11)
    r2 = adapt(det, "B", True, target, hp, seed=11)
    assert r1.best_registry.content_hash() == r2.best_registry.content_hash()
    assert r1.best_registry.prompt.param.data.tobytes() == \
        r2.best_registry.prompt.param.data.tobytes()
    assert [(h.train_loss, h.dev_eer) for h in r1.history] == \
        [(h.train_loss, h.dev_eer) for h in r2.history]
    r3 = adapt(det, "B", True, target, hp, seed=12)
    assert r3.best_registry.prompt.param.data.tobytes() != \
        r1.best_registry.prompt.param.data.tobytes()


def test_adapt_validation():
    det = fixture_pretrained()
    target = tiny_splits(seed=6)
    hp = Hyperparams(epochs=1, batch=4)
    with pytest.raises(ConfigError, match="mode A without a prompt"):
        adapt(det, "A", False, target, hp, seed=0)

    from promptadd.data import LabeledDataset, SplitDatasets
    empty = SplitDatasets(
        LabeledDataset(np.empty((0, 32)), np.empty(0, np.uint8)),
        target.dev, target.eval)
    with pytest.raises(ConfigError, match="empty"):
        adapt(det, "A", True, empty, hp, seed=0)

    one_class = SplitDatasets(
        LabeledDataset(np.random.default_rng(0).standard_normal((4, 32)),
                       np.zeros(4, np.uint8)),
        target.dev, target.eval)
    with pytest.raises(ConfigError, match="both classes"):
        adapt(det, "C", True, one_class, hp, seed=0)

    wrong_delta = synth_generate(DomainConfig(delta=16, base_freq_range=(0.06, 0.15)), 6, 6, 0)
    with pytest.raises(ConfigError, match="delta"):
        adapt(det, "A", True, split(wrong_delta, (0.5, 0.25, 0.25), 0), hp, seed=0)


def test_evaluate_rejects_single_class():
    det = fixture_pretrained()
    from promptadd.data import LabeledDataset
    ds = LabeledDataset(np.random.default_rng(0).standard_normal((3, 32)),
                        np.ones(3, np.uint8))
    with pytest.raises(ValueError, match="both classes"):
        evaluate(det, ds)
