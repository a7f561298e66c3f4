"""Experiment driver: config wire form, result tables, grid runs,
ablation harnesses, and byte-level rerun determinism."""
import os
from dataclasses import replace

import numpy as np
import pytest

from promptadd.data import DomainConfig, read_dataset
from promptadd.errors import ConfigError, TrainingDivergenceError
from promptadd.experiments import (
    CANON_PROMPT_LENGTHS,
    CANON_SIZES,
    REGIMES,
    RESULT_HEADER,
    ExperimentConfig,
    ResultRow,
    ResultTable,
    ablate_prompt_length,
    ablate_sample_size,
    example_config,
    report,
    run_experiment,
    stable_seed,
)
from promptadd.model import ModelConfig, count_params_config
from promptadd.training import Hyperparams


def tiny_config(**overrides) -> ExperimentConfig:
    model = ModelConfig(d=8, n_layers=1, n_heads=2, conv=((8, 4, 8),),
                        head_hidden=4, delta=48, ff_mult=1)
    source = DomainConfig(delta=48, base_freq_range=(0.06, 0.12),
                          noise_level=0.05, artifact_kind="periodic-glitch")
    base = dict(
        model=model,
        source=source,
        targets={"far": source.shifted(0.6)},
        regimes=("A_nopt", "A_pt", "B_nopt"),
        target_sizes=(10,),
        prompt_lengths=(5,),
        n_seeds=2,
        hpo_budget=2,
        pretrain=Hyperparams(eta=3e-3, lam=1e-4, batch=8, beta=0.99, epochs=2),
        adapt_epochs=2,
        source_counts=(40, 40),
        target_counts=(60, 60),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# -- config validation -------------------------------------------------------


def test_config_requires_targets():
    with pytest.raises(ConfigError, match="target"):
        tiny_config(targets={})


def test_config_rejects_unknown_regime():
    with pytest.raises(ConfigError, match="regime"):
        tiny_config(regimes=("A_pt", "D_pt"))


def test_config_pins_sizes_and_lengths_to_canonical_grids():
    with pytest.raises(ConfigError):
        tiny_config(target_sizes=(25,))
    with pytest.raises(ConfigError):
        tiny_config(prompt_lengths=(3,))
    assert CANON_SIZES == (10, 50, 100, 1000)
    assert CANON_PROMPT_LENGTHS == (1, 5, 10, 100)


def test_config_checks_delta_consistency():
    bad = DomainConfig(delta=32, base_freq_range=(0.06, 0.12))
    with pytest.raises(ConfigError, match="delta"):
        tiny_config(source=bad)
    with pytest.raises(ConfigError, match="delta"):
        tiny_config(targets={"far": bad})


def test_json_round_trip_is_exact():
    cfg = example_config()
    text = cfg.to_json()
    again = ExperimentConfig.from_json(text)
    assert again == cfg
    assert again.to_json() == text


def test_from_file_and_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(example_config().to_json())
    assert ExperimentConfig.from_file(path) == example_config()
    with pytest.raises(ConfigError, match="JSON"):
        ExperimentConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{}")


def test_stable_seed_is_deterministic_and_spread():
    assert stable_seed("a", 1) == stable_seed("a", 1)
    seen = {stable_seed("cell", i) for i in range(100)}
    assert len(seen) == 100
    for s in seen:
        assert 0 <= s < 2**63


# -- result table ------------------------------------------------------------


def _row(regime, mean, n_p=5):
    return ResultRow(regime, "far", 50, n_p, mean, 0.01, 12, 160, 0.1)


def test_result_csv_round_trip_idempotent():
    table = ResultTable([_row("A_pt", 0.125), _row("A_nopt", 0.25, n_p=0)]).sort()
    text = table.to_csv()
    again = ResultTable.from_csv(text)
    assert again.to_csv() == text
    assert text.startswith(RESULT_HEADER + "\n")


def test_result_csv_rejects_bad_header_and_rows():
    with pytest.raises(ConfigError, match="header"):
        ResultTable.from_csv("regime,target\nA_pt,far\n")
    with pytest.raises(ConfigError, match="malformed"):
        ResultTable.from_csv(RESULT_HEADER + "\nA_pt,far,50\n")


def test_sort_uses_canonical_regime_order():
    table = ResultTable([_row("C_pt", 0.3), _row("A_nopt", 0.2, n_p=0),
                         _row("B_pt", 0.1)]).sort()
    assert [r.regime for r in table.rows] == ["A_nopt", "B_pt", "C_pt"]
    assert [REGIMES.index(r.regime) for r in table.rows] == sorted(
        REGIMES.index(r.regime) for r in table.rows)


def test_markdown_bolds_the_better_of_each_prompt_pair():
    # A: pt wins; B: nopt wins; C: tie bolds neither
    table = ResultTable([
        _row("A_nopt", 0.30, n_p=0), _row("A_pt", 0.10),
        _row("B_nopt", 0.10, n_p=0), _row("B_pt", 0.30),
        _row("C_nopt", 0.20, n_p=0), _row("C_pt", 0.20),
    ]).sort()
    md = table.to_markdown()
    lines = {l.split("|")[1].strip(): l for l in md.splitlines()[2:]}
    assert "**0.1000**" in lines["A_pt"] and "**" not in lines["A_nopt"]
    assert "**0.1000**" in lines["B_nopt"] and "**" not in lines["B_pt"]
    assert "**" not in lines["C_nopt"] and "**" not in lines["C_pt"]


def test_report_formats():
    table = ResultTable([_row("A_pt", 0.125)])
    assert report(table, "csv") == table.to_csv()
    assert report(table, "markdown") == table.to_markdown()
    with pytest.raises(ConfigError, match="format"):
        report(table, "xml")


# -- grid runs ---------------------------------------------------------------


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    cfg = tiny_config()
    out = tmp_path_factory.mktemp("grid")
    table = run_experiment(cfg, str(out))
    return cfg, out, table


def test_grid_row_coverage_and_order(grid):
    cfg, _, table = grid
    keys = [(r.regime, r.target, r.size, r.n_p) for r in table.rows]
    assert keys == [("A_nopt", "far", 10, 0), ("A_pt", "far", 10, 5),
                    ("B_nopt", "far", 10, 0)]


def test_zero_shot_row_trains_nothing(grid):
    cfg, _, table = grid
    zs = table.rows[0]
    assert zs.regime == "A_nopt"
    assert zs.std_eer == 0.0
    assert zs.params == 0
    assert zs.ratio == 0.0
    assert zs.n_seeds == cfg.n_seeds


def test_param_columns_match_config_arithmetic(grid):
    cfg, _, table = grid
    for r in table.rows:
        if r.regime == "A_nopt":  # zero-shot trains nothing
            assert (r.params, r.ratio) == (0, 0.0)
            continue
        mode, _, tag = r.regime.partition("_")
        params, ratio = count_params_config(cfg.model, mode, tag == "pt",
                                            n_p=r.n_p)
        assert r.params == params
        assert r.ratio == ratio


def test_grid_artifacts_on_disk(grid):
    cfg, out, table = grid
    assert (out / "results.csv").read_text() == table.to_csv()
    assert read_dataset(out / "source_train.pdds").split == "train"
    assert read_dataset(out / "targets" / "far_eval.pdds").split == "eval"
    cell = out / "cells" / "A_pt_far_s10_p5"
    trials = (cell / "trials.csv").read_text().splitlines()
    assert trials[0] == "trial,eta,lambda,batch,beta,dev_eer,seed"
    assert len(trials) == 1 + cfg.hpo_budget
    seeds = (cell / "seeds.csv").read_text().splitlines()
    assert seeds[0] == "seed_index,seed,dev_eer,eval_eer"
    assert len(seeds) == 1 + cfg.n_seeds


def test_rerun_is_byte_identical(grid, tmp_path):
    cfg, out, _ = grid
    run_experiment(cfg, str(tmp_path))
    for rel in ("results.csv", os.path.join("cells", "A_pt_far_s10_p5", "trials.csv"),
                os.path.join("cells", "A_pt_far_s10_p5", "seeds.csv")):
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes()


def test_partial_failure_shrinks_n_seeds(tmp_path, monkeypatch):
    cfg = tiny_config(regimes=("B_pt",))
    bad_seed = stable_seed("run", cfg.train_seed, "B_pt", "far", 10, 5, 1)

    import promptadd.experiments as ex
    real_adapt = ex.adapt

    def flaky(detector, mode, with_prompt, d_t, hp, seed, verbose=False):
        if seed == bad_seed:
            raise TrainingDivergenceError("injected")
        return real_adapt(detector, mode, with_prompt, d_t, hp, seed,
                          verbose=verbose)

    monkeypatch.setattr(ex, "adapt", flaky)
    table = run_experiment(cfg, str(tmp_path))
    (row,) = table.rows
    assert row.n_seeds == cfg.n_seeds - 1
    seeds = (tmp_path / "cells" / "B_pt_far_s10_p5" / "seeds.csv").read_text()
    assert f"1,{bad_seed},failed,TrainingDivergenceError" in seeds


def test_all_seeds_failed_gives_sentinel_row(tmp_path, monkeypatch):
    cfg = tiny_config(regimes=("B_pt",))
    import promptadd.experiments as ex
    real_adapt = ex.adapt
    hpo_seed = stable_seed("hpo-run", cfg.train_seed, "B_pt", "far", 10, 5)

    def hpo_only(detector, mode, with_prompt, d_t, hp, seed, verbose=False):
        if seed != hpo_seed:
            raise TrainingDivergenceError("injected")
        return real_adapt(detector, mode, with_prompt, d_t, hp, seed,
                          verbose=verbose)

    monkeypatch.setattr(ex, "adapt", hpo_only)
    table = run_experiment(cfg, str(tmp_path))
    (row,) = table.rows
    assert row.n_seeds == 0
    assert row.mean_eer == 1.0
    assert row.std_eer == 0.0


# -- ablation harnesses ------------------------------------------------------


def test_prompt_length_ablation_covers_all_modes(tmp_path):
    cfg = tiny_config()
    table = ablate_prompt_length(cfg, str(tmp_path), lengths=(1, 5))
    keys = {(r.regime, r.n_p) for r in table.rows}
    assert keys == {(m, p) for m in ("A_pt", "B_pt", "C_pt") for p in (1, 5)}


def test_sample_size_ablation_covers_all_sizes(tmp_path):
    cfg = tiny_config(regimes=("A_nopt", "B_pt"), target_counts=(60, 60))
    table = ablate_sample_size(cfg, str(tmp_path), sizes=(10, 50))
    keys = {(r.regime, r.size) for r in table.rows}
    assert keys == {("A_nopt", 10), ("A_nopt", 50), ("B_pt", 10),
                    ("B_pt", 50)}
