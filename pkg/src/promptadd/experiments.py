"""Experiment orchestration: regime grids, ablations, and result tables.

A cell is one (regime, target, size, prompt length) combination. Each cell
gets one hyperparameter search on its dev split, then n_seeds independent
adaptation runs with the winning recipe; the row reports mean/std eval EER
over the seeds that completed. The zero-shot regime (mode A without a
prompt) trains nothing, so its row is a single evaluation with zero
variance. Every derived seed comes from hashing the experiment seeds with
the cell coordinates, which keeps cells independent and reruns
byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import (
    DEFAULT_SPLIT_FRACTIONS,
    DomainConfig,
    SplitDatasets,
    split,
    subsample_target,
    synth_generate,
    write_dataset,
)
from .errors import ConfigError
from .hpo import SearchSpace, search, write_trial_log
from .model import (
    Detector,
    ModelConfig,
    count_params_config,
    load_checkpoint,
    save_checkpoint,
)
from .training import Hyperparams, adapt, evaluate, pretrain_source

REGIMES = ("A_nopt", "A_pt", "B_nopt", "B_pt", "C_nopt", "C_pt")
CANON_SIZES = (10, 50, 100, 1000)
CANON_PROMPT_LENGTHS = (1, 5, 10, 100)

RESULT_HEADER = "regime,target,size,n_p,mean_eer,std_eer,n_seeds,params,ratio"

# search space matched to the desk-scale model (the reference-scale presets
# in hpo.py are far too conservative for a model this small)
DESK_SPACE = SearchSpace(eta_range=(3e-4, 3e-2), lam_range=(1e-6, 1e-3))


def _regime_parts(regime: str) -> Tuple[str, bool]:
    mode, _, tag = regime.partition("_")
    return mode, tag == "pt"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    source: DomainConfig = field(default_factory=DomainConfig)
    targets: Dict[str, DomainConfig] = field(default_factory=dict)
    regimes: Tuple[str, ...] = REGIMES
    target_sizes: Tuple[int, ...] = (50,)
    prompt_lengths: Tuple[int, ...] = (5,)
    n_seeds: int = 12
    hpo_budget: int = 50
    search_space: SearchSpace = field(default_factory=lambda: DESK_SPACE)
    pretrain: Hyperparams = field(default_factory=Hyperparams)
    adapt_epochs: int = 100
    source_counts: Tuple[int, int] = (240, 240)
    target_counts: Tuple[int, int] = (240, 240)
    data_seed: int = 0
    train_seed: int = 0

    def __post_init__(self):
        self.regimes = tuple(self.regimes)
        self.target_sizes = tuple(int(s) for s in self.target_sizes)
        self.prompt_lengths = tuple(int(p) for p in self.prompt_lengths)
        if not self.targets:
            raise ConfigError("experiment needs at least one target domain")
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}, expected one of {REGIMES}")
        if not self.regimes:
            raise ConfigError("experiment needs at least one regime")
        for s in self.target_sizes:
            if s not in CANON_SIZES:
                raise ConfigError(f"target size {s} not in {CANON_SIZES}")
        for p in self.prompt_lengths:
            if p not in CANON_PROMPT_LENGTHS:
                raise ConfigError(
                    f"prompt length {p} not in {CANON_PROMPT_LENGTHS}"
                )
        if self.n_seeds < 1 or self.hpo_budget < 1 or self.adapt_epochs < 1:
            raise ConfigError("n_seeds, hpo_budget and adapt_epochs must be >= 1")
        if self.model.delta != self.source.delta:
            raise ConfigError("model delta must match source delta")
        for name, t in self.targets.items():
            if t.delta != self.model.delta:
                raise ConfigError(f"target {name!r} delta must match model delta")

    # -- JSON wire form ----------------------------------------------------

    def to_json(self) -> str:
        def hp(h: Hyperparams):
            return dict(eta=h.eta, lam=h.lam, batch=h.batch, beta=h.beta,
                        n_p=h.n_p, epochs=h.epochs)

        def dom(d: DomainConfig):
            return dict(delta=d.delta, base_freq_range=list(d.base_freq_range),
                        noise_level=d.noise_level, artifact_kind=d.artifact_kind,
                        shift=d.shift)

        payload = dict(
            model=dict(d=self.model.d, n_layers=self.model.n_layers,
                       n_heads=self.model.n_heads,
                       conv=[list(c) for c in self.model.conv],
                       head_hidden=self.model.head_hidden,
                       delta=self.model.delta, ff_mult=self.model.ff_mult),
            source=dom(self.source),
            targets={k: dom(v) for k, v in self.targets.items()},
            regimes=list(self.regimes),
            target_sizes=list(self.target_sizes),
            prompt_lengths=list(self.prompt_lengths),
            n_seeds=self.n_seeds,
            hpo_budget=self.hpo_budget,
            search_space=dict(eta_range=list(self.search_space.eta_range),
                              lam_range=list(self.search_space.lam_range),
                              batch_choices=list(self.search_space.batch_choices),
                              beta_choices=list(self.search_space.beta_choices)),
            pretrain=hp(self.pretrain),
            adapt_epochs=self.adapt_epochs,
            source_counts=list(self.source_counts),
            target_counts=list(self.target_counts),
            data_seed=self.data_seed,
            train_seed=self.train_seed,
        )
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        try:
            model = ModelConfig(**{**raw["model"],
                                   "conv": tuple(tuple(c) for c in raw["model"]["conv"])})
            source = DomainConfig(**{**raw["source"],
                                     "base_freq_range": tuple(raw["source"]["base_freq_range"])})
            targets = {
                k: DomainConfig(**{**v, "base_freq_range": tuple(v["base_freq_range"])})
                for k, v in raw["targets"].items()
            }
            space = SearchSpace(
                eta_range=tuple(raw["search_space"]["eta_range"]),
                lam_range=tuple(raw["search_space"]["lam_range"]),
                batch_choices=tuple(raw["search_space"]["batch_choices"]),
                beta_choices=tuple(raw["search_space"]["beta_choices"]),
            ) if "search_space" in raw else DESK_SPACE
            return cls(
                model=model, source=source, targets=targets,
                regimes=tuple(raw.get("regimes", REGIMES)),
                target_sizes=tuple(raw.get("target_sizes", (50,))),
                prompt_lengths=tuple(raw.get("prompt_lengths", (5,))),
                n_seeds=raw.get("n_seeds", 12),
                hpo_budget=raw.get("hpo_budget", 50),
                search_space=space,
                pretrain=Hyperparams(**raw.get("pretrain", {})),
                adapt_epochs=raw.get("adapt_epochs", 100),
                source_counts=tuple(raw.get("source_counts", (240, 240))),
                target_counts=tuple(raw.get("target_counts", (240, 240))),
                data_seed=raw.get("data_seed", 0),
                train_seed=raw.get("train_seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"config is missing or mistypes a field: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from a coordinate tuple."""
    key = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


# ---------------------------------------------------------------------------
# result table


@dataclass
class ResultRow:
    regime: str
    target: str
    size: int
    n_p: int
    mean_eer: float
    std_eer: float
    n_seeds: int
    params: int
    ratio: float

    def csv_line(self) -> str:
        return (f"{self.regime},{self.target},{self.size},{self.n_p},"
                f"{self.mean_eer!r},{self.std_eer!r},{self.n_seeds},"
                f"{self.params},{self.ratio!r}")


def _row_key(row: ResultRow):
    return (REGIMES.index(row.regime), row.target, row.size, row.n_p)


@dataclass
class ResultTable:
    rows: List[ResultRow] = field(default_factory=list)

    def sort(self) -> "ResultTable":
        self.rows.sort(key=_row_key)
        return self

    def to_csv(self) -> str:
        lines = [RESULT_HEADER]
        lines.extend(r.csv_line() for r in self.rows)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0] != RESULT_HEADER:
            raise ConfigError(
                f"result csv must start with header {RESULT_HEADER!r}"
            )
        rows = []
        for line in lines[1:]:
            cols = line.split(",")
            if len(cols) != 9:
                raise ConfigError(f"malformed result row: {line!r}")
            rows.append(ResultRow(
                regime=cols[0], target=cols[1], size=int(cols[2]),
                n_p=int(cols[3]), mean_eer=float(cols[4]),
                std_eer=float(cols[5]), n_seeds=int(cols[6]),
                params=int(cols[7]), ratio=float(cols[8]),
            ))
        return cls(rows)

    def to_markdown(self) -> str:
        """Grouped table; within each with/without-prompt pair the better
        (strictly lower mean EER) entry is bold, ties bold neither."""
        bold = set()
        by_key = {(r.regime, r.target, r.size, r.n_p): r for r in self.rows}
        for row in self.rows:
            mode, pt = _regime_parts(row.regime)
            if not pt:
                continue
            partner = by_key.get((f"{mode}_nopt", row.target, row.size, 0))
            if partner is None:
                continue
            if row.mean_eer < partner.mean_eer:
                bold.add(id(row))
            elif partner.mean_eer < row.mean_eer:
                bold.add(id(partner))
        lines = [
            "| regime | target | size | n_p | mean EER | std | seeds | params | ratio |",
            "|---|---|---|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            eer = f"{r.mean_eer:.4f}"
            if id(r) in bold:
                eer = f"**{eer}**"
            lines.append(
                f"| {r.regime} | {r.target} | {r.size} | {r.n_p} | {eer} "
                f"| {r.std_eer:.4f} | {r.n_seeds} | {r.params} | {r.ratio:.6f} |"
            )
        return "\n".join(lines) + "\n"


def report(table: ResultTable, fmt: str = "csv") -> str:
    if fmt == "csv":
        return table.to_csv()
    if fmt == "markdown":
        return table.to_markdown()
    raise ConfigError(f"unknown report format {fmt!r}, expected csv or markdown")


# ---------------------------------------------------------------------------
# the experiment driver


def _generate_domain(cfg: DomainConfig, counts: Tuple[int, int],
                     seed: int) -> SplitDatasets:
    ds = synth_generate(cfg, counts[0], counts[1], seed=seed)
    return split(ds, DEFAULT_SPLIT_FRACTIONS, seed=stable_seed("split", seed))


def _persist_splits(splits: SplitDatasets, out_dir: str, prefix: str) -> None:
    for part in (splits.train, splits.dev, splits.eval):
        write_dataset(part, os.path.join(out_dir, f"{prefix}_{part.split}.pdds"))


def prepare_source_model(cfg: ExperimentConfig, out_dir: str,
                         verbose: bool = False) -> Tuple[Detector, SplitDatasets]:
    """Generate + persist source data, pretrain + persist the detector."""
    os.makedirs(out_dir, exist_ok=True)
    source = _generate_domain(cfg.source, cfg.source_counts,
                              stable_seed("source", cfg.data_seed))
    _persist_splits(source, out_dir, "source")
    result = pretrain_source(cfg.model, source, cfg.pretrain,
                             seed=cfg.train_seed, verbose=verbose)
    detector = Detector(cfg.model, result.best_registry)
    save_checkpoint(detector.registry, os.path.join(out_dir, "source_model.padd"))
    return detector, source


def run_experiment(cfg: ExperimentConfig, out_dir: str,
                   verbose: bool = False) -> ResultTable:
    """Full grid: pretrain once, then HPO + seed runs per cell.

    Writes datasets, the source checkpoint, per-cell trial and seed logs,
    and results.csv under `out_dir`. Returns the (sorted) result table."""
    os.makedirs(out_dir, exist_ok=True)
    detector, _ = prepare_source_model(cfg, out_dir, verbose=verbose)

    targets = {}
    tdir = os.path.join(out_dir, "targets")
    os.makedirs(tdir, exist_ok=True)
    for name in sorted(cfg.targets):
        dom = cfg.targets[name]
        targets[name] = _generate_domain(dom, cfg.target_counts,
                                         stable_seed("target", name, cfg.data_seed))
        _persist_splits(targets[name], tdir, name)

    rows = []
    for regime in cfg.regimes:
        mode, with_prompt = _regime_parts(regime)
        lengths = cfg.prompt_lengths if with_prompt else (0,)
        for target_name in sorted(cfg.targets):
            tsplits = targets[target_name]
            for size in cfg.target_sizes:
                for n_p in lengths:
                    rows.append(_run_cell(cfg, detector, regime, mode,
                                          with_prompt, target_name, tsplits,
                                          size, n_p, out_dir, verbose))
    table = ResultTable(rows).sort()
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(table.to_csv())
    return table


def _run_cell(cfg: ExperimentConfig, detector: Detector, regime: str,
              mode: str, with_prompt: bool, target_name: str,
              tsplits: SplitDatasets, size: int, n_p: int, out_dir: str,
              verbose: bool) -> ResultRow:
    if regime == "A_nopt":
        # zero-shot: nothing to train, one evaluation, zero variance
        eer = evaluate(detector, tsplits.eval).eer
        if verbose:
            print(f"cell regime={regime} target={target_name} size={size} "
                  f"n_p=0 eval_eer={eer:.6f} (zero-shot)")
        return ResultRow(regime, target_name, size, 0, eer, 0.0,
                         cfg.n_seeds, 0, 0.0)

    # D_T is all the labeled target data the cell may touch: adapt on its
    # train part, monitor its own small dev; the full target eval split is
    # used only for reporting.
    d_t = subsample_target(tsplits.train, size,
                           stable_seed("dt", cfg.data_seed, target_name, size))
    d_t_splits = split(d_t, DEFAULT_SPLIT_FRACTIONS,
                       stable_seed("dt-split", cfg.data_seed, target_name, size))
    cell = SplitDatasets(d_t_splits.train, d_t_splits.dev, tsplits.eval)
    cell_dir = os.path.join(out_dir, "cells",
                            f"{regime}_{target_name}_s{size}_p{n_p}")
    os.makedirs(cell_dir, exist_ok=True)

    hpo_run_seed = stable_seed("hpo-run", cfg.train_seed, regime, target_name,
                               size, n_p)

    def objective(hp: Hyperparams, _trial_seed: int) -> float:
        # fixed run seed: trials differ only in hyperparameters
        return adapt(detector, mode, with_prompt, cell, hp,
                     seed=hpo_run_seed).best_dev_eer

    result = search(cfg.search_space, objective,
                    master_seed=stable_seed("hpo", cfg.train_seed, regime,
                                            target_name, size, n_p),
                    budget=cfg.hpo_budget,
                    n_p=max(n_p, 1), epochs=cfg.adapt_epochs)
    write_trial_log(result, os.path.join(cell_dir, "trials.csv"))
    best_hp = result.best_hp

    eers = []
    seed_lines = ["seed_index,seed,dev_eer,eval_eer"]
    for s in range(cfg.n_seeds):
        run_seed = stable_seed("run", cfg.train_seed, regime, target_name,
                               size, n_p, s)
        try:
            adapted = adapt(detector, mode, with_prompt, cell, best_hp,
                            seed=run_seed)
            eval_eer = evaluate(Detector(cfg.model, adapted.best_registry),
                                tsplits.eval).eer
            eers.append(eval_eer)
            seed_lines.append(f"{s},{run_seed},{adapted.best_dev_eer!r},{eval_eer!r}")
        except Exception as exc:  # partial failure: row marked by n_seeds
            seed_lines.append(f"{s},{run_seed},failed,{type(exc).__name__}")
    with open(os.path.join(cell_dir, "seeds.csv"), "w") as fh:
        fh.write("\n".join(seed_lines) + "\n")

    params, ratio = count_params_config(cfg.model, mode, with_prompt,
                                        n_p=n_p if with_prompt else 0)
    mean = float(np.mean(eers)) if eers else 1.0
    std = float(np.std(eers)) if eers else 0.0
    if verbose:
        print(f"cell regime={regime} target={target_name} size={size} "
              f"n_p={n_p} mean_eer={mean:.6f} (n={len(eers)})")
    return ResultRow(regime, target_name, size, n_p, mean, std, len(eers),
                     params, ratio)


# ---------------------------------------------------------------------------
# ablation harnesses


def ablate_prompt_length(cfg: ExperimentConfig, out_dir: str,
                         lengths: Sequence[int] = CANON_PROMPT_LENGTHS,
                         verbose: bool = False) -> ResultTable:
    """Prompt-length sweep: all three modes with a prompt, N_P over `lengths`."""
    sub = replace(cfg, regimes=("A_pt", "B_pt", "C_pt"),
                  prompt_lengths=tuple(lengths))
    return run_experiment(sub, out_dir, verbose=verbose)


def ablate_sample_size(cfg: ExperimentConfig, out_dir: str,
                       sizes: Sequence[int] = CANON_SIZES,
                       verbose: bool = False) -> ResultTable:
    """Target-size sweep over `sizes` for the configured regimes."""
    sub = replace(cfg, target_sizes=tuple(sizes))
    return run_experiment(sub, out_dir, verbose=verbose)


def example_config() -> ExperimentConfig:
    """A small end-to-end setup that runs in minutes on one core."""
    model = ModelConfig(d=32, n_layers=2, n_heads=2,
                        conv=((8, 4, 16), (4, 2, 32)),
                        head_hidden=16, delta=128, ff_mult=1)
    source = DomainConfig(delta=128, base_freq_range=(0.02, 0.05),
                          noise_level=0.05,
                          artifact_kind="periodic-glitch")
    return ExperimentConfig(
        model=model,
        source=source,
        targets={"near": source.shifted(0.3), "far": source.shifted(0.6)},
        regimes=("A_nopt", "A_pt", "B_nopt", "B_pt"),
        target_sizes=(50,),
        prompt_lengths=(5,),
        n_seeds=3,
        hpo_budget=6,
        pretrain=Hyperparams(eta=3e-3, lam=1e-4, batch=8, beta=0.99, epochs=20),
        adapt_epochs=8,
        source_counts=(200, 200),
        target_counts=(200, 200),
    )
