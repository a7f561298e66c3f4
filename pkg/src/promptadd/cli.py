"""Command-line interface.

Global flags pick the experiment config, output directory, seed and
verbosity; subcommands cover the full workflow from data generation to
report rendering. On failure every command exits nonzero after printing a
single machine-readable JSON error line to stderr.
"""
from __future__ import annotations

import dataclasses
import json
import os
import sys

import click

from .data import (
    DEFAULT_SPLIT_FRACTIONS,
    read_dataset,
    split,
    subsample_target,
    synth_generate,
    write_dataset,
)
from .experiments import (
    ExperimentConfig,
    ResultTable,
    ablate_prompt_length,
    ablate_sample_size,
    example_config,
    prepare_source_model,
    report as render_report,
    run_experiment,
    stable_seed,
    _generate_domain,
)
from .hpo import SearchSpace, search, write_trial_log
from .model import Detector, load_checkpoint, save_checkpoint
from .training import Hyperparams, adapt, evaluate


class Ctx:
    def __init__(self, cfg: ExperimentConfig, out: str, verbose: bool):
        self.cfg = cfg
        self.out = out
        self.verbose = verbose


@click.group()
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Override both data and training seeds.")
@click.option("--out", type=click.Path(), default="out",
              help="Artifact directory.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Experiment config JSON; built-in default if omitted.")
@click.option("--verbose", is_flag=True, help="Per-epoch / per-cell progress.")
@click.pass_context
def cli(ctx, seed, out, config_path, verbose):
    """Test-time adaptation of a waveform deepfake detector by prompt tuning."""
    cfg = (ExperimentConfig.from_file(config_path) if config_path
           else example_config())
    if seed is not None:
        cfg = dataclasses.replace(cfg, data_seed=seed, train_seed=seed)
    ctx.obj = Ctx(cfg, out, verbose)


@cli.command("show-config")
@click.pass_obj
def show_config(obj):
    """Print the active experiment config as JSON."""
    click.echo(obj.cfg.to_json())


@cli.command("generate-data")
@click.pass_obj
def generate_data(obj):
    """Generate and persist source and target datasets."""
    cfg = obj.cfg
    os.makedirs(obj.out, exist_ok=True)
    source = _generate_domain(cfg.source, cfg.source_counts,
                              stable_seed("source", cfg.data_seed))
    for part in (source.train, source.dev, source.eval):
        write_dataset(part, os.path.join(obj.out, f"source_{part.split}.pdds"))
    tdir = os.path.join(obj.out, "targets")
    os.makedirs(tdir, exist_ok=True)
    for name in sorted(cfg.targets):
        parts = _generate_domain(cfg.targets[name], cfg.target_counts,
                                 stable_seed("target", name, cfg.data_seed))
        for part in (parts.train, parts.dev, parts.eval):
            write_dataset(part, os.path.join(tdir, f"{name}_{part.split}.pdds"))
    click.echo(f"wrote datasets under {obj.out}")


@cli.command()
@click.pass_obj
def pretrain(obj):
    """Pretrain the source detector and save its checkpoint."""
    detector, source = prepare_source_model(obj.cfg, obj.out,
                                            verbose=obj.verbose)
    eer = evaluate(detector, source.eval).eer
    click.echo(f"pretrained source_eval_eer={eer!r} "
               f"checkpoint={os.path.join(obj.out, 'source_model.padd')}")


def _load_detector(obj, checkpoint):
    path = checkpoint or os.path.join(obj.out, "source_model.padd")
    return Detector(obj.cfg.model, load_checkpoint(path))


def _target_splits(obj, target):
    cfg = obj.cfg
    if target not in cfg.targets:
        raise click.UsageError(
            f"unknown target {target!r}, config defines {sorted(cfg.targets)}"
        )
    return _generate_domain(cfg.targets[target], cfg.target_counts,
                            stable_seed("target", target, cfg.data_seed))


def _cell_splits(obj, target, size):
    tsplits = _target_splits(obj, target)
    d_t = subsample_target(tsplits.train, size,
                           stable_seed("dt", obj.cfg.data_seed, target, size))
    d_t_splits = split(d_t, DEFAULT_SPLIT_FRACTIONS,
                       stable_seed("dt-split", obj.cfg.data_seed, target, size))
    from .data import SplitDatasets

    return SplitDatasets(d_t_splits.train, d_t_splits.dev, tsplits.eval), tsplits


_mode_opt = click.option("--mode", type=click.Choice(["A", "B", "C"]),
                         default="A", show_default=True)
_prompt_opt = click.option("--with-prompt/--without-prompt", "with_prompt",
                           default=True, show_default=True)
_target_opt = click.option("--target", required=True,
                           help="Target domain name from the config.")
_size_opt = click.option("--size", type=int, default=50, show_default=True)
_np_opt = click.option("--n-p", type=int, default=5, show_default=True,
                       help="Prompt length.")


@cli.command("adapt")
@_mode_opt
@_prompt_opt
@_target_opt
@_size_opt
@_np_opt
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--eta", type=float, default=1e-3, show_default=True)
@click.option("--lam", type=float, default=1e-4, show_default=True)
@click.option("--batch", type=int, default=8, show_default=True)
@click.option("--beta", type=float, default=0.999, show_default=True)
@click.option("--epochs", type=int, default=None,
              help="Defaults to the config's adapt_epochs.")
@click.pass_obj
def adapt_cmd(obj, mode, with_prompt, target, size, n_p, checkpoint, eta, lam,
              batch, beta, epochs):
    """Adapt a pretrained detector to one target cell."""
    detector = _load_detector(obj, checkpoint)
    cell, tsplits = _cell_splits(obj, target, size)
    hp = Hyperparams(eta=eta, lam=lam, batch=batch, beta=beta,
                     n_p=max(n_p, 1),
                     epochs=epochs or obj.cfg.adapt_epochs)
    result = adapt(detector, mode, with_prompt, cell, hp,
                   seed=obj.cfg.train_seed, verbose=obj.verbose)
    eval_eer = evaluate(Detector(obj.cfg.model, result.best_registry),
                        tsplits.eval).eer
    os.makedirs(obj.out, exist_ok=True)
    tag = "pt" if with_prompt else "nopt"
    out_path = os.path.join(obj.out, f"adapted_{mode}_{tag}_{target}.padd")
    save_checkpoint(result.best_registry, out_path)
    click.echo(f"adapted mode={mode} with_prompt={with_prompt} target={target} "
               f"dev_eer={result.best_dev_eer!r} eval_eer={eval_eer!r} "
               f"checkpoint={out_path}")


@cli.command("eval")
@_target_opt
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.pass_obj
def eval_cmd(obj, target, checkpoint):
    """Evaluate a checkpoint on a target eval split."""
    detector = _load_detector(obj, checkpoint)
    tsplits = _target_splits(obj, target)
    rep = evaluate(detector, tsplits.eval)
    click.echo(f"eval target={target} eer={rep.eer!r} "
               f"n_real={rep.n_real} n_fake={rep.n_fake}")


@cli.command("hpo")
@_mode_opt
@_prompt_opt
@_target_opt
@_size_opt
@_np_opt
@click.option("--budget", type=int, default=None,
              help="Defaults to the config's hpo_budget.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.pass_obj
def hpo_cmd(obj, mode, with_prompt, target, size, n_p, budget, checkpoint):
    """Random-search hyperparameters for one adaptation cell."""
    cfg = obj.cfg
    detector = _load_detector(obj, checkpoint)
    cell, _ = _cell_splits(obj, target, size)
    run_seed = stable_seed("hpo-run", cfg.train_seed, mode, with_prompt,
                           target, size, n_p)

    def objective(hp, _seed):
        return adapt(detector, mode, with_prompt, cell, hp,
                     seed=run_seed).best_dev_eer

    result = search(cfg.search_space, objective,
                    master_seed=stable_seed("hpo", cfg.train_seed, mode,
                                            with_prompt, target, size, n_p),
                    budget=budget or cfg.hpo_budget, n_p=max(n_p, 1),
                    epochs=cfg.adapt_epochs, verbose=obj.verbose)
    os.makedirs(obj.out, exist_ok=True)
    log_path = os.path.join(obj.out, f"hpo_{mode}_{target}_s{size}.csv")
    write_trial_log(result, log_path)
    best = result.best
    click.echo(f"hpo best trial={best.index} dev_eer={best.dev_eer!r} "
               f"eta={best.hp.eta!r} lam={best.hp.lam!r} batch={best.hp.batch} "
               f"beta={best.hp.beta!r} log={log_path}")


@cli.command("run")
@click.pass_obj
def run_cmd(obj):
    """Run the full experiment grid and write results.csv."""
    table = run_experiment(obj.cfg, obj.out, verbose=obj.verbose)
    click.echo(f"wrote {os.path.join(obj.out, 'results.csv')} "
               f"({len(table.rows)} rows)")


@cli.command("ablate-prompt-length")
@click.option("--lengths", default="1,5,10,100", show_default=True,
              help="Comma-separated prompt lengths.")
@click.pass_obj
def ablate_prompt_length_cmd(obj, lengths):
    """Prompt-length ablation over all three modes."""
    values = tuple(int(v) for v in lengths.split(","))
    table = ablate_prompt_length(obj.cfg, obj.out, lengths=values,
                                 verbose=obj.verbose)
    click.echo(f"wrote {os.path.join(obj.out, 'results.csv')} "
               f"({len(table.rows)} rows)")


@cli.command("ablate-sample-size")
@click.option("--sizes", default="10,50,100,1000", show_default=True,
              help="Comma-separated target sizes.")
@click.pass_obj
def ablate_sample_size_cmd(obj, sizes):
    """Target-size ablation for the configured regimes."""
    values = tuple(int(v) for v in sizes.split(","))
    table = ablate_sample_size(obj.cfg, obj.out, sizes=values,
                               verbose=obj.verbose)
    click.echo(f"wrote {os.path.join(obj.out, 'results.csv')} "
               f"({len(table.rows)} rows)")


@cli.command("report")
@click.option("--results", type=click.Path(exists=True), default=None,
              help="Path to a results.csv; defaults to <out>/results.csv.")
@click.option("--format", "fmt", type=click.Choice(["csv", "markdown"]),
              default="csv", show_default=True)
@click.pass_obj
def report_cmd(obj, results, fmt):
    """Render a result table as csv or markdown."""
    path = results or os.path.join(obj.out, "results.csv")
    with open(path) as fh:
        table = ResultTable.from_csv(fh.read())
    click.echo(render_report(table, fmt), nl=False)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return exc.exit_code
    except click.UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
