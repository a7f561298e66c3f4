"""Command-line workflow: exit codes, output lines, artifacts on disk,
JSON error reporting, and cross-invocation determinism."""
import json
import os
import subprocess
import sys

import pytest

from promptadd.cli import main
from promptadd.data import read_dataset
from promptadd.experiments import RESULT_HEADER

from test_experiments import tiny_config


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(tiny_config().to_json())
    return str(path)


@pytest.fixture(scope="module")
def pretrained(cfg_file, tmp_path_factory):
    """One workspace with datasets and a source checkpoint."""
    out = str(tmp_path_factory.mktemp("work"))
    assert main(["--config", cfg_file, "--out", out, "generate-data"]) == 0
    assert main(["--config", cfg_file, "--out", out, "pretrain"]) == 0
    return out


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_show_config_prints_json(capsys):
    code, out, err = run_cli(capsys, "show-config")
    assert code == 0 and err == ""
    cfg = json.loads(out)
    assert cfg["model"]["d"] == 32
    assert set(cfg["targets"]) == {"near", "far"}


def test_seed_flag_overrides_both_seeds(capsys):
    code, out, _ = run_cli(capsys, "--seed", "9", "show-config")
    assert code == 0
    cfg = json.loads(out)
    assert cfg["data_seed"] == 9 and cfg["train_seed"] == 9


def test_generate_data_writes_readable_datasets(cfg_file, pretrained):
    train = read_dataset(os.path.join(pretrained, "source_train.pdds"))
    assert train.split == "train" and len(train) == 48
    far = read_dataset(os.path.join(pretrained, "targets", "far_dev.pdds"))
    assert far.split == "dev"


def test_pretrain_leaves_checkpoint(pretrained):
    assert os.path.exists(os.path.join(pretrained, "source_model.padd"))


def test_eval_command(capsys, cfg_file, pretrained):
    code, out, _ = run_cli(capsys, "--config", cfg_file, "--out", pretrained,
                           "eval", "--target", "far")
    assert code == 0
    assert "eval target=far eer=" in out
    eer = float(out.split("eer=")[1].split()[0])
    assert 0.0 <= eer <= 1.0


def test_adapt_command_saves_checkpoint(capsys, cfg_file, pretrained):
    code, out, _ = run_cli(capsys, "--config", cfg_file, "--out", pretrained,
                           "adapt", "--mode", "B", "--target", "far",
                           "--size", "10", "--epochs", "2")
    assert code == 0
    assert "adapted mode=B" in out and "eval_eer=" in out
    assert os.path.exists(os.path.join(pretrained, "adapted_B_pt_far.padd"))


def test_hpo_command_writes_trial_log(capsys, cfg_file, pretrained):
    code, out, _ = run_cli(capsys, "--config", cfg_file, "--out", pretrained,
                           "hpo", "--target", "far", "--size", "10",
                           "--budget", "2")
    assert code == 0
    assert out.startswith("hpo best trial=")
    log = os.path.join(pretrained, "hpo_A_far_s10.csv")
    lines = open(log).read().splitlines()
    assert lines[0] == "trial,eta,lambda,batch,beta,dev_eer,seed"
    assert len(lines) == 3


def test_run_and_report(capsys, cfg_file, tmp_path):
    out = str(tmp_path / "run1")
    code, text, _ = run_cli(capsys, "--config", cfg_file, "--out", out, "run")
    assert code == 0 and "results.csv" in text
    results = open(os.path.join(out, "results.csv")).read()
    assert results.startswith(RESULT_HEADER)

    code, text, _ = run_cli(capsys, "--config", cfg_file, "--out", out,
                            "report")
    assert code == 0 and text == results

    code, text, _ = run_cli(capsys, "--config", cfg_file, "--out", out,
                            "report", "--format", "markdown")
    assert code == 0
    assert text.startswith("| regime | target |")


def test_two_runs_are_byte_identical(capsys, cfg_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert main(["--config", cfg_file, "--out", out, "run"]) == 0
        outs.append(open(os.path.join(out, "results.csv"), "rb").read())
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_ablation_commands(capsys, cfg_file, tmp_path):
    out = str(tmp_path / "abl")
    code, text, _ = run_cli(capsys, "--config", cfg_file, "--out", out,
                            "ablate-prompt-length", "--lengths", "1,5")
    assert code == 0 and "(6 rows)" in text
    code, text, _ = run_cli(capsys, "--config", cfg_file, "--out", out,
                            "ablate-sample-size", "--sizes", "10")
    assert code == 0 and "(3 rows)" in text


def test_unknown_target_is_usage_error(capsys, cfg_file, pretrained):
    code, out, err = run_cli(capsys, "--config", cfg_file, "--out", pretrained,
                             "eval", "--target", "nope")
    assert code == 2 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "UsageError"
    assert "nope" in payload["message"]


def test_missing_checkpoint_is_json_error(capsys, cfg_file, tmp_path):
    code, out, err = run_cli(capsys, "--config", cfg_file, "--out",
                             str(tmp_path / "empty"), "eval", "--target", "far")
    assert code == 1 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "FileNotFoundError"


def test_bad_config_file_is_json_error(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    code, _, err = run_cli(capsys, "--config", str(bad), "show-config")
    assert code == 1
    assert json.loads(err)["error"] == "ConfigError"


def test_bad_results_header_is_json_error(capsys, tmp_path):
    bad = tmp_path / "results.csv"
    bad.write_text("not,a,result,table\n")
    code, _, err = run_cli(capsys, "report", "--results", str(bad))
    assert code == 1
    assert json.loads(err)["error"] == "ConfigError"


def test_help_via_entry_module():
    proc = subprocess.run([sys.executable, "-m", "promptadd.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "Usage:" in proc.stdout
