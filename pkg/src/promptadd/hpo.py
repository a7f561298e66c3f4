"""Random-search hyperparameter optimization.

Trials are independent draws from a SearchSpace; each trial's seed derives
from (master seed, trial index), so any single trial can be replayed
without rerunning the ones before it, and the whole search is
deterministic given the master seed. A trial that raises is recorded with
a sentinel dev EER of 1.0 and never wins.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, SearchFailedError
from .training import Hyperparams

DEFAULT_BUDGET = 50
FAILED_EER = 1.0


@dataclass
class SearchSpace:
    """Log-uniform ranges for eta/lam, uniform categorical batch/beta."""

    eta_range: Tuple[float, float]
    lam_range: Tuple[float, float]
    batch_choices: Tuple[int, ...] = (4, 8, 16)
    beta_choices: Tuple[float, ...] = (0.99, 0.999, 0.9999)

    def __post_init__(self):
        for name, (lo, hi) in (("eta_range", self.eta_range),
                               ("lam_range", self.lam_range)):
            if not 0.0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got {lo}, {hi}")
        if not self.batch_choices or any(b < 1 for b in self.batch_choices):
            raise ConfigError("batch_choices must be positive integers")
        if not self.beta_choices or any(not 0.0 <= b < 1.0 for b in self.beta_choices):
            raise ConfigError("beta_choices must lie in [0, 1)")


# search spaces used for the two reference front-end scales
W2V_SPACE = SearchSpace(eta_range=(1e-6, 1e-4), lam_range=(5e-6, 5e-4))
WSP_SPACE = SearchSpace(eta_range=(1e-7, 1e-5), lam_range=(1e-5, 1e-3))


def sample_config(space: SearchSpace, seed: int, n_p: int = 5,
                  epochs: int = 100) -> Hyperparams:
    """One deterministic draw: eta/lam log-uniform, batch/beta uniform."""
    rng = np.random.default_rng(seed)
    eta = float(np.exp(rng.uniform(*np.log(space.eta_range))))
    lam = float(np.exp(rng.uniform(*np.log(space.lam_range))))
    batch = int(space.batch_choices[rng.integers(len(space.batch_choices))])
    beta = float(space.beta_choices[rng.integers(len(space.beta_choices))])
    return Hyperparams(eta=eta, lam=lam, batch=batch, beta=beta, n_p=n_p,
                       epochs=epochs)


@dataclass
class TrialRecord:
    index: int
    hp: Hyperparams
    dev_eer: float
    seed: int
    failed: bool = False

    def log_line(self) -> str:
        return (f"{self.index},{self.hp.eta!r},{self.hp.lam!r},{self.hp.batch},"
                f"{self.hp.beta!r},{self.dev_eer!r},{self.seed}")


@dataclass
class SearchResult:
    best: TrialRecord
    records: List[TrialRecord] = field(default_factory=list)

    @property
    def best_hp(self) -> Hyperparams:
        return self.best.hp


TRIAL_LOG_HEADER = "trial,eta,lambda,batch,beta,dev_eer,seed"


def trial_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def search(space: SearchSpace, objective: Callable[[Hyperparams, int], float],
           master_seed: int, budget: int = DEFAULT_BUDGET, n_p: int = 5,
           epochs: int = 100, log_path=None,
           verbose: bool = False) -> SearchResult:
    """Run `budget` trials of `objective(hp, seed) -> dev EER`, lowest wins.

    Ties keep the earliest trial. Exceptions inside a trial are recorded as
    failures with the sentinel EER; if every trial fails the search raises."""
    if budget < 1:
        raise ConfigError(f"budget must be at least 1, got {budget}")
    records: List[TrialRecord] = []
    best: Optional[TrialRecord] = None
    for i in range(budget):
        seed = trial_seed(master_seed, i)
        hp = sample_config(space, seed, n_p=n_p, epochs=epochs)
        try:
            eer = float(objective(hp, seed))
            failed = False
        except Exception:
            eer = FAILED_EER
            failed = True
        rec = TrialRecord(i, hp, eer, seed, failed)
        records.append(rec)
        if verbose:
            print(f"trial={i} dev_eer={eer:.6f}{' (failed)' if failed else ''}")
        if not failed and (best is None or eer < best.dev_eer):
            best = rec
    if best is None:
        raise SearchFailedError(f"all {budget} trials failed")
    result = SearchResult(best=best, records=records)
    if log_path is not None:
        write_trial_log(result, log_path)
    return result


def write_trial_log(result: SearchResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(TRIAL_LOG_HEADER + "\n")
        for rec in result.records:
            fh.write(rec.log_line() + "\n")
