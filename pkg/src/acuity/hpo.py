"""Random hyperparameter search with median pruning at fold boundaries."""
from __future__ import annotations

import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .datamodel import EvalReport
from .evaluation.bootstrap import bootstrap_report
from .evaluation.metrics import UndefinedMetric
from .evaluation.training import TrainingDiverged, predict_logits, train, train_fixed
from .models import FAMILIES, IncompatibleLength, ModelSpec, build
from .pipeline import SCENARIO_FUSION, Dataset, check_scenario

log = logging.getLogger(__name__)

N_TRIALS = 30
STATUSES = ("running", "pruned", "complete", "failed")


class SearchError(RuntimeError):
    pass


class ReplayMismatch(SearchError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    models: tuple[str, ...] = FAMILIES
    batch_sizes: tuple[int, ...] = (8, 16, 24, 32)
    lr: tuple[float, float] = (1e-5, 1e-1)
    weight_decay: tuple[float, float] = (1e-10, 1e-3)
    downsample_factors: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        for name in ("lr", "weight_decay"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} bounds must satisfy 0 < low <= high, got {(lo, hi)}")
        if not (self.models and self.batch_sizes and self.downsample_factors):
            raise ValueError("categorical dimensions must be nonempty")
        if set(self.models) - set(FAMILIES):
            raise ValueError(f"unknown model families {sorted(set(self.models) - set(FAMILIES))}")

    @staticmethod
    def _log_uniform(rng, bounds) -> float:
        lo, hi = bounds
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    def sample(self, rng: np.random.Generator) -> dict:
        return {
            "model": str(self.models[rng.integers(len(self.models))]),
            "batch_size": int(self.batch_sizes[rng.integers(len(self.batch_sizes))]),
            "lr": self._log_uniform(rng, self.lr),
            "weight_decay": self._log_uniform(rng, self.weight_decay),
            "downsample_factor": int(self.downsample_factors[rng.integers(len(self.downsample_factors))]),
        }

    def contains(self, config: dict) -> bool:
        return (set(config) == {"model", "batch_size", "lr", "weight_decay", "downsample_factor"}
                and config["model"] in self.models and config["batch_size"] in self.batch_sizes
                and self.lr[0] <= config["lr"] <= self.lr[1]
                and self.weight_decay[0] <= config["weight_decay"] <= self.weight_decay[1]
                and config["downsample_factor"] in self.downsample_factors)


@dataclass
class Trial:
    id: int
    config: dict
    fold_aucs: list[float] = field(default_factory=list)
    best_epochs: list[int] = field(default_factory=list)
    status: str = "running"
    error: str | None = None

    @property
    def objective(self) -> float | None:
        return float(np.mean(self.fold_aucs)) if self.status == "complete" else None

    def running_mean(self, fold: int) -> float:
        return float(np.mean(self.fold_aucs[: fold + 1]))

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "config": self.config, "fold_aucs": self.fold_aucs,
                           "best_epochs": self.best_epochs, "status": self.status,
                           "objective": self.objective, "error": self.error}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Trial":
        raw = json.loads(line)
        return cls(raw["id"], raw["config"], raw["fold_aucs"], raw["best_epochs"], raw["status"], raw["error"])


@dataclass(frozen=True)
class FoldResult:
    auc: float
    best_epoch: int = 0


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]


@dataclass(frozen=True)
class MedianPruner:
    """Prune when the running mean falls below the median of completed trials' running means."""

    n_startup_trials: int = 5

    def should_prune(self, trial: Trial, fold: int, completed: list[Trial], n_folds: int) -> bool:
        if fold >= n_folds - 1 or len(completed) < self.n_startup_trials:
            return False
        reference = [t.running_mean(fold) for t in completed]
        return trial.running_mean(fold) < float(np.median(reference))


class _Registry:
    """Shared trial table; pruning reads a consistent snapshot under the lock."""

    def __init__(self, log_path: Path | None):
        self.lock = threading.Lock()
        self.trials: dict[int, Trial] = {}
        self.log_path = log_path

    def completed(self) -> list[Trial]:
        with self.lock:
            return [t for _, t in sorted(self.trials.items()) if t.status == "complete"]

    def finish(self, trial: Trial, append: bool = True) -> None:
        with self.lock:
            self.trials[trial.id] = trial
            if append and self.log_path is not None:
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(trial.to_json() + "\n")


def read_log(path) -> dict[int, Trial]:
    path = Path(path)
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            t = Trial.from_json(line)
            out[t.id] = t
    return out


def trial_rng(seed: int, trial_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial_id])


def _run_trial(trial: Trial, objective, n_folds: int, pruner: MedianPruner, registry: _Registry) -> Trial:
    try:
        for fold in range(n_folds):
            res = objective(trial.config, fold, trial.id)
            if not isinstance(res, FoldResult):
                res = FoldResult(float(res))
            trial.fold_aucs.append(float(res.auc))
            trial.best_epochs.append(int(res.best_epoch))
            if pruner.should_prune(trial, fold, registry.completed(), n_folds):
                trial.status = "pruned"
                log.info("trial %d pruned after fold %d (running mean %.4f)", trial.id, fold, trial.running_mean(fold))
                return trial
        trial.status = "complete"
    except (TrainingDiverged, UndefinedMetric, IncompatibleLength, FloatingPointError) as exc:
        trial.status, trial.error = "failed", f"{type(exc).__name__}: {exc}"
        log.warning("trial %d failed: %s", trial.id, trial.error)
    return trial


def run_search(space: SearchSpace, objective: Callable, n_trials: int = N_TRIALS, seed: int = 0, n_folds: int = 3,
               pruner: MedianPruner | None = None, workers: int = 1, log_path=None) -> SearchResult:
    """Sample ``n_trials`` configs and evaluate them fold by fold.

    ``objective(config, fold, trial_id)`` returns a FoldResult or a bare AUC.
    With ``log_path``, finished trials are appended as JSON lines; trials
    already in the log are replayed (their sampled config must match) instead
    of being rerun.  Single-worker searches are seed-deterministic.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    pruner = pruner or MedianPruner()
    path = None if log_path is None else Path(log_path)
    logged = read_log(path) if path is not None else {}
    registry = _Registry(path)

    pending = []
    for i in range(n_trials):
        config = space.sample(trial_rng(seed, i))
        if i in logged:
            if logged[i].config != config:
                raise ReplayMismatch(f"trial {i}: logged config {logged[i].config} differs from sampled {config}")
            registry.finish(logged[i], append=False)
        else:
            pending.append(Trial(i, config))

    def work(trial):
        registry.finish(_run_trial(trial, objective, n_folds, pruner, registry))

    if workers == 1:
        for trial in pending:
            work(trial)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, pending))

    trials = [registry.trials[i] for i in range(n_trials)]
    complete = [t for t in trials if t.status == "complete"]
    if not complete:
        raise SearchError(f"all {n_trials} trials failed or were pruned")
    best = max(complete, key=lambda t: (t.objective, -t.id))
    return SearchResult(best, trials)


# --- training objective over a Dataset ---------------------------------------------------


@dataclass(frozen=True)
class TrainingPlan:
    width_scale: float = 0.25
    depth: str = "small"
    max_epochs: int = 50
    patience: int = 10


def model_spec(config: dict, scenario: str, plan: TrainingPlan, seed: int) -> ModelSpec:
    return ModelSpec(config["model"], plan.width_scale, plan.depth, SCENARIO_FUSION[scenario], seed)


def derive_seed(seed: int, *parts: int) -> int:
    return int(np.random.default_rng([seed, *parts]).integers(2**31))


def cv_objective(dataset: Dataset, scenario: str, seed: int = 0, plan: TrainingPlan = TrainingPlan()) -> Callable:
    """Objective training one model per (trial, fold); patient disjointness is checked on every call."""
    check_scenario(scenario, allow_sofa=False)

    def objective(config: dict, fold: int, trial_id: int) -> FoldResult:
        factor = config["downsample_factor"]
        train_set, val_set = dataset.fold_sets(fold, scenario, factor)
        s = derive_seed(seed, trial_id, fold)
        model = build(model_spec(config, scenario, plan, s), train_set.x.shape[-1])
        res = train(model, train_set, val_set, config["lr"], config["weight_decay"], config["batch_size"], s,
                    plan.max_epochs, plan.patience)
        return FoldResult(res.best_auc, res.best_epoch)

    return objective


def final_epochs(trial: Trial) -> int:
    epochs = [e for e in trial.best_epochs if e > 0]
    return max(1, int(round(float(np.median(epochs))))) if epochs else 1


def finalize(trial: Trial, dataset: Dataset, scenario: str, seed: int = 0, plan: TrainingPlan = TrainingPlan()):
    """Train one model on every development patient with the trial's config."""
    if trial.status != "complete":
        raise SearchError(f"trial {trial.id} is {trial.status}; finalize needs a complete trial")
    config = trial.config
    dev = dataset.dev(scenario, config["downsample_factor"])
    model = build(model_spec(config, scenario, plan, derive_seed(seed, 2**31)), dev.x.shape[-1])
    train_fixed(model, dev, config["lr"], config["weight_decay"], config["batch_size"],
                derive_seed(seed, 2**31 + 1), final_epochs(trial))
    return model


def evaluate_holdout(model, dataset: Dataset, scenario: str, seed: int = 0, threshold: float = 0.5,
                     trial: Trial | None = None, return_predictions: bool = False):
    """Single read of the holdout, summarised by the bootstrap.

    With ``return_predictions`` also returns (probabilities, labels).
    """
    factor = trial.config["downsample_factor"] if trial is not None else 1
    test = dataset.holdout(scenario, factor)
    probs = 1.0 / (1.0 + np.exp(-predict_logits(model, test)))
    extra = {} if trial is None else {"hyperparameters": dict(trial.config), "fold_aucs": list(trial.fold_aucs)}
    report = bootstrap_report(probs, test.y, seed=seed, threshold=threshold, scenario=scenario, **extra)
    return (report, probs, test.y) if return_predictions else report
