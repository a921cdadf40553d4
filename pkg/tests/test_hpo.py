import json

import numpy as np
import pytest

from acuity.evaluation import TrainingDiverged
from acuity.hpo import (FoldResult, MedianPruner, ReplayMismatch, SearchError, SearchSpace, Trial,
                        final_epochs, read_log, run_search, trial_rng)
from acuity.models import FAMILIES


def quality_objective(seed, noise=0.03):
    """Each trial has a latent quality; fold AUCs scatter around it independently."""
    def objective(config, fold, trial_id):
        q = np.random.default_rng([seed, trial_id]).uniform(0.5, 0.9)
        return FoldResult(float(q + np.random.default_rng([seed, trial_id, fold + 1]).normal(0, noise)), fold + 1)
    return objective


def test_samples_within_bounds():
    space = SearchSpace()
    rng = np.random.default_rng(0)
    draws = [space.sample(rng) for _ in range(10_000)]
    assert all(space.contains(c) for c in draws)
    assert {c["model"] for c in draws} == set(FAMILIES)
    assert {c["batch_size"] for c in draws} == {8, 16, 24, 32}
    assert {c["downsample_factor"] for c in draws} == {1, 2, 4}
    log_lr = np.log10([c["lr"] for c in draws])
    assert log_lr.min() >= -5 and log_lr.max() <= -1 and abs(log_lr.mean() + 3) < 0.05
    log_wd = np.log10([c["weight_decay"] for c in draws])
    assert log_wd.min() >= -10 and log_wd.max() <= -3 and abs(log_wd.mean() + 6.5) < 0.1


def test_space_validation():
    with pytest.raises(ValueError):
        SearchSpace(lr=(0.1, 0.01))
    with pytest.raises(ValueError):
        SearchSpace(models=("lstm",))
    assert not SearchSpace().contains({"model": "vgg1d"})


def completed(means_per_fold):
    return [Trial(i, {}, list(m), [1] * len(m), "complete") for i, m in enumerate(means_per_fold)]


def test_pruning_rule_scripted():
    pruner = MedianPruner()
    history = completed([[0.7, 0.7, 0.7], [0.8, 0.8, 0.8], [0.6, 0.6, 0.6], [0.75, 0.7, 0.7], [0.65, 0.9, 0.9]])
    # median of fold-0 running means is 0.7
    assert pruner.should_prune(Trial(9, {}, [0.4]), 0, history, 3)
    assert not pruner.should_prune(Trial(9, {}, [0.7]), 0, history, 3)
    # running mean after fold 1: (0.4 + 0.95) / 2 = 0.675 < median 0.725
    assert pruner.should_prune(Trial(9, {}, [0.4, 0.95]), 1, history, 3)
    # never after the last fold, never before n_startup complete trials
    assert not pruner.should_prune(Trial(9, {}, [0.1, 0.1, 0.1]), 2, history, 3)
    assert not pruner.should_prune(Trial(9, {}, [0.1]), 0, history[:4], 3)


def test_far_below_median_pruned_before_second_fold():
    calls = []

    def objective(config, fold, trial_id):
        calls.append((trial_id, fold))
        return 0.3 if trial_id == 5 else 0.8

    res = run_search(SearchSpace(), objective, n_trials=6, seed=0)
    assert res.trials[5].status == "pruned" and (5, 1) not in calls
    assert all(t.status == "complete" for t in res.trials[:5])


def test_single_trial_is_best():
    res = run_search(SearchSpace(), lambda c, f, t: 0.1, n_trials=1, seed=3)
    assert res.best.id == 0 and res.best.status == "complete" and res.best.objective == pytest.approx(0.1)


def test_single_worker_deterministic():
    a = run_search(SearchSpace(), quality_objective(1), n_trials=12, seed=4)
    b = run_search(SearchSpace(), quality_objective(1), n_trials=12, seed=4)
    assert [t.to_json() for t in a.trials] == [t.to_json() for t in b.trials]
    c = run_search(SearchSpace(), quality_objective(1), n_trials=12, seed=5)
    assert [t.config for t in a.trials] != [t.config for t in c.trials]


def test_parallel_search_samples_same_configs():
    a = run_search(SearchSpace(), quality_objective(1), n_trials=8, seed=4)
    b = run_search(SearchSpace(), quality_objective(1), n_trials=8, seed=4, workers=3)
    assert [t.config for t in a.trials] == [t.config for t in b.trials]


def test_trial_rng_independent_of_order():
    assert SearchSpace().sample(trial_rng(2, 7)) == SearchSpace().sample(trial_rng(2, 7))


def test_pruning_soundness():
    gaps = []
    for seed in range(20):
        pruned = run_search(SearchSpace(), quality_objective(seed), n_trials=30, seed=seed)
        full = run_search(SearchSpace(), quality_objective(seed), n_trials=30, seed=seed,
                          pruner=MedianPruner(n_startup_trials=10**9))
        gaps.append(full.best.objective - pruned.best.objective)
    assert min(gaps) >= 0 and np.mean(gaps) < 0.02


def test_failed_trials_recorded_and_all_failed_raises():
    def objective(config, fold, trial_id):
        if trial_id == 1:
            raise TrainingDiverged("loss nan")
        return 0.7

    res = run_search(SearchSpace(), objective, n_trials=3)
    assert res.trials[1].status == "failed" and "TrainingDiverged" in res.trials[1].error

    def always_diverges(config, fold, trial_id):
        raise TrainingDiverged("loss nan")

    with pytest.raises(SearchError):
        run_search(SearchSpace(), always_diverges, n_trials=2)


def test_log_replay(tmp_path):
    path = tmp_path / "trials.jsonl"
    first = run_search(SearchSpace(), quality_objective(0), n_trials=4, seed=2, log_path=path)
    assert len(path.read_text().splitlines()) == 4
    calls = []

    def counting(config, fold, trial_id):
        calls.append(trial_id)
        return quality_objective(0)(config, fold, trial_id)

    second = run_search(SearchSpace(), counting, n_trials=6, seed=2, log_path=path)
    assert set(calls) == {4, 5}
    assert [t.to_json() for t in second.trials[:4]] == [t.to_json() for t in first.trials]
    assert set(read_log(path)) == set(range(6))
    with pytest.raises(ReplayMismatch):
        run_search(SearchSpace(), counting, n_trials=6, seed=3, log_path=path)


def test_trial_json_round_trip():
    t = Trial(3, {"lr": 0.01}, [0.7, 0.8], [4, 6], "pruned")
    assert Trial.from_json(t.to_json()) == t
    assert json.loads(t.to_json())["objective"] is None


def test_final_epochs_median():
    assert final_epochs(Trial(0, {}, [0.7] * 3, [3, 10, 7], "complete")) == 7
    assert final_epochs(Trial(0, {}, [], [], "complete")) == 1
