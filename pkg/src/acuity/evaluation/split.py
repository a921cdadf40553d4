"""Patient-grouped holdout and k-fold assignment."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..signal import LeakageError


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    partition: dict[str, str]  # patient -> "dev" | "test"
    folds: dict[str, int]  # dev patient -> fold index
    k: int
    seed: int

    @property
    def dev_patients(self) -> list[str]:
        return sorted(p for p, part in self.partition.items() if part == "dev")

    @property
    def test_patients(self) -> list[str]:
        return sorted(p for p, part in self.partition.items() if part == "test")

    def fold_patients(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.folds.items() if f == fold)

    def train_patients(self, fold: int) -> list[str]:
        return sorted(p for p, f in self.folds.items() if f != fold)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "seed": self.seed, "partition": self.partition, "folds": self.folds},
                          sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        raw = json.loads(text)
        return cls(raw["partition"], {p: int(f) for p, f in raw["folds"].items()}, raw["k"], raw["seed"])

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "SplitPlan":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _largest_remainder(sizes: list[int], fraction: float, total: int) -> list[int]:
    exact = [n * fraction for n in sizes]
    quota = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - quota[i]), i))
    for i in order[: total - sum(quota)]:
        quota[i] += 1
    return quota


def make_split(patients, seed: int, dev_fraction: float = 0.7, k: int = 3, stratify: bool = True,
               ever_unstable: dict[str, bool] | None = None) -> SplitPlan:
    """Grouped 70/30 holdout plus k dev folds, optionally stratified by ever-unstable.

    Fold sizes differ by at most one patient overall, and within each stratum.
    """
    ids = sorted(set(patients))
    if len(ids) != len(list(patients)):
        raise SplitError("duplicate patient ids")
    if stratify:
        if ever_unstable is None:
            raise SplitError("stratified split needs the ever-unstable flag per patient")
        strata = {flag: [p for p in ids if bool(ever_unstable[p]) == flag] for flag in (True, False)}
    else:
        strata = {None: ids}
    n_dev = int(round(len(ids) * dev_fraction))
    keys = list(strata)
    quotas = _largest_remainder([len(strata[s]) for s in keys], dev_fraction, n_dev)
    rng = np.random.default_rng(seed)
    partition: dict[str, str] = {}
    folds: dict[str, int] = {}
    counter = 0
    for key, quota in zip(keys, quotas):
        members = strata[key]
        if stratify and quota < k:
            raise SplitError(f"stratum ever_unstable={key} has {len(members)} patients, "
                             f"{quota} in development; need >= {k} for {k} folds")
        shuffled = [members[i] for i in rng.permutation(len(members))]
        for i, pid in enumerate(shuffled):
            if i < quota:
                partition[pid] = "dev"
                folds[pid] = counter % k
                counter += 1
            else:
                partition[pid] = "test"
    if len(folds) < k:
        raise SplitError(f"{len(folds)} development patients cannot fill {k} folds")
    return SplitPlan(partition, folds, k, seed)


def check_disjoint(train, validation, test) -> None:
    """Raise LeakageError if any patient appears in two of the three sets."""
    train, validation, test = set(train), set(validation), set(test)
    for a, b, name in ((train, validation, "train/validation"), (train, test, "train/test"),
                       (validation, test, "validation/test")):
        shared = a & b
        if shared:
            raise LeakageError(f"patients shared across {name}: {sorted(shared)[:5]}")
