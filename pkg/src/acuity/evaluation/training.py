"""Mini-batch training with early stopping on validation AUC."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..models import AcuityNet
from .metrics import UndefinedMetric, auc

log = logging.getLogger(__name__)

MAX_EPOCHS = 50
PATIENCE = 10
EVAL_BATCH = 64


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class ArraySet:
    x: np.ndarray  # N x 3 x L
    y: np.ndarray  # N, 0/1
    ehr: np.ndarray | None = None  # N x F
    patients: np.ndarray | None = None

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.x.shape[0]} windows vs {self.y.shape[0]} labels")
        if self.ehr is not None and self.ehr.shape[0] != self.y.shape[0]:
            raise ValueError("EHR rows do not match windows")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx) -> "ArraySet":
        return ArraySet(self.x[idx], self.y[idx], None if self.ehr is None else self.ehr[idx],
                        None if self.patients is None else self.patients[idx])


@dataclass
class TrainResult:
    model: AcuityNet
    val_aucs: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    best_auc: float = math.nan


def predict_logits(model: AcuityNet, data: ArraySet, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = []
    with ad.no_grad():
        for lo in range(0, len(data), batch_size):
            ehr = None if data.ehr is None else data.ehr[lo : lo + batch_size]
            out.append(model(data.x[lo : lo + batch_size], ehr).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def _run_epoch(model, optimizer, data: ArraySet, batch_size: int, rng) -> float:
    order = rng.permutation(len(data))
    total = 0.0
    for lo in range(0, len(data), batch_size):
        idx = order[lo : lo + batch_size]
        optimizer.zero_grad()
        ehr = None if data.ehr is None else data.ehr[idx]
        loss = ad.bce_with_logits(model(data.x[idx], ehr), data.y[idx])
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value}")
        loss.backward()
        try:
            optimizer.step()
        except ad.NonFiniteGradient as exc:
            raise TrainingDiverged(str(exc)) from exc
        total += value * idx.size
    return total / len(data)


def train(model: AcuityNet, train_set: ArraySet, val_set: ArraySet, lr: float, weight_decay: float,
          batch_size: int, seed: int, max_epochs: int = MAX_EPOCHS, patience: int = PATIENCE) -> TrainResult:
    """Train with shuffled mini-batches; keep the weights of the best validation-AUC epoch."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    if val_set.y.min() == val_set.y.max():
        raise UndefinedMetric("validation fold holds a single class; AUC undefined")
    rng = np.random.default_rng(seed)
    optimizer = ad.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    result = TrainResult(model)
    best_state, since_best = model.state_dict(), 0
    for epoch in range(1, max_epochs + 1):
        result.losses.append(_run_epoch(model, optimizer, train_set, batch_size, rng))
        score = auc(predict_logits(model, val_set), val_set.y)
        result.val_aucs.append(score)
        if not result.best_epoch or score > result.best_auc:
            result.best_epoch, result.best_auc = epoch, score
            best_state, since_best = model.state_dict(), 0
        else:
            since_best += 1
            if since_best >= patience:
                break
        log.debug("epoch %d loss %.4f val_auc %.4f", epoch, result.losses[-1], score)
    model.load_state_dict(best_state)
    return result


def train_fixed(model: AcuityNet, train_set: ArraySet, lr: float, weight_decay: float, batch_size: int,
                seed: int, epochs: int) -> TrainResult:
    """Train for exactly ``epochs`` epochs (no validation data)."""
    if len(train_set) == 0:
        raise ValueError("training set must be nonempty")
    rng = np.random.default_rng(seed)
    optimizer = ad.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    result = TrainResult(model, best_epoch=epochs)
    for _ in range(epochs):
        result.losses.append(_run_epoch(model, optimizer, train_set, batch_size, rng))
    return result
