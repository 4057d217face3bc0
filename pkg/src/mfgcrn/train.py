"""ADAM training with early stopping, evaluation, heuristic baselines, ablations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import Batch, CPTConfig, MinMax, gather_batch
from .errors import ConfigError, ContractError, DivergenceError
from .model import STMFGCRN
from .numerics import ParameterStore

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    patience: int = 15
    max_epochs: int = 200
    seeds: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        problems = []
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if problems:
            raise ConfigError(problems)


# ----------------------------------------------------------------------------
# optimiser


class Adam:
    """ADAM with bias correction over every slot of a ParameterStore."""

    def __init__(self, store: ParameterStore, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p: np.zeros_like(v) for p, v in store.items()}
        self.v = {p: np.zeros_like(v) for p, v in store.items()}

    def step(self, grads=None):
        grads = grads if grads is not None else self.store.grads()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.store.paths():
            g = grads[p]
            m, v = self.m[p], self.v[p]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            theta = self.store.value(p)
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


def adam_step(store, grads, state: Adam):
    state.step(grads)
    return store, state


# ----------------------------------------------------------------------------
# early stopping


class EarlyStopping:
    """Tracks the best (strictly lowest) validation loss and a patience counter."""

    def __init__(self, patience=15):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = None
        self.counter = 0
        self.best_state = None

    def update(self, epoch, val_loss, state=None) -> bool:
        """Record an epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.counter = 0
            self.best_state = state
        else:
            self.counter += 1
        return self.counter >= self.patience


# ----------------------------------------------------------------------------
# data bundle


@dataclass
class Split:
    """Normalised values plus the target indices of one split."""
    values: np.ndarray  # T x N x C normalised
    te: np.ndarray  # T x 36
    times: np.ndarray
    cpt: CPTConfig

    def batch(self, idx=None) -> Batch:
        times = self.times if idx is None else self.times[idx]
        return gather_batch(self.values, self.te, times, self.cpt)

    def batches(self, batch_size, order=None):
        order = np.arange(len(self.times)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])

    def __len__(self):
        return len(self.times)


@dataclass
class TrainResult:
    curve: list  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val: float
    stopped_epoch: int


def mean_loss(model: STMFGCRN, split: Split, batch_size=256) -> float:
    """Sample-weighted mean L1 over a split (forward only)."""
    total, count = 0.0, 0
    for b in split.batches(batch_size):
        pred = model.predict(b)
        total += float(np.abs(pred - b.target).sum())
        count += b.target.size
    return total / count


def train(model: STMFGCRN, train_split: Split, val_split: Split, cfg: TrainConfig, seed: int = 0,
          val_fn=None, log_every=None) -> TrainResult:
    """Shuffle, step ADAM per batch, validate per epoch, restore the best weights.

    ``val_fn(model, epoch)`` may replace the validation loss (used in tests).
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise ContractError("train and validation splits must be non-empty")
    rng = np.random.default_rng(seed)
    opt = Adam(model.store, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    stopper = EarlyStopping(cfg.patience)
    val_fn = val_fn or (lambda m, e: mean_loss(m, val_split))
    curve = [(0, math.nan, val_fn(model, 0))]
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_split))
        run, n = 0.0, 0
        for bi, b in enumerate(train_split.batches(cfg.batch_size, order)):
            loss = model.loss(b)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise DivergenceError(f"loss became {lv} at epoch {epoch}, batch {bi}")
            nx.reverse_accumulate(loss, model.store)
            opt.step()
            run += lv * len(b)
            n += len(b)
        val = val_fn(model, epoch)
        if not math.isfinite(val):
            raise DivergenceError(f"validation loss became {val} at epoch {epoch}")
        curve.append((epoch, run / n, val))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.5f val %.5f", epoch, run / n, val)
        if stopper.update(epoch, val, model.store.snapshot()):
            break
    model.store.load(stopper.best_state)
    return TrainResult(curve, stopper.best_epoch, stopper.best_loss, epoch)


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    rmse: float
    mae: float
    per_seed: list = field(default_factory=list)  # [(seed, rmse, mae)]

    @classmethod
    def aggregate(cls, runs):
        """Arithmetic mean over per-seed (seed, rmse, mae) tuples."""
        runs = list(runs)
        return cls(float(np.mean([r for _, r, _ in runs])), float(np.mean([m for _, _, m in runs])), runs)


def error_metrics(pred, target):
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    if err.size == 0:
        raise ContractError("cannot score an empty prediction set")
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err)))


def predict_denormalized(model: STMFGCRN, split: Split, stats: MinMax, batch_size=256):
    preds, targets = [], []
    for b in split.batches(batch_size):
        preds.append(stats.invert(model.predict(b)))
        targets.append(stats.invert(b.target))
    return np.concatenate(preds), np.concatenate(targets)


def evaluate(model: STMFGCRN, split: Split, stats: MinMax, batch_size=256) -> EvalReport:
    """RMSE and MAE over all (sample, area, channel) in original units."""
    if len(split) == 0:
        raise ContractError("empty test split")
    pred, target = predict_denormalized(model, split, stats, batch_size)
    rmse, mae = error_metrics(pred, target)
    return EvalReport(rmse, mae)


# ----------------------------------------------------------------------------
# heuristic baselines

BASELINES = ("trend_mean", "period_mean", "closeness_mean", "last_repeat")


def heuristic_baseline(kind: str, batch: Batch) -> np.ndarray:
    """Prediction from the CPT windows alone (windows are most-recent first)."""
    if kind == "trend_mean":
        return batch.xq.mean(axis=1)
    if kind == "period_mean":
        return batch.xp.mean(axis=1)
    if kind == "closeness_mean":
        return batch.xc.mean(axis=1)
    if kind == "last_repeat":
        return batch.xc[:, 0]
    raise ContractError(f"unknown baseline {kind!r}")


def evaluate_baselines(raw_values, te, times, cpt: CPTConfig, kinds=BASELINES):
    """Score every baseline on raw (un-normalised) demand."""
    batch = gather_batch(raw_values, te, times, cpt)
    out = {}
    for k in kinds:
        rmse, mae = error_metrics(heuristic_baseline(k, batch), batch.target)
        out[k] = EvalReport(rmse, mae)
    return out
