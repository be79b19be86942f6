"""Mini-batch Adam training with dev-set early stopping, and prediction."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SequenceSet
from .evaluate import metrics_from_labels
from .features import AUGMENT_CUTOFFS, truncate_at
from .nn.checkpoint import AdamState
from .nn.layers import NumericalDivergence
from .nn.model import Batch, Dims, ModelParams, VARIANTS, batch_from_sequences, forward, init_params, \
    loss_and_backward

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "Final"
    dims: Dims | None = None
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    augment: bool = False
    precision: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def adam_step(params: ModelParams, state: AdamState, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of ``params`` from ``params.grads`` (in place)."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.tensors.items():
        g = params.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_acc: float
    dev_macro_f1: float
    seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_acc:.6f}\t{self.dev_macro_f1:.6f}\t{self.seconds:.2f}"


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False

    def log_text(self) -> str:
        header = "epoch\ttrain_loss\tdev_acc\tdev_macro_f1\tseconds"
        return "\n".join([header] + [r.line() for r in self.log]) + "\n"


def augment_target(feats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Truncate the target (last) season of each sequence at a random cutoff."""
    out = feats.copy()
    for b in range(len(out)):
        cutoff = AUGMENT_CUTOFFS[rng.integers(len(AUGMENT_CUTOFFS))]
        out[b, -1] = truncate_at(out[b, -1], cutoff)
    return out


def run_epoch(params: ModelParams, adam: AdamState, data: SequenceSet, config: TrainConfig, epoch: int) -> float:
    """One pass over ``data`` in a (seed, epoch)-determined order; returns the mean loss."""
    order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
    total, count = 0.0, 0
    for k, start in enumerate(range(0, len(order), config.batch_size)):
        rows = order[start:start + config.batch_size]
        batch = batch_from_sequences(data, rows, dtype=config.dtype)
        if config.augment:
            batch.feats = augment_target(batch.feats, np.random.default_rng([config.seed, epoch, k]))
        loss = loss_and_backward(params, batch)
        if not np.isfinite(loss):
            raise NumericalDivergence(f"loss is {loss} at epoch {epoch}, batch {k}")
        adam_step(params, adam, config.lr)
        total += loss * len(rows)
        count += len(rows)
    return total / count


def predict(params: ModelParams, data: SequenceSet, cutoff_day: float = 365, batch_size: int = 256) -> np.ndarray:
    """Fine-level class probabilities, truncating the target season at ``cutoff_day``."""
    if data.V != params.dims.V:
        raise ValueError(f"sequences have V={data.V}, model expects V={params.dims.V}")
    out = np.empty((len(data), params.dims.V), dtype=np.float64)
    for start in range(0, len(data), batch_size):
        rows = np.arange(start, min(start + batch_size, len(data)))
        batch = batch_from_sequences(data, rows, dtype=params.dtype)
        if cutoff_day < 365:
            batch.feats[:, -1] = truncate_at(batch.feats[:, -1], cutoff_day)
        out[rows] = forward(params, batch).probs
    return out


def _dev_scores(params: ModelParams, dev: SequenceSet) -> tuple[float, float]:
    probs = predict(params, dev)
    rep = metrics_from_labels(np.argmax(probs, axis=1), dev.targets, params.dims.V)
    return rep.accuracy, rep.macro_f1


def train(train_set: SequenceSet, dev_set: SequenceSet, config: TrainConfig,
          params: ModelParams | None = None, adam: AdamState | None = None,
          first_epoch: int = 1) -> TrainResult:
    """Train until ``patience`` epochs pass without a better dev accuracy.

    Returns the parameters (and optimizer state) of the best dev epoch. A
    diverging loss stops training and keeps the last good checkpoint. Pass
    the saved ``params``/``adam`` and ``first_epoch`` to resume a run; batch
    order depends only on (seed, epoch), so the resumed run replays the same
    updates.
    """
    dims = config.dims or Dims(V=train_set.V)
    if dims.V != train_set.V:
        raise ValueError("config dims and data disagree on V")
    params = params or init_params(config.variant, dims, config.seed, dtype=config.dtype)
    adam = adam or AdamState.zeros_like(params)
    result = TrainResult(params.copy(), adam.copy())
    best_acc = -np.inf
    stale = 0
    for epoch in range(first_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = run_epoch(params, adam, train_set, config, epoch)
            dev_acc, dev_f1 = _dev_scores(params, dev_set)
        except NumericalDivergence as exc:
            log.warning("training diverged: %s", exc)
            result.diverged = True
            break
        rec = EpochRecord(epoch, loss, dev_acc, dev_f1, time.perf_counter() - t0)
        result.log.append(rec)
        log.info("%s", rec.line())
        if dev_acc > best_acc:
            best_acc = dev_acc
            stale = 0
            result.params, result.adam, result.best_epoch = params.copy(), adam.copy(), epoch
        else:
            stale += 1
        if stale >= config.patience:
            break
    return result


def with_variant(config: TrainConfig, variant: str, **changes) -> TrainConfig:
    return replace(config, variant=variant, **changes)
