"""SGD training loop with momentum and the step learning-rate schedule.

The learning rate divides by 10 every `lr_step` iterations.  Updates are
v <- momentum * v - lr * g;  w <- w + v, with L2 weight decay added to
the gradient of conv and fc weights (BN parameters and biases decay
free).  Given a seed the whole run is deterministic: batch order,
dropout masks and every kernel reduction have fixed order, so training
logs are bit-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError
from .kernels import softmax_cross_entropy
from .layers import BatchNorm
from .network import NetworkGraph, calibrate_running_stats
from .rng import Stream, derive_seed

DECAYED_KEYS = ("kernel", "weight")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    lr_step: int = 3000
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    iters: int = 500
    seed: int = 0
    freeze_bn: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lr_step <= 0:
            raise ValueError("lr_step must be positive")


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Exact stepped learning rate: lr / 10^(iteration // lr_step)."""
    return cfg.lr / (10.0 ** (iteration // cfg.lr_step))


@dataclass
class LogRecord:
    iteration: int
    lr: float
    loss: float
    accuracy: float

    def line(self) -> str:
        return (f"iter {self.iteration} lr {self.lr!r} "
                f"loss {self.loss!r} acc {self.accuracy!r}")


@dataclass
class _Batcher:
    count: int
    batch: int
    stream: Stream
    order: list = field(default_factory=list)

    def next_indices(self):
        if len(self.order) < self.batch:
            self.order.extend(self.stream.shuffled(self.count).tolist())
        take, self.order = self.order[:self.batch], self.order[self.batch:]
        return np.asarray(take)


def sgd_step(net: NetworkGraph, velocities: dict, cfg: TrainConfig,
             lr: float) -> None:
    """One in-place momentum update from the gradients stored on layers."""
    for path, unit, key in net.named_parameters():
        g = unit.g.get(key)
        if g is None:
            continue
        g = g.astype(np.float32, copy=False)
        if cfg.weight_decay and key in DECAYED_KEYS:
            g = g + cfg.weight_decay * unit.p[key]
        v = velocities.setdefault(path, np.zeros_like(unit.p[key]))
        v *= cfg.momentum
        v -= lr * g
        unit.p[key] += v


def train(net: NetworkGraph, clips: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig, stop_at_accuracy: float | None = None,
          log=None, calibrate: bool = True) -> list:
    """Run SGD; returns the per-iteration log.

    `stop_at_accuracy` ends the run early once the training set reaches
    that accuracy.  After the last iteration the batch-norm running
    statistics are recalibrated on (up to 64 clips of) the training set
    so that inference mode matches the trained behaviour; tiny datasets
    otherwise leave inference badly served by momentum-lagged statistics.
    """
    clips = np.asarray(clips, dtype=np.float32)
    labels = np.asarray(labels)
    if clips.ndim != 5:
        raise ShapeError(f"training clips must be 5-D, got {clips.shape}")
    if labels.shape != (clips.shape[0],):
        raise ShapeError("labels must be one per clip")
    if cfg.freeze_bn:
        for unit in net.units():
            if isinstance(unit, BatchNorm) and unit.name != "stem.bn":
                unit.frozen = True
    batcher = _Batcher(clips.shape[0], min(cfg.batch_size, clips.shape[0]),
                       Stream(derive_seed(cfg.seed, "batch-order")))
    velocities = {}
    records = []
    for it in range(cfg.iters):
        lr = lr_at(cfg, it)
        idx = batcher.next_indices()
        logits = net.forward(clips[idx], train=True)
        loss, grad = softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at iteration {it}: "
                                 f"loss={loss}")
        acc = float(np.mean(np.argmax(logits, axis=1) == labels[idx]))
        net.backward(grad)
        sgd_step(net, velocities, cfg, lr)
        rec = LogRecord(it, lr, loss, acc)
        records.append(rec)
        if log is not None:
            log(rec.line())
        if stop_at_accuracy is not None and acc >= stop_at_accuracy:
            if train_accuracy(net, clips, labels) >= stop_at_accuracy:
                break
    if calibrate:
        calibrate_running_stats(net, clips[:64])
    return records


def train_accuracy(net: NetworkGraph, clips, labels, batch: int = 64) -> float:
    """Accuracy over the training set using batch statistics (the same
    normalization regime the optimizer sees)."""
    hits = 0
    for lo in range(0, clips.shape[0], batch):
        logits = net.forward(clips[lo:lo + batch], train=True)
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[lo:lo + batch]))
    return hits / clips.shape[0]


def evaluate(net: NetworkGraph, clips: np.ndarray, labels: np.ndarray,
             batch: int = 32) -> float:
    """Inference-mode accuracy over a labelled clip set."""
    hits = 0
    for lo in range(0, clips.shape[0], batch):
        logits = net.forward(clips[lo:lo + batch], train=False)
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[lo:lo + batch]))
    return hits / clips.shape[0]
