"""MSE-over-time training with RMSprop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ArgumentError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    dropout_prob: float = 0.4
    rmsprop_decay: float = 0.9
    epsilon: float = 1e-8
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ArgumentError("learning_rate >= 0, batch_size >= 1 and epochs >= 1 required")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ArgumentError(f"dropout_prob {self.dropout_prob} outside [0, 1)")
        if not 0.0 < self.rmsprop_decay < 1.0 or self.epsilon <= 0:
            raise ArgumentError("rmsprop_decay must lie in (0, 1) and epsilon be positive")

    def as_dict(self):
        return asdict(self)


def mse_loss(estimates, targets):
    """Mean squared error over all frames and batch items, and its gradient."""
    est = np.asarray(estimates, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if est.shape != tgt.shape:
        raise ArgumentError(f"estimate shape {est.shape} != target shape {tgt.shape}")
    diff = est - tgt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


class RMSprop:
    """``v <- rho v + (1 - rho) g^2``, ``theta <- theta - lr g / (sqrt(v) + eps)``."""

    def __init__(self, params, lr=1e-3, rho=0.9, eps=1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.state = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for name, p in params.items():
            rmsprop_step(p, grads[name], self.state[name], self.lr, self.rho, self.eps)


def rmsprop_step(param, grad, sq_avg, lr=1e-3, rho=0.9, eps=1e-8):
    """In-place RMSprop update of ``param`` and its running square average."""
    sq_avg *= rho
    sq_avg += (1.0 - rho) * grad * grad
    param -= lr * grad / (np.sqrt(sq_avg) + eps)
    return param


def _batches(lengths, batch_size, rng):
    """Shuffled mini-batches of indices whose inputs share a length."""
    order = rng.permutation(len(lengths))
    buckets = {}
    for i in order:
        buckets.setdefault(lengths[i], []).append(int(i))
    batches = []
    for key in sorted(buckets):
        idx = buckets[key]
        batches.extend(idx[k : k + batch_size] for k in range(0, len(idx), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def evaluate_mse(model, data, batch_size=64):
    """Eval-mode MSE over every output frame of ``data``."""
    if not data:
        return float("nan")
    total, count = 0.0, 0
    lengths = [x.shape[1] for x, _ in data]
    for key in sorted(set(lengths)):
        idx = [i for i, n in enumerate(lengths) if n == key]
        for k in range(0, len(idx), batch_size):
            chunk = idx[k : k + batch_size]
            x = np.stack([data[i][0] for i in chunk])
            y = np.stack([data[i][1] for i in chunk])
            diff = model.forward(x, train=False) - y
            total += float(np.sum(diff * diff))
            count += diff.size
    return total / count


@dataclass
class TrainResult:
    model: object
    trace: list
    best_epoch: int


def train(model, train_data, val_data, config: TrainConfig, progress=None) -> TrainResult:
    """Fit ``model`` on ``(spectrogram, target)`` pairs.

    Each epoch reshuffles with a stream derived from ``(seed, epoch)`` and
    draws dropout masks from ``(seed, epoch, batch)``, so runs repeat
    exactly. The parameters with the lowest validation MSE (training MSE
    when there is no validation data) are restored at the end.
    """
    if not train_data:
        raise ArgumentError("training set is empty")
    for x, y in train_data:
        if model.n_outputs(x.shape[1]) != len(y):
            raise ArgumentError("target length does not match the model's output frame count")
    model.dropout.p = config.dropout_prob
    opt = RMSprop(model.params, config.learning_rate, config.rmsprop_decay, config.epsilon)
    lengths = [x.shape[1] for x, _ in train_data]
    trace = []
    best = (np.inf, 0, model.state_dict())
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        total, count = 0.0, 0
        for b_idx, batch in enumerate(_batches(lengths, config.batch_size, rng)):
            x = np.stack([train_data[i][0] for i in batch])
            y = np.stack([train_data[i][1] for i in batch])
            drop_rng = np.random.default_rng([config.seed, epoch, b_idx, 1])
            est = model.forward(x, train=True, rng=drop_rng)
            loss, grad = mse_loss(est, y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            model.zero_grad()
            model.backward(grad, input_grad=False)
            opt.step(model.params, model.grads)
            total += loss * y.size
            count += y.size
        train_mse = total / count
        val_mse = evaluate_mse(model, val_data) if val_data else float("nan")
        trace.append((epoch, train_mse, val_mse))
        score = val_mse if val_data else train_mse
        if score < best[0]:
            best = (score, epoch, model.state_dict())
        log.info("epoch %d train_mse %.6f val_mse %.6f", epoch, train_mse, val_mse)
        if progress is not None:
            progress(epoch, train_mse, val_mse)
    model.load_state_dict(best[2])
    return TrainResult(model, trace, best[1])


def write_loss_trace(path, trace):
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in trace:
            w.writerow([epoch, repr(float(tr)), repr(float(va))])


def read_loss_trace(path):
    with open(Path(path), newline="") as f:
        return [(int(r["epoch"]), float(r["train_mse"]), float(r["val_mse"])) for r in csv.DictReader(f)]
