"""SGD with Nesterov momentum, step-decay schedule, and the training loop."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from cdgc.autodiff import Tape, Variable, backward, value
from cdgc.errors import TrainingError
from cdgc.network.config import TrainConfig
from cdgc.network.layers import softmax, softmax_cross_entropy
from cdgc.network.model import Model

LOG_FIELDS = ("epoch", "loss", "accuracy", "lr", "seconds")


class SGD:
    """``v <- mu v + g``; step ``g + mu v`` (Nesterov) or ``v``."""

    def __init__(self, params: list[Variable], lr: float, momentum: float = 0.9, nesterov: bool = True):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.nesterov = nesterov
        self.velocity: dict[int, np.ndarray] = {}

    def step(self, grads) -> None:
        for p in self.params:
            g = grads[p]
            v = self.velocity.get(id(p))
            if v is None:
                v = self.velocity[id(p)] = g.copy()
            else:
                v *= self.momentum
                v += g
            update = g + self.momentum * v if self.nesterov else v
            p.data -= self.lr * update


@dataclass
class EpochLog:
    epoch: int
    loss: float
    accuracy: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    rows: list[EpochLog] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in self.rows:
            w.writerow([r.epoch, repr(r.loss), repr(r.accuracy), repr(r.lr), f"{r.seconds:.6f}"])
        return buf.getvalue()

    def epochs_to_target(self, target: float) -> int | None:
        """First (1-based) epoch whose train accuracy reaches ``target``."""
        for r in self.rows:
            if r.accuracy >= target:
                return r.epoch
        return None

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(model: Model, dataset, cfg: TrainConfig, callback=None) -> TrainLog:
    """Train in place on ``dataset = (x, labels)``; ``x`` is ``(N, C, T, V)``.

    Accuracy is the running train accuracy of each epoch (predictions made
    before the step on every batch). ``callback(row)`` is called after
    each epoch; returning ``True`` stops training early.
    """
    x, y = dataset
    x = model.check_input(x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("dataset is empty")
    if len(y) != x.shape[0]:
        raise ValueError(f"{x.shape[0]} samples but {len(y)} labels")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise ValueError(f"labels must lie in [0, {model.config.num_classes})")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = SGD(params, cfg.learning_rate, cfg.momentum, cfg.nesterov)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        total_loss = 0.0
        correct = 0
        t0 = time.perf_counter()
        for b, idx in enumerate(batches(len(y), cfg.batch_size, rng)):
            with Tape() as tape:
                logits = model.logits(x[idx], train=True)
                loss = softmax_cross_entropy(logits, y[idx])
            lv = float(value(loss))
            if not math.isfinite(lv):
                raise TrainingError(f"non-finite loss {lv} at epoch {epoch + 1}, batch {b + 1}",
                                    epoch + 1, b + 1)
            grads = backward(loss, tape, params)
            opt.step(grads)
            model.project()
            total_loss += lv * len(idx)
            correct += int((value(logits).argmax(axis=1) == y[idx]).sum())
        seconds = time.perf_counter() - t0
        row = EpochLog(epoch + 1, total_loss / len(y), correct / len(y), opt.lr, seconds)
        log.rows.append(row)
        if callback is not None and callback(row):
            break
    return log


def predict_proba(model: Model, x, batch_size: int = 64) -> np.ndarray:
    x = model.check_input(x)
    out = [softmax(value(model.logits(x[s:s + batch_size], train=False)))
           for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(model: Model, dataset, batch_size: int = 64) -> float:
    x, y = dataset
    pred = predict_proba(model, x, batch_size).argmax(axis=1)
    return float((pred == np.asarray(y)).mean())
