"""Supervised training with cross-entropy loss and seeded shuffling."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingDiverged, UsageError
from .model import Model
from .tensor import Tensor, add, backward, log_softmax, pick, scalar_mul


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 8
    optimizer: str = "adam"  # or "sgd"
    seed: int = 0
    sequence_length: int | None = None  # truncate inputs to the last n frames

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], stabilized through log-sum-exp."""
    k = logits.data.size
    if not 0 <= label < k:
        raise UsageError(f"label {label} out of range for {k} classes")
    return scalar_mul(pick(log_softmax(logits), label), -1.0)


def zero_grad(model: Model) -> None:
    for p in model.params.values():
        p.grad = None


class Sgd:
    def __init__(self, learning_rate: float):
        self.lr = learning_rate

    def step(self, params: dict[str, Tensor]) -> None:
        for p in params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam:
    """Adam with beta1=0.9, beta2=0.999, eps=1e-8 and bias correction."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * p.grad if m is None else b1 * m + (1 - b1) * p.grad
            v = (1 - b2) * p.grad**2 if v is None else b2 * v + (1 - b2) * p.grad**2
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate)


def fit(
    model: Model,
    train_set,
    config: TrainConfig,
    log_path=None,
) -> tuple[Model, list[float]]:
    """Train in place; returns the model and the per-epoch mean loss.

    Deterministic given the model's initial parameters, the config seed and
    the data. A non-finite loss aborts with the epoch, batch and learning
    rate in the error.
    """
    if not train_set:
        raise ConfigError("fit needs a nonempty training set")
    from .data import truncate_sequence  # local import to avoid a cycle

    if config.sequence_length is not None:
        train_set = [truncate_sequence(s, config.sequence_length) for s in train_set]

    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(config)
    trajectory: list[float] = []
    log_rows: list[tuple[int, float, float]] = []

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for b in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[b : b + config.batch_size]]
            losses = [cross_entropy(model.forward(seq), seq.label) for seq in batch]
            total = losses[0]
            for extra in losses[1:]:
                total = add(total, extra)
            loss = scalar_mul(total, 1.0 / len(batch))
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {b // config.batch_size} "
                    f"(lr={config.learning_rate})"
                )
            zero_grad(model)
            backward(loss)
            optimizer.step(model.params)
            epoch_loss += value * len(batch)
        mean_loss = epoch_loss / len(order)
        trajectory.append(mean_loss)
        log_rows.append((epoch, mean_loss, time.perf_counter() - t0))

    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss", "wall_time_s"])
            for row in log_rows:
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.3f}"])
    return model, trajectory


def evaluate(model: Model, test_set) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if not test_set:
        raise ConfigError("evaluate needs a nonempty test set")
    correct = 0
    for seq in test_set:
        logits = model.forward(seq)
        if int(np.argmax(logits.data)) == seq.label:
            correct += 1
    return correct / len(test_set)
