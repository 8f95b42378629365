"""Training and evaluation harness.

Per-example SGD over shuffled epochs, full-pass train/validation metrics
after each epoch, and a confusion-matrix evaluation report. Everything is
deterministic given (config, data, seed).
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass

import numpy as np

from .nn.model import (ModelParams, loss_and_gradients,
                       model_forward, cross_entropy, sgd_step, N_CLASSES)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "EvalReport",
    "train",
    "evaluate",
    "chance_baseline",
    "majority_baseline",
    "plateau_detector",
    "curves_to_csv",
    "report_to_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.01
    hidden_size: int = 16
    mode: str = "uni"
    feature: str = "raw"
    duration_s: float = 1.0
    seed: int = 7
    shuffle: bool = True
    merge: str = "concat"
    pooling: str = "last"
    keep_best_validation: bool = False
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (C, C), rows = true class, cols = predicted
    precision: tuple  # per class; None where undefined (no predictions)
    recall: tuple  # per class; None where undefined (class absent)
    n_examples: int


def _predict(model: ModelParams, xs) -> tuple[int, np.ndarray]:
    probs, _ = model_forward(model, xs)
    # ties break toward the lowest class index
    return int(np.argmax(probs)), probs


def _dataset_metrics(model: ModelParams, examples) -> tuple[float, float]:
    if not examples:
        return float("nan"), float("nan")
    total_loss = 0.0
    correct = 0
    for xs, label in examples:
        pred, probs = _predict(model, xs)
        total_loss += cross_entropy(probs, int(label))
        correct += pred == int(label)
    return total_loss / len(examples), correct / len(examples)


def train(model: ModelParams, train_set, val_set, cfg: TrainConfig
          ) -> tuple[ModelParams, list[EpochRecord]]:
    """Per-example SGD; metrics are recorded after each full epoch.

    Returns end-of-training parameters, or the best-validation snapshot
    when cfg.keep_best_validation is set.
    """
    if not train_set:
        raise ValueError("training set is empty")
    from .nn.model import clip_gradients
    rng = np.random.default_rng(cfg.seed)
    records: list[EpochRecord] = []
    best = (float("inf"), model)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set)) if cfg.shuffle \
            else np.arange(len(train_set))
        for idx in order:
            xs, label = train_set[idx]
            _, _, grads = loss_and_gradients(model, xs, int(label))
            if cfg.max_grad_norm is not None:
                grads = clip_gradients(grads, cfg.max_grad_norm)
            model = sgd_step(model, grads, cfg.lr)
        train_loss, train_acc = _dataset_metrics(model, train_set)
        val_loss, val_acc = _dataset_metrics(model, val_set)
        records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        log.info("epoch %d: train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                 epoch, train_loss, train_acc, val_loss, val_acc)
        if val_set and val_loss < best[0]:
            best = (val_loss, model)
    return (best[1] if cfg.keep_best_validation and val_set else model), records


def evaluate(model: ModelParams, test_set, n_classes: int = N_CLASSES) -> EvalReport:
    """Argmax predictions, confusion matrix and per-class metrics."""
    if not test_set:
        raise ValueError("evaluation set is empty")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for xs, label in test_set:
        pred, _ = _predict(model, xs)
        confusion[int(label), pred] += 1
    n = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / n
    precision = tuple(
        float(confusion[c, c]) / col if (col := int(confusion[:, c].sum())) else None
        for c in range(n_classes))
    recall = tuple(
        float(confusion[c, c]) / row if (row := int(confusion[c].sum())) else None
        for c in range(n_classes))
    return EvalReport(accuracy, confusion, precision, recall, n)


def chance_baseline(n_classes: int) -> float:
    """Accuracy of uniform random guessing: 1/8 = 12.5% for this task."""
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    return 1.0 / n_classes


def majority_baseline(labels) -> float:
    """Accuracy of always predicting the modal class."""
    labels = [int(l) for l in labels]
    if not labels:
        raise ValueError("cannot take a majority baseline of an empty subset")
    counts = np.bincount(labels)
    return float(counts.max()) / len(labels)


def plateau_detector(records: list[EpochRecord], patience: int,
                     min_improvement: float = 1e-4) -> int | None:
    """First epoch after which validation loss stops improving.

    Returns the epoch index whose loss the next `patience` epochs fail to
    beat by more than min_improvement; None if the loss keeps improving.
    This is a diagnostic, not an early-stopping hook.
    """
    if not records:
        raise ValueError("no epoch records")
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    losses = [r.val_loss for r in records]
    for i in range(len(losses) - patience):
        best_after = min(losses[i + 1:i + 1 + patience])
        if best_after > losses[i] - min_improvement:
            return records[i].epoch
    return None


def curves_to_csv(records: list[EpochRecord]) -> str:
    out = io.StringIO()
    out.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
    for r in records:
        out.write(f"{r.epoch},{r.train_loss!r},{r.train_acc!r},"
                  f"{r.val_loss!r},{r.val_acc!r}\n")
    return out.getvalue()


def report_to_csv(report: EvalReport, class_names=None) -> str:
    n = report.confusion.shape[0]
    names = class_names or [str(c) for c in range(n)]
    out = io.StringIO()
    out.write(f"n_examples,{report.n_examples}\n")
    out.write(f"accuracy,{report.accuracy!r}\n")
    out.write("confusion_true\\pred," + ",".join(names) + "\n")
    for c in range(n):
        out.write(names[c] + "," + ",".join(str(v) for v in report.confusion[c]) + "\n")
    fmt = lambda v: "" if v is None else repr(v)
    out.write("precision," + ",".join(fmt(p) for p in report.precision) + "\n")
    out.write("recall," + ",".join(fmt(r) for r in report.recall) + "\n")
    return out.getvalue()
