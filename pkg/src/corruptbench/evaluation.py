"""Frozen-feature evaluation: weighted KNN and a linear probe.

Both protocols consume EmbeddingSets; all scoring math runs in float64 and
ties resolve to the smaller class id, so results are reproducible to the bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import EmbeddingSet, class_histogram, l2_normalize
from .errors import ConfigError, DataError, NumericError
from .rngs import fisher_yates, make_rng

log = logging.getLogger(__name__)

_QUERY_CHUNK = 2048


@dataclass(frozen=True)
class KnnConfig:
    """Weighted KNN settings: K neighbors, exp(sim/tau) vote weights."""

    k: int = 50
    tau: float = 0.07

    def __post_init__(self):
        if not isinstance(self.k, int) or isinstance(self.k, bool) or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ConfigError(f"tau must be positive and finite, got {self.tau}")

    def to_dict(self) -> dict:
        return {"k": self.k, "tau": self.tau}


@dataclass(frozen=True)
class AccuracyResult:
    """Top-1 accuracy plus per-class recall over an evaluation split."""

    top1: float
    per_class: np.ndarray
    n_eval: int

    def __post_init__(self):
        arr = np.asarray(self.per_class, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError("per-class accuracy must be a vector")
        if len(arr) and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DataError("per-class accuracy outside [0, 1]")
        if not 0.0 <= self.top1 <= 1.0:
            raise DataError(f"top-1 accuracy outside [0, 1]: {self.top1}")
        if self.n_eval < 1:
            raise DataError(f"n_eval must be >= 1, got {self.n_eval}")
        out = np.ascontiguousarray(arr)
        out.flags.writeable = False
        object.__setattr__(self, "per_class", out)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "per_class": [float(v) for v in self.per_class],
            "n_eval": self.n_eval,
        }


def accuracy_result(
    predictions: np.ndarray, labels: np.ndarray, num_classes: int
) -> AccuracyResult:
    """Aggregate predictions into top-1 and per-class recall.

    Classes absent from the evaluation split report 0.0 recall.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(labels, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise DataError("predictions and labels must be equal-length vectors")
    if len(preds) == 0:
        raise DataError("cannot score an empty evaluation split")
    hits = preds == truth
    totals = class_histogram(truth, num_classes)
    correct = np.bincount(truth[hits], minlength=num_classes)
    with np.errstate(invalid="ignore"):
        per_class = np.where(totals > 0, correct / np.maximum(totals, 1), 0.0)
    return AccuracyResult(float(hits.mean()), per_class, len(preds))


def _as_normalized(emb: EmbeddingSet) -> EmbeddingSet:
    return emb if emb.normalized else l2_normalize(emb)


def knn_predict(
    bank: EmbeddingSet, queries: EmbeddingSet, cfg: KnnConfig | None = None
) -> tuple[np.ndarray, AccuracyResult]:
    """Classify queries by exponentially weighted cosine KNN votes.

    Each query's K most-similar bank rows vote exp(sim/tau) for their label;
    the highest-scoring class wins, smaller class id on exact ties.
    """
    cfg = cfg or KnnConfig()
    if len(bank) == 0:
        raise DataError("empty neighbor bank")
    if len(queries) == 0:
        raise DataError("no query points")
    if bank.dim != queries.dim:
        raise DataError(f"dimension mismatch: bank D={bank.dim}, queries D={queries.dim}")
    if cfg.k > len(bank):
        raise ConfigError(f"k={cfg.k} exceeds bank size {len(bank)}")
    num_classes = max(bank.num_classes, queries.num_classes)
    bank_n = _as_normalized(bank).features.astype(np.float64)
    query_n = _as_normalized(queries).features.astype(np.float64)
    bank_labels = bank.labels
    preds = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), _QUERY_CHUNK):
        block = query_n[start : start + _QUERY_CHUNK]
        sims = block @ bank_n.T
        if cfg.k < sims.shape[1]:
            top = np.argpartition(sims, -cfg.k, axis=1)[:, -cfg.k :]
        else:
            top = np.broadcast_to(np.arange(sims.shape[1]), sims.shape).copy()
        rows = np.arange(len(block))[:, None]
        weights = np.exp(sims[rows, top] / cfg.tau)
        votes = np.zeros((len(block), num_classes), dtype=np.float64)
        labels_top = bank_labels[top]
        for c in range(num_classes):
            votes[:, c] = np.where(labels_top == c, weights, 0.0).sum(axis=1)
        preds[start : start + len(block)] = votes.argmax(axis=1)
    return preds, accuracy_result(preds, queries.labels, num_classes)


@dataclass(frozen=True)
class LinearProbeConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class LinearModel:
    """A softmax classifier head: logits = x @ weights + bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise DataError(
                f"inconsistent linear model shapes {w.shape} / {b.shape}"
            )
        for arr, name in ((w, "weights"), (b, "bias")):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"linear model {name} contain NaN or Inf")
        w = np.ascontiguousarray(w)
        b = np.ascontiguousarray(b)
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0]:
            raise DataError(
                f"feature dim {x.shape} does not match model D={self.weights.shape[0]}"
            )
        return (x @ self.weights + self.bias).argmax(axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def train_linear_probe(
    train: EmbeddingSet, cfg: LinearProbeConfig | None = None
) -> tuple[LinearModel, list[float]]:
    """Fit a softmax head on frozen features with minibatch SGD.

    Weights start at zero; each epoch shuffles with the seeded stream.
    Returns the model plus mean cross-entropy per epoch. Logs a warning if
    the loss ends higher than it started.
    """
    cfg = cfg or LinearProbeConfig()
    n = len(train)
    if n == 0:
        raise DataError("cannot fit a probe on an empty embedding set")
    num_classes = train.num_classes
    if num_classes < 2:
        raise ConfigError(f"need >= 2 classes to fit a probe, got {num_classes}")
    x = train.features.astype(np.float64)
    y = train.labels
    d = x.shape[1]
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    rng = make_rng([cfg.seed])
    losses = []
    for _ in range(cfg.epochs):
        order = fisher_yates(n, rng)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            logits = xb @ w + b
            probs = _softmax(logits)
            picked = probs[np.arange(len(idx)), yb]
            total += float(-np.log(np.maximum(picked, 1e-300)).sum())
            grad = probs
            grad[np.arange(len(idx)), yb] -= 1.0
            grad /= len(idx)
            gw = xb.T @ grad + cfg.weight_decay * w
            gb = grad.sum(axis=0)
            w = w - cfg.learning_rate * gw
            b = b - cfg.learning_rate * gb
        losses.append(total / n)
    if losses[-1] > losses[0]:
        log.warning(
            "linear probe diverged: epoch loss rose from %.4f to %.4f",
            losses[0],
            losses[-1],
        )
    return LinearModel(w, b), losses


def evaluate_linear(model: LinearModel, test: EmbeddingSet) -> AccuracyResult:
    """Score a fitted linear head on held-out embeddings."""
    if len(test) == 0:
        raise DataError("empty evaluation split")
    preds = model.predict(test.features)
    num_classes = max(model.bias.shape[0], test.num_classes)
    return accuracy_result(preds, test.labels, num_classes)


def relative_drop(acc_original: float, acc_corrupted: float) -> float:
    """Relative accuracy drop (original - corrupted) / original.

    Negative when corruption helps. Undefined at zero original accuracy.
    """
    for name, value in (("original", acc_original), ("corrupted", acc_corrupted)):
        if not np.isfinite(value):
            raise NumericError(f"{name} accuracy is not finite: {value}")
    if acc_original <= 0.0:
        raise NumericError(
            f"relative drop undefined for original accuracy {acc_original}"
        )
    return (acc_original - acc_corrupted) / acc_original


def format_delta_percent(delta: float) -> str:
    """Render a relative drop as a percentage with one decimal, e.g. 2.4."""
    return f"{delta * 100.0:.1f}"
