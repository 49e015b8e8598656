"""Per-identity (one-vs-rest) logistic regression unary potential."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit, softmax

from .corpus import Instance
from .errors import ConfigError, DimensionError, DivergenceError, EvaluationError, TrainingError

REGIMES = ("visible", "blur", "black", "white")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 150
    batch_size: int = 128
    l2_lambda: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be non-negative")


@dataclass(frozen=True, eq=False)
class UnaryModel:
    labels: tuple
    weights: np.ndarray  # (K, D)
    biases: np.ndarray  # (K,)
    l2_lambda: float = 1e-4
    trained_on: str = "visible"

    @property
    def dim(self):
        return self.weights.shape[1]

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "weights": self.weights.ravel().tolist(),
            "biases": self.biases.tolist(),
            "l2_lambda": self.l2_lambda,
            "trained_on": self.trained_on,
        }

    @classmethod
    def from_dict(cls, data):
        labels = tuple(data["labels"])
        w = np.asarray(data["weights"], dtype=float)
        if len(labels) == 0 or w.size % len(labels):
            raise ConfigError("weights length is not a multiple of the label count")
        return cls(labels, w.reshape(len(labels), -1), np.asarray(data["biases"], dtype=float),
                   float(data["l2_lambda"]), str(data["trained_on"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def unary_loss_and_grad(weights, biases, X, Y, l2_lambda):
    """Mean summed binary cross-entropy over K one-vs-rest heads, plus L2 on weights.

    ``Y`` is an (N, K) 0/1 indicator matrix.
    """
    n = X.shape[0]
    z = X @ weights.T + biases
    # -[y log s(z) + (1-y) log s(-z)]
    loss = -(Y * log_expit(z) + (1.0 - Y) * log_expit(-z)).sum() / n
    loss += 0.5 * l2_lambda * np.sum(weights * weights)
    r = (expit(z) - Y) / n
    grad_w = r.T @ X + l2_lambda * weights
    grad_b = r.sum(axis=0)
    return loss, grad_w, grad_b


def _features(x):
    if isinstance(x, Instance):
        return x.features
    return np.asarray(x, dtype=float)


def train_unary(X, labels: Sequence, config: TrainConfig = TrainConfig(), trained_on="visible",
                label_set: Sequence | None = None, history: list | None = None) -> UnaryModel:
    """Fit K one-vs-rest logistic regressors by mini-batch gradient descent.

    ``X`` is (N, D) (or a sequence of Instances). When ``history`` is given, the
    full-data loss after every epoch is appended to it.
    """
    if trained_on not in REGIMES:
        raise ConfigError(f"trained_on must be one of {REGIMES}")
    if len(X) and isinstance(X[0], Instance):
        X = np.stack([inst.features for inst in X])
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) != len(labels):
        raise DimensionError("X must be (N, D) with one label per row")
    classes = tuple(sorted(set(labels))) if label_set is None else tuple(label_set)
    counts = Counter(labels)
    empty = [c for c in classes if counts[c] == 0]
    if empty:
        raise TrainingError(f"identities without training examples: {empty[:5]}")
    col = {c: k for k, c in enumerate(classes)}
    Y = np.zeros((len(X), len(classes)))
    Y[np.arange(len(X)), [col[y] for y in labels]] = 1.0

    rng = np.random.default_rng(config.seed)
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    bs = min(config.batch_size, len(X))
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(X))
            for start in range(0, len(X), bs):
                idx = order[start:start + bs]
                loss, gw, gb = unary_loss_and_grad(W, b, X[idx], Y[idx], config.l2_lambda)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, loss)
                W -= config.learning_rate * gw
                b -= config.learning_rate * gb
            if history is not None or epoch == config.epochs:
                loss, _, _ = unary_loss_and_grad(W, b, X, Y, config.l2_lambda)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, loss)
                if history is not None:
                    history.append(float(loss))
    return UnaryModel(classes, W, b, config.l2_lambda, trained_on)


def raw_scores(model: UnaryModel, x):
    x = _features(x)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"feature dimension {x.shape[-1]} does not match model dimension {model.dim}")
    return expit(x @ model.weights.T + model.biases)


def predict_unary(model: UnaryModel, x):
    """Per-identity sigmoid scores renormalised to a distribution.

    Works on one instance/vector or an (N, D) matrix. Renormalisation happens in
    log space so scores that underflow still yield a valid distribution.
    """
    x = _features(x)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"feature dimension {x.shape[-1]} does not match model dimension {model.dim}")
    return softmax(log_expit(x @ model.weights.T + model.biases), axis=-1)


def entropy(p):
    """Natural-log entropy; 0 log 0 counts as 0."""
    p = np.asarray(p, dtype=float)
    logs = np.log(np.where(p > 0, p, 1.0))
    return float(-(p * logs).sum())


def naive_baseline(tag_labels: Sequence, query_labels: Sequence) -> float:
    """Accuracy of always predicting the most frequent tagged identity."""
    if len(tag_labels) == 0:
        raise EvaluationError("naive baseline needs at least one tag")
    if len(query_labels) == 0:
        raise EvaluationError("naive baseline is undefined without queries")
    counts = Counter(tag_labels)
    top = max(counts.values())
    # ties resolved towards the smallest label
    guess = min(label for label, c in counts.items() if c == top)
    return sum(1 for q in query_labels if q == guess) / len(query_labels)
