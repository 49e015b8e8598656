"""Pairwise match potential: trained 3-layer matcher, unary-entropy baseline, oracle.

Also ROC / equal-error-rate evaluation of match scores.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .corpus import Instance
from .errors import ConfigError, DimensionError, DivergenceError, EvaluationError, TrainingError
from .unary import UnaryModel, entropy, predict_unary

PAIR_REGIMES = ("visible-pair", "obfuscated-pair", "mixed-pair")
VARIANTS = ("trained", "unary_baseline", "oracle")


def pair_regime(obfuscated_i: bool, obfuscated_j: bool) -> str:
    if obfuscated_i and obfuscated_j:
        return "obfuscated-pair"
    if obfuscated_i or obfuscated_j:
        return "mixed-pair"
    return "visible-pair"


@dataclass(frozen=True, eq=False)
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    @classmethod
    def init(cls, input_dim, hidden, rng):
        def he(fan_out, fan_in):
            return rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        return cls(he(hidden, input_dim), np.zeros(hidden), he(hidden, hidden), np.zeros(hidden),
                   he(2, hidden) * 0.5, np.zeros(2))

    def arrays(self):
        return [getattr(self, n) for n in self.NAMES]

    def copy(self):
        return MlpParams(*(a.copy() for a in self.arrays()))

    @property
    def pair_dim(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]


def mlp_forward(params: MlpParams, X, masks=None):
    """Return (logits, cache). ``masks`` are optional pre-scaled dropout masks."""
    a1 = X @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    if masks is not None:
        h1 = h1 * masks[0]
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    if masks is not None:
        h2 = h2 * masks[1]
    logits = h2 @ params.W3.T + params.b3
    return logits, (X, a1, h1, a2, h2)


def mlp_loss_and_grad(params: MlpParams, X, y, masks=None):
    """Mean 2-way softmax cross-entropy and its gradient (same layout as MlpParams)."""
    n = len(X)
    logits, (X, a1, h1, a2, h2) = mlp_forward(params, X, masks)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = np.asarray(y, dtype=int)
    loss = -logp[np.arange(n), y].mean()
    d3 = np.exp(logp)
    d3[np.arange(n), y] -= 1.0
    d3 /= n
    gW3 = d3.T @ h2
    gb3 = d3.sum(axis=0)
    dh2 = d3 @ params.W3
    if masks is not None:
        dh2 = dh2 * masks[1]
    d2 = dh2 * (a2 > 0)
    gW2 = d2.T @ h1
    gb2 = d2.sum(axis=0)
    dh1 = d2 @ params.W2
    if masks is not None:
        dh1 = dh1 * masks[0]
    d1 = dh1 * (a1 > 0)
    gW1 = d1.T @ X
    gb1 = d1.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2, gW3, gb3)


@dataclass(frozen=True)
class MatcherConfig:
    hidden: int = 64
    learning_rate: float = 1e-3
    finetune_learning_rate: float | None = 1e-4
    pretrain_steps: int = 3000
    finetune_steps: int = 750
    batch_size: int = 100
    positive_fraction: float = 0.1
    dropout: float = 0.5
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError("positive_fraction must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.finetune_learning_rate is not None and self.finetune_learning_rate <= 0:
            raise ConfigError("finetune_learning_rate must be positive")
        if self.batch_size < 2 or self.learning_rate <= 0:
            raise ConfigError("batch_size must be >= 2 and learning_rate positive")


@dataclass(frozen=True, eq=False)
class PairDataset:
    """Pairs as row indices into two feature tables; ``labels`` is 1 for a match.

    Pair k is ``(left[pair_i[k]], right[pair_j[k]])``. Indexing keeps large
    within-album pair pools cheap.
    """

    left: np.ndarray
    right: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not (len(self.pair_i) == len(self.pair_j) == len(self.labels)):
            raise DimensionError("pair arrays differ in length")

    @classmethod
    def from_arrays(cls, A, B, labels):
        """Dataset whose k-th pair is (A[k], B[k])."""
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if len(A) != len(B):
            raise DimensionError("pair arrays differ in length")
        idx = np.arange(len(A))
        return cls(A, B, idx, idx, np.asarray(labels, dtype=int))

    def __len__(self):
        return len(self.labels)


def within_album_pairs(albums: Sequence, identities: Sequence):
    """Index pairs (i < j) sharing an album, with match labels."""
    albums = np.asarray(albums)
    identities = np.asarray(identities)
    rows_i, rows_j = [], []
    for album in np.unique(albums):
        members = np.flatnonzero(albums == album)
        if len(members) < 2:
            continue
        a, b = np.triu_indices(len(members), k=1)
        rows_i.append(members[a])
        rows_j.append(members[b])
    if not rows_i:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    i = np.concatenate(rows_i)
    j = np.concatenate(rows_j)
    return i, j, (identities[i] == identities[j]).astype(int)


@dataclass(frozen=True, eq=False)
class MatcherModel:
    variant: str
    params: MlpParams | None = None
    unary: UnaryModel | None = None
    regime: str = "visible-pair"
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown matcher variant {self.variant!r}")
        if self.regime not in PAIR_REGIMES:
            raise ConfigError(f"unknown pair regime {self.regime!r}")
        if self.variant == "trained" and self.params is None:
            raise ConfigError("trained matcher needs parameters")
        if self.variant == "unary_baseline" and self.unary is None:
            raise ConfigError("unary baseline matcher needs a unary model")

    def __call__(self, left, right):
        return score_pairs(self, left, right)

    def to_dict(self):
        data = {"variant": self.variant, "regime": self.regime}
        if self.params is not None:
            data["layers"] = {n: {"shape": list(a.shape), "data": a.ravel().tolist()}
                              for n, a in zip(MlpParams.NAMES, self.params.arrays())}
        if self.unary is not None:
            data["unary"] = self.unary.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        params = unary = None
        if "layers" in data:
            arrays = [np.asarray(data["layers"][n]["data"], dtype=float).reshape(data["layers"][n]["shape"])
                      for n in MlpParams.NAMES]
            params = MlpParams(*arrays)
        if "unary" in data:
            unary = UnaryModel.from_dict(data["unary"])
        return cls(data["variant"], params, unary, data.get("regime", "visible-pair"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _clip(grads: MlpParams, limit):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays()))
    if norm > limit:
        return MlpParams(*(g * (limit / norm) for g in grads.arrays()))
    return grads


def train_matcher(pairs: PairDataset, config: MatcherConfig = MatcherConfig(), *, steps: int | None = None,
                  init: MatcherModel | None = None, regime="visible-pair") -> MatcherModel:
    """Adam on softmax cross-entropy with fixed positive:negative batch composition.

    Pass ``init`` to fine-tune an already trained matcher; ``steps`` defaults to
    ``pretrain_steps`` for a fresh model and ``finetune_steps`` otherwise.
    Argument order is randomly swapped per example, and hidden layers use
    inverted dropout during training only.
    """
    labels = np.asarray(pairs.labels, dtype=int)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise TrainingError("matcher training needs both match and non-match pairs")
    left = np.asarray(pairs.left, dtype=float)
    right = np.asarray(pairs.right, dtype=float)
    pi, pj = np.asarray(pairs.pair_i), np.asarray(pairs.pair_j)
    rng = np.random.default_rng(config.seed)
    if init is not None:
        if init.variant != "trained":
            raise TrainingError("only trained matchers can be fine-tuned")
        params = init.params.copy()
        if params.pair_dim != left.shape[1] + right.shape[1]:
            raise DimensionError("fine-tuning data does not match matcher input size")
        steps = config.finetune_steps if steps is None else steps
        history = list(init.history)
        lr = config.learning_rate if config.finetune_learning_rate is None else config.finetune_learning_rate
    else:
        params = MlpParams.init(left.shape[1] + right.shape[1], config.hidden, rng)
        steps = config.pretrain_steps if steps is None else steps
        history = []
        lr = config.learning_rate

    n_pos = max(1, int(round(config.batch_size * config.positive_fraction)))
    n_neg = config.batch_size - n_pos
    keep = 1.0 - config.dropout
    m = [np.zeros_like(a) for a in params.arrays()]
    v = [np.zeros_like(a) for a in params.arrays()]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    arrays = params.arrays()
    for t in range(1, steps + 1):
        idx = np.concatenate([rng.choice(pos, n_pos), rng.choice(neg, n_neg)])
        swap = rng.random(len(idx)) < 0.5
        li, rj = left[pi[idx]], right[pj[idx]]
        a = np.where(swap[:, None], rj, li)
        b = np.where(swap[:, None], li, rj)
        X = np.hstack([a, b])
        masks = None
        if config.dropout > 0:
            masks = [(rng.random((len(idx), params.hidden)) < keep) / keep for _ in range(2)]
        loss, grads = mlp_loss_and_grad(MlpParams(*arrays), X, labels[idx], masks)
        if not np.isfinite(loss):
            raise DivergenceError(t, loss)
        history.append(float(loss))
        grads = _clip(grads, config.grad_clip).arrays()
        for k, g in enumerate(grads):
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v[k] = beta2 * v[k] + (1 - beta2) * g * g
            mhat = m[k] / (1 - beta1**t)
            vhat = v[k] / (1 - beta2**t)
            arrays[k] = arrays[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return MatcherModel("trained", MlpParams(*arrays), regime=regime, history=tuple(history))


def mlp_match_scores(params: MlpParams, A, B):
    """Match probability, averaged over both argument orders."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] + B.shape[1] != params.pair_dim:
        raise DimensionError(f"pair dimension {A.shape[1] + B.shape[1]} does not match matcher input {params.pair_dim}")
    p_ab = softmax(mlp_forward(params, np.hstack([A, B]))[0], axis=1)[:, 1]
    p_ba = softmax(mlp_forward(params, np.hstack([B, A]))[0], axis=1)[:, 1]
    return (p_ab + p_ba) / 2.0


def unary_baseline_match(p_i, p_j) -> float:
    """Entropy-weighted agreement of unary argmaxes.

    1 - H/2 when the argmaxes agree, H/2 otherwise, with H the mean of the two
    natural-log entropies; clamped to [0, 1].
    """
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    h = (entropy(p_i) + entropy(p_j)) / 2.0
    score = 1.0 - h / 2.0 if int(np.argmax(p_i)) == int(np.argmax(p_j)) else h / 2.0
    return min(max(score, 0.0), 1.0)


def score_pairs(model: MatcherModel, left: Sequence[Instance], right: Sequence[Instance]) -> np.ndarray:
    """Vectorised match_prob over aligned instance lists."""
    if len(left) != len(right):
        raise DimensionError("left and right pair lists differ in length")
    if len(left) == 0:
        return np.zeros(0)
    if model.variant == "oracle":
        return np.array([1.0 if a.identity == b.identity else 0.0 for a, b in zip(left, right)])
    A = np.stack([inst.features for inst in left])
    B = np.stack([inst.features for inst in right])
    if model.variant == "trained":
        return mlp_match_scores(model.params, A, B)
    PA = predict_unary(model.unary, A)
    PB = predict_unary(model.unary, B)
    return np.array([unary_baseline_match(pa, pb) for pa, pb in zip(PA, PB)])


def match_prob(model: MatcherModel, inst_i: Instance, inst_j: Instance) -> float:
    return float(score_pairs(model, [inst_i], [inst_j])[0])


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray
    false_positive_rate: np.ndarray
    false_negative_rate: np.ndarray
    eer_threshold: float
    eer: float

    @property
    def eer_accuracy(self):
        return 1.0 - self.eer

    def points(self):
        return list(zip(self.thresholds.tolist(), self.false_positive_rate.tolist(),
                        self.false_negative_rate.tolist()))


def eval_matcher(scores, labels) -> RocCurve:
    """Sweep every distinct score as a threshold (predict match when score >= t).

    The final point (t = +inf) rejects everything. The equal-error point is the
    linear interpolation between the last threshold with FPR >= FNR and the next.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("EER needs both match and non-match examples")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    lab = labels[order]
    thresholds, first = np.unique(s, return_index=True)
    # counts strictly below each threshold
    pos_below = np.concatenate([[0], np.cumsum(lab)])[first]
    neg_below = np.concatenate([[0], np.cumsum(~lab)])[first]
    thresholds = np.append(thresholds, np.inf)
    pos_below = np.append(pos_below, n_pos)
    neg_below = np.append(neg_below, n_neg)
    fnr = pos_below / n_pos
    fpr = (n_neg - neg_below) / n_neg
    d = fpr - fnr
    k = int(np.flatnonzero(d >= 0)[-1])
    if d[k] == 0 or k == len(d) - 1:
        rate, t = fpr[k], thresholds[k]
    else:
        f = d[k] / (d[k] - d[k + 1])
        rate = fpr[k] + f * (fpr[k + 1] - fpr[k])
        t_next = thresholds[k + 1] if np.isfinite(thresholds[k + 1]) else thresholds[k]
        t = thresholds[k] + f * (t_next - thresholds[k])
    return RocCurve(thresholds, fpr, fnr, float(t), float(rate))


def write_pair_scores(path, rows):
    """CSV dump: instance_i, instance_j, score, label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_i", "instance_j", "score", "label"])
        for i, j, score, label in rows:
            writer.writerow([i, j, repr(float(score)), int(label)])
