import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from faceless.errors import DimensionError, DivergenceError, EvaluationError, TrainingError
from faceless.unary import (
    TrainConfig,
    UnaryModel,
    entropy,
    naive_baseline,
    predict_unary,
    raw_scores,
    train_unary,
    unary_loss_and_grad,
)
from faceless.corpus import GeneratorConfig, Obfuscation, generate_corpus, make_splits, obfuscate_instance, \
    BlurParams

from oracles import max_rel_error, numeric_grad


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d, k = 7, 5, 3
    X = rng.standard_normal((n, d))
    Y = np.eye(k)[rng.integers(k, size=n)]
    W, b = rng.standard_normal((k, d)), rng.standard_normal(k)
    lam = 0.1
    _, gw, gb = unary_loss_and_grad(W, b, X, Y, lam)
    f = lambda: unary_loss_and_grad(W, b, X, Y, lam)[0]
    assert max_rel_error(gw, numeric_grad(f, W)) < 1e-4
    assert max_rel_error(gb, numeric_grad(f, b)) < 1e-4


def test_separable_two_identities():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(2, 0.3, (20, 3)), rng.normal(-2, 0.3, (20, 3))])
    y = ["a"] * 20 + ["b"] * 20
    model = train_unary(X, y, TrainConfig(epochs=50))
    pred = [model.labels[k] for k in predict_unary(model, X).argmax(axis=1)]
    assert pred == y


def test_loss_non_increasing_small_rate():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(1, 1, (15, 2)), rng.normal(-1, 1, (15, 2))])
    y = [0] * 15 + [1] * 15
    history = []
    train_unary(X, y, TrainConfig(learning_rate=1e-3, epochs=40, batch_size=len(X)), history=history)
    assert all(b <= a + 1e-15 for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]


def test_training_is_seeded():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 4))
    y = rng.integers(3, size=30).tolist()
    a = train_unary(X, y, TrainConfig(epochs=5, batch_size=8, seed=3))
    b = train_unary(X, y, TrainConfig(epochs=5, batch_size=8, seed=3))
    assert np.array_equal(a.weights, b.weights)


def test_missing_identity_is_training_error():
    with pytest.raises(TrainingError):
        train_unary(np.zeros((2, 3)), ["a", "a"], label_set=["a", "b"])


def test_divergence_reports_epoch():
    X = np.array([[1e200, -1e200], [-1e200, 1e200]])
    # first update blows the weights up; the next loss evaluation is infinite
    with pytest.raises(DivergenceError, match="epoch 2") as err:
        train_unary(X, ["a", "b"], TrainConfig(epochs=5, learning_rate=1e10))
    assert err.value.epoch == 2


def test_zero_model_is_uniform():
    model = UnaryModel(("a", "b", "c", "d"), np.zeros((4, 6)), np.zeros(4))
    assert np.allclose(predict_unary(model, np.ones(6)), 0.25)


@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)), arrays(np.float64, 5, elements=st.floats(-50, 50)))
def test_prediction_on_simplex_and_ranking_preserved(W, x):
    model = UnaryModel(tuple("abcd"), W, np.zeros(4))
    p = predict_unary(model, x)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9
    raw = raw_scores(model, x)
    assert np.argmax(p) == np.argmax(raw) or raw[np.argmax(p)] == raw.max()


def test_dimension_mismatch():
    model = UnaryModel(("a",), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        predict_unary(model, np.zeros(4))


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    model = UnaryModel(("x", "y"), rng.standard_normal((2, 3)), rng.standard_normal(2), 1e-4, "blur")
    model.save(tmp_path / "m.json")
    back = UnaryModel.load(tmp_path / "m.json")
    assert back.labels == model.labels and back.trained_on == "blur"
    assert np.array_equal(back.weights, model.weights) and np.array_equal(back.biases, model.biases)


@pytest.mark.parametrize("p, expected", [
    ([1, 0, 0], 0.0),
    ([0.25] * 4, math.log(4)),
    ([0.5, 0.5, 0, 0], math.log(2)),
])
def test_entropy_cases(p, expected):
    assert entropy(p) == pytest.approx(expected, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30).filter(lambda v: sum(v) > 1e-3))
def test_entropy_bounds(v):
    p = np.asarray(v) / sum(v)
    h = entropy(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-12


def test_entropy_uniform_is_ln_k():
    for k in (2, 10, 1000):
        assert abs(entropy(np.full(k, 1 / k)) - math.log(k)) < 1e-12


def test_naive_baseline():
    tags = ["a"] * 5 + ["b"] * 3
    assert naive_baseline(tags, ["a"] * 4) == 1.0
    assert naive_baseline(tags, ["a", "b", "b", "b"]) == 0.25
    assert naive_baseline(["b", "a"], ["a", "b"]) == 0.5
    with pytest.raises(EvaluationError):
        naive_baseline(tags, [])
    with pytest.raises(EvaluationError):
        naive_baseline([], ["a"])


def test_adapted_model_beats_visible_model_on_blurred_queries():
    corpus = generate_corpus(GeneratorConfig(n_identities=30, instances_per_identity=20), seed=5)
    splits = make_splits(corpus, "within", 0)
    blur = Obfuscation.parse("blur", 0.9)
    params = BlurParams(mean=corpus.head_mean, sigma=0.2)
    view = {i.instance_id: obfuscate_instance(i, blur, params, 0) for i in corpus.instances}
    train = splits.split0
    y = [corpus[i].identity for i in train]
    visible = train_unary(np.stack([corpus[i].features for i in train]), y)
    adapted = train_unary(np.stack([view[i].features for i in train]), y, trained_on="blur")
    Q = np.stack([view[i].features for i in splits.split1])
    truth = [corpus[i].identity for i in splits.split1]

    def acc(m):
        return np.mean([m.labels[k] == t for k, t in zip(predict_unary(m, Q).argmax(axis=1), truth)])

    assert acc(adapted) >= acc(visible)
