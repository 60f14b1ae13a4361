import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waumkit.trainer import (
    MarginTrace,
    Mlp,
    MlpSpec,
    NumericalError,
    TrainConfig,
    margin,
    margins,
    predict_proba,
    softmax,
    train_with_trace,
)


def blobs(seed, n=100):
    rng = np.random.default_rng(seed)
    y = rng.integers(2, size=n)
    x = rng.normal(size=(n, 2)) * 0.5 + np.where(y[:, None] == 1, 3.0, -3.0)
    return x, y


def grad_check(seed, h=1e-5):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(3, 4, (6, 5), seed=seed)
    net = Mlp.init(spec)
    x = rng.normal(size=(5, 3))
    t = rng.dirichlet(np.ones(4), size=5)
    _, grads = net.loss_and_grads(x, t)
    analytic, numeric = [], []
    for p, g in zip(net.params, grads):
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = net.loss_and_grads(x, t)[0]
            flat[k] = old - h
            down = net.loss_and_grads(x, t)[0]
            flat[k] = old
            numeric.append((up - down) / (2 * h))
        analytic.append(g.reshape(-1))
    a, n = np.concatenate(analytic), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    assert grad_check(seed) < 1e-4


def test_zero_lr_single_epoch_is_initial_softmax():
    x, y = blobs(0, 20)
    spec = MlpSpec(2, 2, seed=3)
    cfg = TrainConfig(epochs=1, learning_rate=0.0)
    _, trace = train_with_trace(spec, cfg, x, np.eye(2)[y])
    _, trace2 = train_with_trace(spec, cfg, x, np.eye(2)[y])
    assert np.array_equal(trace.softmaxes[0], predict_proba(Mlp.init(spec), x))
    assert np.array_equal(trace.softmaxes, trace2.softmaxes)


def test_separable_blobs_fit():
    x, y = blobs(1)
    model, trace = train_with_trace(MlpSpec(2, 2, seed=0), TrainConfig(epochs=50), x, np.eye(2)[y])
    assert np.mean(predict_proba(model, x).argmax(axis=1) == y) >= 0.95
    assert trace.shape == (50, 100, 2)
    assert np.allclose(trace.softmaxes.sum(axis=2), 1, atol=1e-6)
    assert trace.softmaxes.min() >= 0


def test_soft_targets_train():
    x, y = blobs(2)
    t = np.where(np.eye(2)[y] == 1, 0.8, 0.2)
    model, _ = train_with_trace(MlpSpec(2, 2, seed=0), TrainConfig(epochs=30), x, t)
    assert np.mean(predict_proba(model, x).argmax(axis=1) == y) >= 0.95


def test_deterministic_given_seeds():
    x, y = blobs(3)
    args = (MlpSpec(2, 2, seed=5), TrainConfig(epochs=3, shuffle_seed=9), x, np.eye(2)[y])
    assert np.array_equal(train_with_trace(*args)[1].softmaxes,
                          train_with_trace(*args)[1].softmaxes)


def test_zero_final_layer_gives_uniform():
    net = Mlp.init(MlpSpec(2, 4, seed=0))
    net.weights[-1][:] = 0
    net.biases[-1][:] = 0
    assert np.allclose(predict_proba(net, np.random.default_rng(0).normal(size=(7, 2))), 0.25)


def test_lr_schedule():
    cfg = TrainConfig(learning_rate=0.1, lr_decay_epochs=(2, 4), lr_decay_factor=0.1)
    assert [cfg.lr_at(e) for e in (1, 2, 3, 4, 5)] == pytest.approx([0.1, 0.1, 0.01, 0.01, 0.001])


def test_sgd_update_rule():
    # one full batch, two epochs: v <- m v + (g + wd w); w <- w - lr v
    x, y = blobs(4, 8)
    t = np.eye(2)[y]
    spec = MlpSpec(2, 2, (3,), seed=0)
    cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.05, momentum=0.9,
                      weight_decay=0.01)
    got, _ = train_with_trace(spec, cfg, x, t)
    net = Mlp.init(spec)
    vel = [np.zeros_like(p) for p in net.params]
    for _ in range(2):
        _, grads = net.loss_and_grads(x, t)
        for p, g, v in zip(net.params, grads, vel):
            v[:] = 0.9 * v + (g + 0.01 * p)
            p -= 0.05 * v
    for a, b in zip(got.params, net.params):
        assert np.allclose(a, b, atol=1e-14)


def test_non_finite_loss_names_epoch():
    x, y = blobs(5, 10)
    with np.errstate(all="ignore"), pytest.raises(NumericalError, match="epoch 1, batch 0"):
        train_with_trace(MlpSpec(2, 2, seed=0), TrainConfig(epochs=1), x * np.inf, np.eye(2)[y])


def test_margin_examples():
    s = [0.7, 0.2, 0.1]
    assert margin(s, 0) == pytest.approx(0.5)
    assert margin(s, 2) == pytest.approx(-0.1)
    assert margin([0.25] * 4, 3) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_margin_of_argmax_non_negative_and_bounded(seed):
    rng = np.random.default_rng(seed)
    s = rng.dirichlet(np.ones(int(rng.integers(2, 6))))
    assert margin(s, int(np.argmax(s))) >= 0
    assert all(-1 <= margin(s, k) <= 1 for k in range(s.size))


def test_vectorized_margins_match_scalar():
    rng = np.random.default_rng(0)
    s = softmax(rng.normal(size=(3, 6, 4)))
    y = rng.integers(4, size=6)
    m = margins(s, y)
    for t in range(3):
        for i in range(6):
            assert m[t, i] == margin(s[t, i], y[i])


def test_trace_round_trip(tmp_path):
    tr = MarginTrace(softmax(np.random.default_rng(1).normal(size=(2, 3, 4))))
    tr.save(tmp_path / "t.json")
    assert np.array_equal(MarginTrace.load(tmp_path / "t.json").softmaxes, tr.softmaxes)


def test_bad_targets_rejected():
    x, _ = blobs(0, 4)
    with pytest.raises(ValueError):
        train_with_trace(MlpSpec(2, 2), TrainConfig(epochs=1), x, np.full((4, 2), 0.7))
