import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waumkit.metrics import EceConfig, accuracy, bin_index, ece


def test_accuracy_extremes():
    truth = np.array([0, 2, 1])
    assert accuracy(np.eye(3)[truth], truth) == 1.0
    assert accuracy(np.eye(3)[(truth + 1) % 3], truth) == 0.0


def test_uniform_predictions_half_accurate():
    truth = np.random.default_rng(0).integers(2, size=4000)
    accs = [accuracy(np.full((4000, 2), 0.5), truth, seed=s) for s in range(5)]
    assert all(abs(a - 0.5) <= 0.05 for a in accs)


def test_ece_perfect_is_exact_zero():
    truth = np.random.default_rng(1).integers(4, size=50)
    assert ece(np.eye(4)[truth], truth) == 0.0


def test_ece_hand_case():
    pred = np.array([[0.8, 0.2], [0.8, 0.2]])
    assert abs(ece(pred, np.array([0, 1])) - 0.3) <= 1e-12


def test_bins_right_closed():
    M = 15
    assert bin_index([1.0], M)[0] == M - 1
    assert bin_index([0.0], M)[0] == 0
    assert bin_index([1 / M], M)[0] == 0
    assert bin_index([np.nextafter(1 / M, 1)], M)[0] == 1
    assert bin_index([2 / M], M)[0] == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_ece_permutation_invariant_and_bounded(seed):
    rng = np.random.default_rng(seed)
    n, K = int(rng.integers(1, 60)), int(rng.integers(2, 6))
    pred = rng.dirichlet(np.ones(K), size=n)
    truth = rng.integers(K, size=n)
    perm = rng.permutation(n)
    cfg = EceConfig(int(rng.integers(1, 20)))
    e = ece(pred, truth, cfg)
    assert 0 <= e <= 1
    assert e == ece(pred[perm], truth[perm], cfg)


def test_single_bin_is_gap_of_means():
    rng = np.random.default_rng(3)
    pred = rng.dirichlet(np.ones(3), size=40)
    truth = rng.integers(3, size=40)
    expected = abs(np.mean(pred.argmax(1) == truth) - np.mean(pred.max(1)))
    assert ece(pred, truth, EceConfig(1)) == pytest.approx(expected, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        EceConfig(0)
