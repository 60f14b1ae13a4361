import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waumkit.data import CrowdDataset
from waumkit.glad import (
    GladConfig,
    glad,
    marginal_log_likelihood,
    posteriors,
    q_function,
    q_gradient,
)

from conftest import random_dataset


def adversarial_crowd(seed, n_task=200, n_honest=3, honest_acc=0.7):
    """Binary tasks: worker 0 always right, worker 1 always flips, plus noisy honest workers."""
    rng = np.random.default_rng(seed)
    truth = rng.integers(2, size=n_task)
    votes = {}
    for i, y in enumerate(truth):
        votes[i] = {0: int(y), 1: int(1 - y)}
        for j in range(n_honest):
            votes[i][2 + j] = int(y if rng.random() < honest_acc else 1 - y)
    return CrowdDataset.from_votes(votes, np.zeros((n_task, 1)), 2, ground_truth=truth)


def test_first_e_step_single_vote():
    d = CrowdDataset.from_votes({0: {0: 1}}, np.zeros((1, 1)), 2)
    post = posteriors(d, np.ones(1), np.zeros(1))
    assert post[0, 1] == pytest.approx(1 / (1 + np.exp(-1)))


@pytest.mark.parametrize("seed", range(5))
def test_adversarial_worker_gets_negative_ability(seed):
    s = glad(adversarial_crowd(seed))
    assert s.abilities[0] > 0
    assert s.abilities[1] < 0


def test_two_worker_symmetric_crowd_is_unidentifiable():
    # with only an honest and a flipping worker, swapping their roles leaves the likelihood fixed
    d = adversarial_crowd(0, n_honest=0)
    s = glad(d)
    assert s.abilities[0] == pytest.approx(s.abilities[1], abs=1e-9)


def test_consistent_workers_monotone():
    truth = np.random.default_rng(0).integers(3, size=40)
    d = CrowdDataset.from_votes({i: {j: int(y) for j in range(4)} for i, y in enumerate(truth)},
                                np.zeros((40, 1)), 3)
    h = np.array(glad(d).history)
    assert np.all(np.diff(h) >= -1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_marginal_ll_monotone(seed):
    d = random_dataset(seed)
    s = glad(d, GladConfig(max_em_iter=30))
    h = np.array(s.history)
    assert np.all(np.diff(h) >= -1e-7)
    assert s.log_likelihood == pytest.approx(marginal_log_likelihood(d, s.abilities,
                                                                     np.log(s.difficulties)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_positive_difficulties_and_simplex(seed):
    s = glad(random_dataset(seed), GladConfig(max_em_iter=20))
    assert np.all(s.difficulties > 0)
    assert np.allclose(s.posteriors.sum(axis=1), 1, atol=1e-9)


def fd_relative_error(seed, h=1e-5):
    d = random_dataset(seed)
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=d.n_worker)
    b = rng.normal(scale=0.5, size=d.n_task)
    post = rng.dirichlet(np.ones(d.n_class), size=d.n_task)
    ga, gb = q_gradient(d, alpha, b, post)
    num_a = np.empty_like(alpha)
    num_b = np.empty_like(b)
    for k in range(alpha.size):
        e = np.zeros_like(alpha)
        e[k] = h
        num_a[k] = (q_function(d, alpha + e, b, post) - q_function(d, alpha - e, b, post)) / (2 * h)
    for k in range(b.size):
        e = np.zeros_like(b)
        e[k] = h
        num_b[k] = (q_function(d, alpha, b + e, post) - q_function(d, alpha, b - e, post)) / (2 * h)
    g = np.concatenate([ga, gb])
    num = np.concatenate([num_a, num_b])
    return np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_q_gradient_finite_differences(seed):
    assert fd_relative_error(seed) < 1e-4


def test_label_permutation_equivariance():
    d = random_dataset(9, K=3)
    perm = np.array([2, 0, 1])
    votes = {i: {j: int(perm[y]) for j, y in a.items()} for i, a in d.votes.items()}
    d2 = CrowdDataset.from_votes(votes, d.features, 3, n_worker=d.n_worker)
    # bounded run: later backtracking choices can flip on rounding-level ties
    cfg = GladConfig(max_em_iter=20)
    s, s2 = glad(d, cfg), glad(d2, cfg)
    assert np.allclose(s2.posteriors[:, perm], s.posteriors, atol=1e-12)
    assert np.allclose(s2.abilities, s.abilities, atol=1e-12)
    assert np.allclose(s2.difficulties, s.difficulties, rtol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        GladConfig(m_step_learning_rate=0)
