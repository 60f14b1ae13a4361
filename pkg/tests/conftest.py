import sys

import numpy as np
import pytest

from waumkit.data import CrowdDataset


def random_dataset(seed, n_task=None, n_worker=None, K=None, d=2, p_vote=0.6):
    """Random sparse crowd with at least one vote per task."""
    rng = np.random.default_rng(seed)
    n_task = n_task or int(rng.integers(3, 30))
    n_worker = n_worker or int(rng.integers(1, 7))
    K = K or int(rng.integers(2, 5))
    votes = {}
    for i in range(n_task):
        workers = [j for j in range(n_worker) if rng.random() < p_vote]
        if not workers:
            workers = [int(rng.integers(n_worker))]
        votes[i] = {j: int(rng.integers(K)) for j in workers}
    features = rng.normal(size=(n_task, d))
    return CrowdDataset.from_votes(votes, features, K, n_worker=n_worker)


def confusion_crowd(seed, n_task, n_worker, K, diag, d=2):
    """Fully annotated crowd sampled from symmetric confusion matrices."""
    rng = np.random.default_rng(seed)
    truth = rng.integers(K, size=n_task)
    pi = np.full((K, K), (1 - diag) / (K - 1))
    np.fill_diagonal(pi, diag)
    votes = {i: {j: int(rng.choice(K, p=pi[truth[i]])) for j in range(n_worker)}
             for i in range(n_task)}
    return CrowdDataset.from_votes(votes, rng.normal(size=(n_task, d)), K,
                                   ground_truth=truth)


@pytest.fixture
def small_dataset():
    return random_dataset(0, n_task=12, n_worker=4, K=3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
