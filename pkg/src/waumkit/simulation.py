"""Synthetic tasks and simulated crowds.

Generators produce seeded point clouds with planted labels (concentric
annuli, two moons, Gaussian blobs) and a train/test split. Workers either
sample answers from a confusion matrix or are small feature-aware learners
with capped capacity (multinomial logistic regression, boosted stumps)
fit on the true labels, which then answer with their own predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from waumkit.data import CrowdDataset, ValidationError

GENERATORS = ("circles", "moons", "blobs")
WORKER_KINDS = ("confusion", "weak_linear", "weak_boosted")


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str = "circles"
    n_task: int = 750
    noise: float = 0.1
    test_fraction: float = 0.3
    seed: int = 0
    n_class: int = 3
    n_features: int = 2
    # circles only: extra radial noise factor inside the planted sector
    sector_noise: float = 1.0
    sector: tuple = (np.pi / 6, np.pi / 3)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"unknown generator {self.generator!r}")
        if self.generator == "moons" and self.n_class != 2:
            raise ValidationError("moons has exactly 2 classes")
        if self.n_class < 2 or self.n_task < self.n_class:
            raise ValidationError("need n_class >= 2 and n_task >= n_class")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must be in (0, 1)")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")


@dataclass(frozen=True)
class TaskSet:
    """Features with planted labels; ``hard`` marks the planted noisy region."""

    features: np.ndarray
    truth: np.ndarray
    hard: np.ndarray

    def __len__(self):
        return self.truth.size


@dataclass(frozen=True)
class WorkerSpec:
    """One simulated worker.

    ``params`` by kind:

    * confusion: ``matrix`` (K x K row-stochastic)
    * weak_linear: ``max_iter``, optional ``learning_rate``, ``basis``
    * weak_boosted: ``n_stumps``, ``learning_rate``, optional ``basis``

    ``basis`` is ``"raw"`` or ``"quadratic"`` (adds squares and cross terms).
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in WORKER_KINDS:
            raise ValidationError(f"unknown worker kind {self.kind!r}")
        if self.kind == "confusion":
            m = np.asarray(self.params.get("matrix"), dtype=np.float64)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValidationError("confusion worker needs a square 'matrix'")
            if (m < 0).any() or not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
                raise ValidationError("confusion matrix rows must be probability vectors")

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkerSpec":
        params = dict(raw.get("params", {}))
        return cls(kind=raw["kind"], params=params, seed=int(raw.get("seed", 0)))


# generators


def _circles(n, K, noise, rng, sector_noise, sector):
    truth = np.arange(n) % K
    rng.shuffle(truth)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    radius = (truth + 1) / K
    hard = (theta >= sector[0]) & (theta <= sector[1])
    scale = np.where(hard, noise * sector_noise, noise)
    r = radius + scale * rng.standard_normal(n)
    x = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return x, truth, hard


def _moons(n, noise, rng):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0, np.pi, n_out)
    t_in = np.linspace(0, np.pi, n_in)
    x = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1 - np.cos(t_in), 1 - np.sin(t_in) - 0.5]),
    ])
    truth = np.concatenate([np.zeros(n_out, int), np.ones(n_in, int)])
    x = x + noise * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return x[perm], truth[perm], np.zeros(n, bool)


def _blobs(n, K, d, noise, rng):
    centers = rng.uniform(-10.0, 10.0, size=(K, d))
    truth = np.arange(n) % K
    rng.shuffle(truth)
    x = centers[truth] + noise * rng.standard_normal((n, d))
    return x, truth, np.zeros(n, bool)


def generate_tasks(spec: SyntheticSpec) -> tuple[TaskSet, TaskSet]:
    """Seeded point cloud split into (train, test) task sets."""
    rng = np.random.default_rng(spec.seed)
    if spec.generator == "circles":
        x, y, hard = _circles(spec.n_task, spec.n_class, spec.noise, rng,
                              spec.sector_noise, spec.sector)
    elif spec.generator == "moons":
        x, y, hard = _moons(spec.n_task, spec.noise, rng)
    else:
        x, y, hard = _blobs(spec.n_task, spec.n_class, spec.n_features, spec.noise, rng)
    n_test = int(round(spec.test_fraction * spec.n_task))
    perm = rng.permutation(spec.n_task)
    test, train = perm[:n_test], np.sort(perm[n_test:])
    test = np.sort(test)
    return (TaskSet(x[train], y[train], hard[train]),
            TaskSet(x[test], y[test], hard[test]))


# weak workers


def _basis(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "raw":
        return x
    if kind == "quadratic":
        iu = np.triu_indices(x.shape[1])
        return np.hstack([x, (x[:, :, None] * x[:, None, :])[:, iu[0], iu[1]]])
    raise ValidationError(f"unknown basis {kind!r}")


def _standardize(z):
    mu, sd = z.mean(axis=0), z.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearWorker:
    """Multinomial logistic regression, full-batch gradient descent, capped iterations."""

    def __init__(self, K, max_iter=1, learning_rate=0.5, basis="raw", seed=0):
        self.K, self.max_iter, self.lr, self.basis = K, int(max_iter), learning_rate, basis
        self.seed = seed

    def fit(self, x, y):
        z = _basis(x, self.basis)
        self.mu, self.sd = _standardize(z)
        z = (z - self.mu) / self.sd
        rng = np.random.default_rng(self.seed)
        self.w = 0.01 * rng.standard_normal((z.shape[1], self.K))
        self.b = np.zeros(self.K)
        onehot = np.eye(self.K)[y]
        for _ in range(self.max_iter):
            g = (_softmax(z @ self.w + self.b) - onehot) / len(y)
            self.w -= self.lr * z.T @ g
            self.b -= self.lr * g.sum(axis=0)
        return self

    def predict(self, x):
        z = (_basis(x, self.basis) - self.mu) / self.sd
        return np.argmax(z @ self.w + self.b, axis=1)


class StumpBoostWorker:
    """Softmax gradient boosting with one regression stump per class and round."""

    def __init__(self, K, n_stumps=5, learning_rate=0.1, basis="raw", n_thresholds=32, seed=0):
        self.K, self.n_stumps, self.lr, self.basis = K, int(n_stumps), learning_rate, basis
        self.n_thresholds = n_thresholds

    @staticmethod
    def _fit_stump(z, r, thresholds):
        best = (np.inf, 0, 0.0, 0.0, 0.0)
        total, n = r.sum(), r.size
        for f in range(z.shape[1]):
            col = z[:, f]
            for t in thresholds[f]:
                left = col <= t
                nl = left.sum()
                if nl == 0 or nl == n:
                    continue
                sl = r[left].sum()
                ml, mr = sl / nl, (total - sl) / (n - nl)
                # squared error up to a constant
                loss = -(sl * ml + (total - sl) * mr)
                if loss < best[0]:
                    best = (loss, f, t, ml, mr)
        return best[1:]

    def fit(self, x, y):
        z = _basis(x, self.basis)
        qs = np.linspace(0, 1, self.n_thresholds + 2)[1:-1]
        thresholds = [np.unique(np.quantile(z[:, f], qs)) for f in range(z.shape[1])]
        onehot = np.eye(self.K)[y]
        prior = np.log(np.maximum(onehot.mean(axis=0), 1e-12))
        self.init = prior
        f_x = np.tile(prior, (len(y), 1))
        self.stumps = []
        for _ in range(self.n_stumps):
            resid = onehot - _softmax(f_x)
            round_ = []
            for k in range(self.K):
                feat, t, vl, vr = self._fit_stump(z, resid[:, k], thresholds)
                f_x[:, k] += self.lr * np.where(z[:, feat] <= t, vl, vr)
                round_.append((feat, t, vl, vr))
            self.stumps.append(round_)
        return self

    def predict(self, x):
        z = _basis(x, self.basis)
        f_x = np.tile(self.init, (z.shape[0], 1))
        for round_ in self.stumps:
            for k, (feat, t, vl, vr) in enumerate(round_):
                f_x[:, k] += self.lr * np.where(z[:, feat] <= t, vl, vr)
        return np.argmax(f_x, axis=1)


def fit_worker(w: WorkerSpec, x: np.ndarray, truth: np.ndarray, K: int):
    """Fitted learner for a feature-aware worker (None for confusion workers)."""
    p = w.params
    if w.kind == "weak_linear":
        return LinearWorker(K, p.get("max_iter", 1), p.get("learning_rate", 0.5),
                            p.get("basis", "raw"), seed=w.seed).fit(x, truth)
    if w.kind == "weak_boosted":
        return StumpBoostWorker(K, p.get("n_stumps", 5), p.get("learning_rate", 0.1),
                                p.get("basis", "raw")).fit(x, truth)
    return None


def worker_answers(w: WorkerSpec, tasks: TaskSet, K: int, rng: np.random.Generator) -> np.ndarray:
    """The label worker ``w`` would give to every task."""
    if w.kind == "confusion":
        m = np.asarray(w.params["matrix"], dtype=np.float64)
        if m.shape != (K, K):
            raise ValidationError(f"confusion matrix must be {K}x{K}")
        u = rng.random(len(tasks))
        cdf = np.cumsum(m[tasks.truth], axis=1)
        ans = (u[:, None] > cdf).sum(axis=1)
        return np.minimum(ans, K - 1)
    answers = fit_worker(w, tasks.features, tasks.truth, K).predict(tasks.features)
    noise = float(w.params.get("region_noise", 0.0))
    if noise > 0:
        dist = np.asarray(w.params.get("region_dist", np.full(K, 1.0 / K)), dtype=np.float64)
        flip = tasks.hard & (rng.random(len(tasks)) < noise)
        noisy = rng.choice(K, size=len(tasks), p=dist / dist.sum())
        answers = np.where(flip, noisy, answers)
    return answers


VotesPerTask = Union[int, Sequence[int], None]


def simulate_votes(tasks: TaskSet, workers: Sequence[WorkerSpec], K: int,
                   votes_per_task: VotesPerTask = None, seed: int = 0,
                   keep_truth: bool = True) -> CrowdDataset:
    """Crowd votes on ``tasks`` from ``workers``.

    ``votes_per_task`` is ``None`` (every worker answers every task), an
    int (exactly that many workers per task) or a ``(low, high)`` pair drawn
    uniformly per task. Annotators are chosen uniformly without replacement.
    """
    n_worker = len(workers)
    rng = np.random.default_rng(seed)
    answers = np.empty((len(tasks), n_worker), dtype=np.int64)
    for j, w in enumerate(workers):
        answers[:, j] = worker_answers(w, tasks, K, np.random.default_rng([seed, j, w.seed]))

    if votes_per_task is None:
        counts = np.full(len(tasks), n_worker)
    elif np.ndim(votes_per_task) == 0:
        counts = np.full(len(tasks), int(votes_per_task))
    else:
        lo, hi = votes_per_task
        counts = rng.integers(int(lo), int(hi) + 1, size=len(tasks))
    if counts.max() > n_worker or counts.min() < 1:
        raise ValidationError(f"votes per task must be in [1, {n_worker}]")

    votes = {}
    for i in range(len(tasks)):
        chosen = rng.choice(n_worker, size=counts[i], replace=False)
        votes[i] = {int(j): int(answers[i, j]) for j in chosen}
    return CrowdDataset.from_votes(votes, tasks.features, K, n_worker=n_worker,
                                   ground_truth=tasks.truth if keep_truth else None)


def three_circles_spec(seed: int = 0) -> SyntheticSpec:
    """Task distribution of the circles protocol (hard band around 45 degrees)."""
    return SyntheticSpec("circles", n_task=750, noise=0.06, test_fraction=0.3, seed=seed,
                         sector_noise=1.0, sector=(np.pi / 6, np.pi / 3))


def three_circles_workers(seed: int = 0) -> list[WorkerSpec]:
    """The default heterogeneous crowd for the circles protocol.

    All three answer uniformly at random inside the hard band.
    """
    band = {"region_noise": 1.0}
    return [
        WorkerSpec("weak_linear", {"max_iter": 20, "basis": "raw", **band}, seed=seed),
        WorkerSpec("weak_linear", {"max_iter": 20, "learning_rate": 0.5, "basis": "quadratic",
                                   **band}, seed=seed + 1),
        WorkerSpec("weak_boosted", {"n_stumps": 10, "learning_rate": 0.5, "basis": "quadratic",
                                    **band}, seed=seed + 2),
    ]


def many_workers(n_worker: int, K: int, seed: int = 0) -> list[WorkerSpec]:
    """Random mix of weak learners with randomized capacity."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n_worker):
        kind = ("weak_linear", "weak_linear_quad", "weak_boosted")[rng.integers(3)]
        if kind == "weak_boosted":
            out.append(WorkerSpec("weak_boosted", {
                "n_stumps": int(rng.choice([1, 2, 5, 10])),
                "learning_rate": float(rng.choice([0.1, 0.5])),
            }, seed=seed * 1000 + j))
        else:
            out.append(WorkerSpec("weak_linear", {
                "max_iter": int(rng.integers(1, 31)),
                "learning_rate": float(rng.choice([0.05, 0.2, 0.5])),
                "basis": "quadratic" if kind.endswith("quad") else "raw",
            }, seed=seed * 1000 + j))
    return out
