"""Ambiguous-task identification from training dynamics.

All scores are averages of softmax margins ``sigma_y - sigma_[2]`` recorded
over training epochs:

* AUM of a (task, vote) pair, from a trace;
* AUMC, the AUM of the majority-vote label;
* WAUM, the trust-weighted mean of a task's per-vote AUMs, where the trust
  of worker ``j`` on task ``i`` is ``<diag(pi_j), sigma^(T)(x_i)>``.

Low scores flag ambiguous tasks; :func:`prune` removes those below an
empirical quantile.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from waumkit.aggregation import EmConfig, dawid_skene, majority_vote
from waumkit.data import CrowdDataset, DimensionError, ValidationError, tasks_sets
from waumkit.trainer import MarginTrace, MlpSpec, TrainConfig, margins, train_with_trace

logger = logging.getLogger(__name__)

METHODS = ("aum", "aumc", "waum", "waum_worker_wise")


@dataclass
class IdentificationReport:
    method: str
    scores: np.ndarray
    per_vote_aum: dict = field(default_factory=dict)
    trust: dict = field(default_factory=dict)
    alpha: float = 0.0
    threshold: float = float("nan")
    pruned_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def pruned_tasks(self) -> np.ndarray:
        return np.flatnonzero(self.pruned_mask)

    @property
    def kept_tasks(self) -> np.ndarray:
        return np.flatnonzero(~self.pruned_mask)

    def to_dict(self) -> dict:
        def pairs(m):
            return [[int(i), int(j), float(v)] for (i, j), v in sorted(m.items())]

        return {
            "method": self.method,
            "alpha": float(self.alpha),
            "threshold": float(self.threshold),
            "scores": [float(s) for s in self.scores],
            "pruned_tasks": [int(i) for i in self.pruned_tasks],
            "per_vote_aum": pairs(self.per_vote_aum),
            "trust": pairs(self.trust),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _vote_aums(softmaxes: np.ndarray, rows: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean margin over epochs for each (trace row, label) pair."""
    return margins(softmaxes[:, rows, :], labels).mean(axis=0)


def aum_per_vote(trace: MarginTrace, d: CrowdDataset) -> dict:
    """AUM(x_i, y_i^(j)) for every vote, keyed by (task, worker)."""
    if trace.softmaxes.ndim != 3 or trace.softmaxes.shape[1] != d.n_task \
            or trace.softmaxes.shape[2] != d.n_class:
        raise DimensionError(
            f"trace shape {trace.softmaxes.shape} does not match "
            f"(T, {d.n_task}, {d.n_class})"
        )
    if trace.softmaxes.shape[0] < 1:
        raise DimensionError("trace has no epochs")
    values = _vote_aums(trace.softmaxes, d.vote_task, d.vote_label)
    return dict(zip(zip(d.vote_task.tolist(), d.vote_worker.tolist()), values.tolist()))


def _one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((labels.size, K))
    out[np.arange(labels.size), labels] = 1.0
    return out


def aumc(d: CrowdDataset, spec: MlpSpec, cfg: TrainConfig, mv_seed: int = 0) -> np.ndarray:
    """AUM of the majority-vote label, one network trained on the MV one-hots."""
    mv = majority_vote(d, mv_seed)
    _, trace = train_with_trace(spec, cfg, d.features, _one_hot(mv, d.n_class), d.features)
    return margins(trace.softmaxes, mv).mean(axis=0)


def _trust_values(confusions: np.ndarray, final_softmax: np.ndarray,
                  workers: np.ndarray, rows: np.ndarray) -> np.ndarray:
    diag = np.diagonal(np.asarray(confusions, dtype=np.float64), axis1=1, axis2=2)
    return np.einsum("vk,vk->v", diag[workers], np.asarray(final_softmax)[rows])


def trust_scores(confusions, final_softmax, d: CrowdDataset) -> dict:
    """s^(j)(x_i) = <diag(pi_j), sigma^(T)(x_i)> for every vote (i, j)."""
    confusions = np.asarray(confusions, dtype=np.float64)
    final_softmax = np.asarray(final_softmax, dtype=np.float64)
    if confusions.shape != (d.n_worker, d.n_class, d.n_class):
        raise DimensionError(f"confusions shape {confusions.shape} does not match dataset")
    if final_softmax.shape != (d.n_task, d.n_class):
        raise DimensionError(f"final softmax shape {final_softmax.shape} does not match dataset")
    values = _trust_values(confusions, final_softmax, d.vote_worker, d.vote_task)
    return dict(zip(zip(d.vote_task.tolist(), d.vote_worker.tolist()), values.tolist()))


def weighted_task_mean(task: np.ndarray, values: np.ndarray, weights: np.ndarray,
                       n_task: int) -> np.ndarray:
    """Per-task weighted mean of per-vote values.

    Weights are divided by their per-task maximum first, so equal weights
    reduce to the plain mean. A task whose weights are all zero gets the
    unweighted mean and a warning.
    """
    task = np.asarray(task, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any():
        raise ValidationError("trust weights must be non-negative")
    wmax = np.zeros(n_task)
    np.maximum.at(wmax, task, weights)
    zero = wmax <= 0
    w = np.where(zero[task], 1.0, weights / np.where(zero, 1.0, wmax)[task])
    num = np.bincount(task, weights=w * values, minlength=n_task)
    den = np.bincount(task, weights=w, minlength=n_task)
    if zero.any():
        logger.warning("%d task(s) have zero total trust; using the unweighted AUM mean",
                       int(zero.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


def _report(method, scores, task, worker, aums, trust) -> IdentificationReport:
    keys = list(zip(task.tolist(), worker.tolist()))
    return IdentificationReport(
        method=method,
        scores=np.asarray(scores, dtype=np.float64),
        per_vote_aum=dict(zip(keys, np.asarray(aums).tolist())),
        trust=dict(zip(keys, np.asarray(trust).tolist())),
    )


def waum(d: CrowdDataset, spec: MlpSpec, cfg: TrainConfig,
         em: EmConfig = EmConfig(), confusions: Optional[np.ndarray] = None):
    """WAUM with a single network trained on the stacked votes.

    Returns ``(scores, trust, per_vote_aum)`` where the last two are dicts
    keyed by (task, worker). ``confusions`` defaults to a Dawid-Skene fit.
    """
    rep = _waum_report(d, spec, cfg, em, confusions)
    return rep.scores, rep.trust, rep.per_vote_aum


def _waum_report(d, spec, cfg, em, confusions=None) -> IdentificationReport:
    if confusions is None:
        confusions = dawid_skene(d, em).confusions
    # one training row per vote, ordered by (task, worker)
    x = d.features[d.vote_task]
    y = _one_hot(d.vote_label, d.n_class)
    _, trace = train_with_trace(spec, cfg, x, y, d.features)
    aums = _vote_aums(trace.softmaxes, d.vote_task, d.vote_label)
    trust = _trust_values(confusions, trace.final_softmax, d.vote_worker, d.vote_task)
    scores = weighted_task_mean(d.vote_task, aums, trust, d.n_task)
    return _report("waum", scores, d.vote_task, d.vote_worker, aums, trust)


def waum_worker_wise(d: CrowdDataset, spec: MlpSpec, cfg: TrainConfig,
                     em: EmConfig = EmConfig(), confusions: Optional[np.ndarray] = None):
    """WAUM with one network per worker, trained only on that worker's votes.

    Worker ``j``'s network uses ``spec.seed + j`` and ``cfg.shuffle_seed + j``
    and a batch size capped at its number of tasks.
    """
    rep = _waum_ww_report(d, spec, cfg, em, confusions)
    return rep.scores, rep.trust, rep.per_vote_aum


def _waum_ww_report(d, spec, cfg, em, confusions=None) -> IdentificationReport:
    if confusions is None:
        confusions = dawid_skene(d, em).confusions
    aums = np.empty(d.n_vote)
    trust = np.empty(d.n_vote)
    vote_ids = np.arange(d.n_vote)
    for j, tasks in tasks_sets(d).items():
        tasks = np.asarray(tasks, dtype=np.int64)
        sel = vote_ids[d.vote_worker == j]  # sorted by task, aligned with `tasks`
        labels = d.vote_label[sel]
        w_spec = replace(spec, seed=spec.seed + j)
        w_cfg = replace(cfg, shuffle_seed=cfg.shuffle_seed + j,
                        batch_size=min(cfg.batch_size, tasks.size))
        x = d.features[tasks]
        _, trace = train_with_trace(w_spec, w_cfg, x, _one_hot(labels, d.n_class), x)
        rows = np.arange(tasks.size)
        aums[sel] = _vote_aums(trace.softmaxes, rows, labels)
        trust[sel] = _trust_values(confusions, trace.final_softmax,
                                   np.full(tasks.size, j), rows)
    scores = weighted_task_mean(d.vote_task, aums, trust, d.n_task)
    return _report("waum_worker_wise", scores, d.vote_task, d.vote_worker, aums, trust)


def nearest_rank(n: int, alpha: float) -> int:
    """1-based order statistic ``ceil(alpha * n)``, at least 1.

    ``alpha`` is read through its shortest decimal repr so 0.1 * 10 is 1.
    """
    return max(1, math.ceil(Fraction(repr(float(alpha))) * n))


def prune(scores, alpha: float):
    """Nearest-rank alpha-quantile ``q`` and the mask of tasks scoring below it."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return float("nan"), np.zeros(0, dtype=bool)
    k = nearest_rank(scores.size, alpha)
    q = float(np.sort(scores)[k - 1])
    return q, scores < q


def entropy_per_task(ns_labels) -> np.ndarray:
    """Shannon entropy (nats) of each soft label, with 0 log 0 = 0."""
    p = np.asarray(ns_labels, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def identify(d: CrowdDataset, method: str, spec: MlpSpec, cfg: TrainConfig,
             alpha: float = 0.1, em: EmConfig = EmConfig(), mv_seed: int = 0,
             confusions: Optional[np.ndarray] = None) -> IdentificationReport:
    """Score tasks with ``method`` and prune at level ``alpha``."""
    method = method.replace("-", "_")
    if method == "waum_ww":
        method = "waum_worker_wise"
    if method == "aumc":
        rep = IdentificationReport("aumc", aumc(d, spec, cfg, mv_seed))
    elif method == "waum":
        rep = _waum_report(d, spec, cfg, em, confusions)
    elif method == "waum_worker_wise":
        rep = _waum_ww_report(d, spec, cfg, em, confusions)
    else:
        raise ValidationError(f"unknown identification method {method!r}")
    rep.alpha = alpha
    rep.threshold, rep.pruned_mask = prune(rep.scores, alpha)
    return rep
