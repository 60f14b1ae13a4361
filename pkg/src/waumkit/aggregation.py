"""Feature-blind label aggregation: MV, NS, Dawid-Skene EM and weighted DS."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from waumkit.data import CrowdDataset, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    epsilon: float = 1e-6
    max_iter: int = 200
    smoothing: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.smoothing < 0:
            raise ValidationError(f"smoothing must be >= 0, got {self.smoothing}")


@dataclass(frozen=True)
class DsState:
    """Output of :func:`dawid_skene`.

    Attributes:
        confusions: (n_worker, K, K) array, ``confusions[j, l, k] = P(answer k | truth l)``.
        prevalence: (K,) class prior rho.
        posteriors: (n_task, K) soft labels T-hat.
        log_likelihood: final observed-data log-likelihood.
        history: log-likelihood after every EM iteration.
        converged: False when ``max_iter`` was hit first.
    """

    confusions: np.ndarray
    prevalence: np.ndarray
    posteriors: np.ndarray
    log_likelihood: float
    history: tuple
    n_iter: int
    converged: bool


def _check_votes(d: CrowdDataset) -> None:
    per_task = np.bincount(d.vote_task, minlength=d.n_task)
    if (per_task == 0).any():
        raise ValidationError(f"task {int(np.argmin(per_task))} has no votes")


def _seeded_argmax(scores: np.ndarray, seed: int) -> np.ndarray:
    """Row-wise argmax with ties broken uniformly at random (seeded)."""
    scores = np.asarray(scores, dtype=np.float64)
    rng = np.random.default_rng(seed)
    u = rng.random(scores.shape)
    tied = scores == scores.max(axis=1, keepdims=True)
    return np.argmax(np.where(tied, u, -1.0), axis=1)


def majority_vote(d: CrowdDataset, seed: int) -> np.ndarray:
    """Most answered class per task; ties broken by a seeded uniform draw."""
    _check_votes(d)
    return _seeded_argmax(d.vote_counts(), seed)


def naive_soft(d: CrowdDataset) -> np.ndarray:
    """Empirical vote distribution per task, shape (n_task, K)."""
    _check_votes(d)
    counts = d.vote_counts()
    return counts / counts.sum(axis=1, keepdims=True)


def _m_step(d: CrowdDataset, post: np.ndarray):
    K = d.n_class
    # numer[j, l, k] = sum_i T[i, l] * 1{y_ij = k}
    numer = np.zeros((d.n_worker, K, K))
    np.add.at(numer, (d.vote_worker, slice(None), d.vote_label), post[d.vote_task])
    denom = numer.sum(axis=2, keepdims=True)
    empty = denom[..., 0] <= 0
    conf = np.divide(numer, denom, out=np.full_like(numer, 1.0 / K), where=denom > 0)
    conf[empty] = 1.0 / K
    prevalence = post.mean(axis=0)
    return conf, prevalence


def _log_joint(d: CrowdDataset, conf: np.ndarray, prevalence: np.ndarray,
               smoothing: float) -> np.ndarray:
    """log(rho_l * prod_j pi^(j)[l, y_ij]) for every task/class, shape (n_task, K)."""
    log_conf = np.log(conf + smoothing)
    per_vote = log_conf[d.vote_worker, :, d.vote_label]  # (n_vote, K)
    out = np.zeros((d.n_task, d.n_class))
    # bincount keeps a fixed summation order per task
    for k in range(d.n_class):
        out[:, k] = np.bincount(d.vote_task, weights=per_vote[:, k], minlength=d.n_task)
    return out + np.log(prevalence + smoothing)


def _e_step(log_joint: np.ndarray):
    m = log_joint.max(axis=1, keepdims=True)
    w = np.exp(log_joint - m)
    z = w.sum(axis=1, keepdims=True)
    post = w / z
    ll = float(np.sum(m[:, 0] + np.log(z[:, 0])))
    return post, ll


def ds_log_likelihood(d: CrowdDataset, conf: np.ndarray, prevalence: np.ndarray,
                      smoothing: float = 1e-12) -> float:
    """Observed-data log-likelihood: sum_i log sum_l rho_l prod_j pi^(j)[l, y_ij]."""
    return _e_step(_log_joint(d, conf, prevalence, smoothing))[1]


def dawid_skene(d: CrowdDataset, cfg: EmConfig = EmConfig()) -> DsState:
    """Fit the Dawid-Skene model by EM, initialized from naive soft labels.

    Each iteration runs the closed-form M-step (confusions, prevalence) and
    then the E-step; the loop stops once the log-likelihood moves by less
    than ``cfg.epsilon``. Rows for classes a worker never effectively saw
    are set to uniform.
    """
    post = naive_soft(d)
    history = []
    converged = False
    conf = prevalence = None
    for it in range(1, cfg.max_iter + 1):
        conf, prevalence = _m_step(d, post)
        post, ll = _e_step(_log_joint(d, conf, prevalence, cfg.smoothing))
        if not np.isfinite(ll):
            raise FloatingPointError(f"DS log-likelihood is not finite at iteration {it}")
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < cfg.epsilon:
            converged = True
            break
    if not converged:
        logger.info("Dawid-Skene did not converge in %d iterations", cfg.max_iter)
    return DsState(
        confusions=conf,
        prevalence=prevalence,
        posteriors=post,
        log_likelihood=history[-1],
        history=tuple(history),
        n_iter=len(history),
        converged=converged,
    )


def weighted_ds(d: CrowdDataset, confusions: np.ndarray) -> np.ndarray:
    """Votes weighted by the voter's diagonal confusion entry, then normalized.

    Tasks whose weights are all zero fall back to naive soft labels.
    """
    _check_votes(d)
    confusions = np.asarray(confusions, dtype=np.float64)
    if confusions.shape != (d.n_worker, d.n_class, d.n_class):
        raise ValidationError(
            f"expected confusions of shape {(d.n_worker, d.n_class, d.n_class)}, "
            f"got {confusions.shape}"
        )
    diag = np.diagonal(confusions, axis1=1, axis2=2)  # (n_worker, K)
    scores = np.zeros((d.n_task, d.n_class))
    np.add.at(scores, (d.vote_task, d.vote_label), diag[d.vote_worker, d.vote_label])
    total = scores.sum(axis=1, keepdims=True)
    zero = total[:, 0] <= 0
    out = np.divide(scores, total, out=np.zeros_like(scores), where=total > 0)
    if zero.any():
        out[zero] = naive_soft(d)[zero]
    return out


Label = Union[int, np.integer, Sequence[float], np.ndarray]


def aggregate_to_targets(labels: Sequence[Label], n_class: int) -> np.ndarray:
    """Stack hard labels (as one-hot rows) and soft labels into a target matrix."""
    labels = list(labels) if not isinstance(labels, np.ndarray) else labels
    if isinstance(labels, np.ndarray) and labels.ndim == 1 and labels.dtype.kind in "iu":
        labels = list(labels)
    if isinstance(labels, np.ndarray) and labels.ndim == 2:
        out = np.asarray(labels, dtype=np.float64).copy()
    else:
        out = np.zeros((len(labels), n_class))
        for i, lab in enumerate(labels):
            if np.ndim(lab) == 0:
                k = int(lab)
                if not 0 <= k < n_class:
                    raise ValidationError(f"hard label {k} outside [0, {n_class - 1}]")
                out[i, k] = 1.0
            else:
                row = np.asarray(lab, dtype=np.float64)
                if row.shape != (n_class,):
                    raise ValidationError(f"soft label {i} has length {row.size}, expected {n_class}")
                out[i] = row
    if out.shape[1] != n_class:
        raise ValidationError(f"targets have {out.shape[1]} columns, expected {n_class}")
    if (out < 0).any() or not np.allclose(out.sum(axis=1), 1.0, atol=1e-9):
        raise ValidationError("targets must lie on the probability simplex")
    return out
