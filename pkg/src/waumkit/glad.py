"""GLAD: worker ability / task difficulty model fit by (generalized) EM.

A worker ``j`` answers task ``i`` correctly with probability
``sigmoid(alpha_j * beta_i)``; wrong answers are spread uniformly over the
other ``K - 1`` classes. Difficulties are parameterized as ``beta = exp(b)``
so the M-step is unconstrained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from waumkit.data import CrowdDataset, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GladConfig:
    epsilon: float = 1e-6
    max_em_iter: int = 100
    m_step_learning_rate: float = 0.1
    m_step_iters: int = 50

    def __post_init__(self):
        if not (self.epsilon > 0 and self.m_step_learning_rate > 0):
            raise ValidationError("epsilon and m_step_learning_rate must be positive")
        if self.max_em_iter < 1 or self.m_step_iters < 1:
            raise ValidationError("max_em_iter and m_step_iters must be >= 1")


@dataclass(frozen=True)
class GladState:
    abilities: np.ndarray
    difficulties: np.ndarray
    posteriors: np.ndarray
    log_likelihood: float
    history: tuple
    n_iter: int
    converged: bool
    failed: bool = False


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _vote_logs(d: CrowdDataset, alpha, b):
    """log P(correct) and log P(one specific wrong class) per vote."""
    z = alpha[d.vote_worker] * np.exp(b[d.vote_task])
    log_right = _log_sigmoid(z)
    log_wrong = _log_sigmoid(-z)
    if d.n_class > 1:
        log_wrong = log_wrong - np.log(d.n_class - 1)
    return z, log_right, log_wrong


def _log_joint(d: CrowdDataset, alpha, b) -> np.ndarray:
    """log P(y*=k) + sum_j log P(y_ij | y*=k), shape (n_task, K), uniform prior."""
    K = d.n_class
    _, log_right, log_wrong = _vote_logs(d, alpha, b)
    base = np.bincount(d.vote_task, weights=log_wrong, minlength=d.n_task)
    out = np.repeat(base[:, None], K, axis=1)
    bonus = np.zeros((d.n_task, K))
    np.add.at(bonus, (d.vote_task, d.vote_label), log_right - log_wrong)
    return out + bonus - np.log(K)


def marginal_log_likelihood(d: CrowdDataset, alpha, b) -> float:
    lj = _log_joint(d, alpha, b)
    m = lj.max(axis=1)
    return float(np.sum(m + np.log(np.exp(lj - m[:, None]).sum(axis=1))))


def posteriors(d: CrowdDataset, alpha, b) -> np.ndarray:
    lj = _log_joint(d, alpha, b)
    lj -= lj.max(axis=1, keepdims=True)
    p = np.exp(lj)
    return p / p.sum(axis=1, keepdims=True)


def q_function(d: CrowdDataset, alpha, b, post: np.ndarray) -> float:
    """Expected complete-data log-likelihood under ``post`` (prior term included)."""
    _, log_right, log_wrong = _vote_logs(d, alpha, b)
    q_vote = post[d.vote_task, d.vote_label]
    prior = -np.log(d.n_class) * d.n_task
    return float(np.sum(q_vote * log_right + (1.0 - q_vote) * log_wrong) + prior)


def q_gradient(d: CrowdDataset, alpha, b, post: np.ndarray):
    """Gradient of :func:`q_function` with respect to ``alpha`` and ``b``."""
    z, _, _ = _vote_logs(d, alpha, b)
    q_vote = post[d.vote_task, d.vote_label]
    sig = np.exp(_log_sigmoid(z))
    r = q_vote - sig  # d/dz of the per-vote term
    beta_v = np.exp(b[d.vote_task])
    g_alpha = np.bincount(d.vote_worker, weights=r * beta_v, minlength=d.n_worker)
    g_b = np.bincount(d.vote_task, weights=r * alpha[d.vote_worker] * beta_v,
                      minlength=d.n_task)
    return g_alpha, g_b


def _m_step(d, alpha, b, post, cfg, n_alpha, n_b):
    """Gradient ascent on Q; a step that lowers Q is halved until it does not."""
    q_old = q_function(d, alpha, b, post)
    for _ in range(cfg.m_step_iters):
        g_alpha, g_b = q_gradient(d, alpha, b, post)
        # per-parameter vote counts as a diagonal preconditioner
        step_a, step_b = g_alpha / n_alpha, g_b / n_b
        lr = cfg.m_step_learning_rate
        for _ in range(30):
            a_new, b_new = alpha + lr * step_a, b + lr * step_b
            q_new = q_function(d, a_new, b_new, post)
            if np.isfinite(q_new) and q_new >= q_old:
                break
            lr *= 0.5
        else:
            return alpha, b, q_old
        alpha, b, q_old = a_new, b_new, q_new
    return alpha, b, q_old


def glad(d: CrowdDataset, cfg: GladConfig = GladConfig()) -> GladState:
    """Estimate abilities, difficulties and posteriors with EM from alpha=beta=1."""
    if (np.bincount(d.vote_task, minlength=d.n_task) == 0).any():
        raise ValidationError("every task needs at least one vote")
    alpha = np.ones(d.n_worker)
    b = np.zeros(d.n_task)
    n_alpha = np.maximum(np.bincount(d.vote_worker, minlength=d.n_worker), 1).astype(float)
    n_b = np.maximum(np.bincount(d.vote_task, minlength=d.n_task), 1).astype(float)

    history = [marginal_log_likelihood(d, alpha, b)]
    converged = failed = False
    post = posteriors(d, alpha, b)
    for it in range(1, cfg.max_em_iter + 1):
        new_alpha, new_b, q = _m_step(d, alpha, b, post, cfg, n_alpha, n_b)
        if not np.isfinite(q):
            retry = GladConfig(cfg.epsilon, cfg.max_em_iter, cfg.m_step_learning_rate / 2,
                               cfg.m_step_iters)
            new_alpha, new_b, q = _m_step(d, alpha, b, post, retry, n_alpha, n_b)
            if not np.isfinite(q):
                logger.warning("GLAD: non-finite auxiliary function at iteration %d", it)
                failed = True
                break
        alpha, b = new_alpha, new_b
        post = posteriors(d, alpha, b)
        history.append(marginal_log_likelihood(d, alpha, b))
        if abs(history[-1] - history[-2]) < cfg.epsilon:
            converged = True
            break
    return GladState(
        abilities=alpha,
        difficulties=np.exp(b),
        posteriors=post,
        log_likelihood=history[-1],
        history=tuple(history),
        n_iter=len(history) - 1,
        converged=converged,
        failed=failed,
    )
