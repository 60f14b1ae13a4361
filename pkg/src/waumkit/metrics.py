"""Top-1 accuracy and expected calibration error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from waumkit.aggregation import _seeded_argmax
from waumkit.data import DimensionError, ValidationError


@dataclass(frozen=True)
class EceConfig:
    n_bins: int = 15

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValidationError(f"n_bins must be >= 1, got {self.n_bins}")


def _check(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.ndim != 2 or pred.shape[0] != truth.shape[0]:
        raise DimensionError(f"{pred.shape[0] if pred.ndim else 0} predictions "
                             f"for {truth.shape[0]} labels")
    return pred, truth


def accuracy(pred, truth, seed: int = 0) -> float:
    """Fraction of rows whose argmax (random tie-break) equals the label."""
    pred, truth = _check(pred, truth)
    return float(np.mean(_seeded_argmax(pred, seed) == truth))


def bin_index(confidence, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence for right-closed bins ((m-1)/M, m/M].

    Values at or below 1/M, including 0, go to the first bin.
    """
    upper = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(upper, np.asarray(confidence, dtype=np.float64), side="left")
    return np.minimum(idx, n_bins - 1)


def ece(pred, truth, cfg: EceConfig = EceConfig(), seed: int = 0) -> float:
    """Expected calibration error over ``cfg.n_bins`` equal-width bins."""
    pred, truth = _check(pred, truth)
    n = truth.size
    if n == 0:
        return 0.0
    conf = pred.max(axis=1)
    correct = (_seeded_argmax(pred, seed) == truth).astype(np.float64)
    bins = bin_index(conf, cfg.n_bins)
    total = []
    for m in np.unique(bins):
        members = bins == m
        size = int(members.sum())
        # fsum is exactly rounded, so the result does not depend on sample order
        gap = abs(math.fsum(correct[members]) - math.fsum(conf[members])) / size
        total.append(size / n * gap)
    return float(math.fsum(total))
