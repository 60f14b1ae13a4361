"""Crowdsourced dataset container and file I/O.

Indices for tasks, workers and classes are 0-based everywhere. Votes are
kept as three parallel arrays sorted by (task, worker), which is the layout
every downstream algorithm consumes.

File formats:

* votes: JSON object ``{"<task>": {"<worker>": <class>, ...}, ...}``
* features: CSV, one row per task in task order, no header
* ground truth (optional): CSV, one integer class per line
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when dataset content violates an index or structural constraint."""


class DimensionError(ValueError):
    """Raised when array shapes disagree (feature rows, trace size, ...)."""


class DatasetFormatError(ValueError):
    """Raised when a votes/features file cannot be parsed."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CrowdDataset:
    """Tasks, sparse worker votes and an optional held-out ground truth.

    Build instances with :meth:`from_votes` or :func:`load_dataset`; the
    constructor expects already sorted, validated vote arrays.
    """

    n_task: int
    n_worker: int
    n_class: int
    features: np.ndarray
    vote_task: np.ndarray
    vote_worker: np.ndarray
    vote_label: np.ndarray
    ground_truth: Optional[np.ndarray] = field(default=None, compare=False)

    @classmethod
    def from_votes(
        cls,
        votes: Mapping[int, Mapping[int, int]],
        features,
        n_class: int,
        n_worker: Optional[int] = None,
        ground_truth=None,
    ) -> "CrowdDataset":
        """Validate a ``task -> {worker -> class}`` mapping and build a dataset.

        ``n_task`` is the number of feature rows, and every task must carry
        at least one vote. ``n_worker`` defaults to the largest worker index
        plus one.
        """
        if n_class < 1:
            raise ValidationError(f"n_class must be positive, got {n_class}")
        if len(votes) == 0:
            raise ValidationError("no tasks: the votes mapping is empty")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2:
            raise DimensionError(f"features must be a matrix, got shape {features.shape}")

        triples = []
        for task, answers in votes.items():
            task = int(task)
            if task < 0:
                raise ValidationError(f"negative task index {task}")
            for worker, label in answers.items():
                worker, label = int(worker), int(label)
                if worker < 0:
                    raise ValidationError(f"task {task}: negative worker index {worker}")
                if not 0 <= label < n_class:
                    raise ValidationError(
                        f"task {task}, worker {worker}: class index {label} "
                        f"outside [0, {n_class - 1}]"
                    )
                triples.append((task, worker, label))
        if not triples:
            raise ValidationError("no votes: every task has an empty annotator set")

        arr = np.array(sorted(triples), dtype=np.int64)
        max_task = int(arr[:, 0].max())
        if features.shape[0] < max_task + 1:
            raise DimensionError(
                f"features have {features.shape[0]} rows but votes reference task {max_task}"
            )
        n_task = features.shape[0]
        seen = np.zeros(n_task, dtype=bool)
        seen[arr[:, 0]] = True
        if not seen.all():
            missing = np.flatnonzero(~seen)
            raise ValidationError(
                f"task {int(missing[0])} has no votes ({missing.size} task(s) without votes)"
            )

        max_worker = int(arr[:, 1].max())
        if n_worker is None:
            n_worker = max_worker + 1
        elif max_worker >= n_worker:
            raise ValidationError(f"worker index {max_worker} >= n_worker={n_worker}")

        if ground_truth is not None:
            ground_truth = np.asarray(ground_truth, dtype=np.int64)
            if ground_truth.shape != (n_task,):
                raise DimensionError(
                    f"ground truth has {ground_truth.shape[0]} entries, expected {n_task}"
                )
            if ground_truth.min() < 0 or ground_truth.max() >= n_class:
                raise ValidationError("ground-truth class index out of range")
            ground_truth = _readonly(ground_truth.copy())

        return cls(
            n_task=n_task,
            n_worker=int(n_worker),
            n_class=int(n_class),
            features=_readonly(features.copy()),
            vote_task=_readonly(arr[:, 0].copy()),
            vote_worker=_readonly(arr[:, 1].copy()),
            vote_label=_readonly(arr[:, 2].copy()),
            ground_truth=ground_truth,
        )

    @property
    def n_vote(self) -> int:
        return int(self.vote_task.size)

    @property
    def votes(self) -> dict[int, dict[int, int]]:
        """Nested ``task -> {worker -> class}`` view of the votes."""
        out: dict[int, dict[int, int]] = {}
        for i, j, y in zip(self.vote_task.tolist(), self.vote_worker.tolist(),
                           self.vote_label.tolist()):
            out.setdefault(i, {})[j] = y
        return out

    def vote_counts(self) -> np.ndarray:
        """(n_task, K) matrix of per-class vote counts."""
        counts = np.zeros((self.n_task, self.n_class))
        np.add.at(counts, (self.vote_task, self.vote_label), 1.0)
        return counts

    def subset(self, tasks: Sequence[int]) -> "CrowdDataset":
        """Dataset restricted to ``tasks`` (renumbered 0..len-1, workers kept)."""
        tasks = np.asarray(tasks, dtype=np.int64)
        if tasks.size == 0:
            raise ValidationError("no tasks: subset is empty")
        remap = np.full(self.n_task, -1, dtype=np.int64)
        remap[tasks] = np.arange(tasks.size)
        keep = remap[self.vote_task] >= 0
        votes: dict[int, dict[int, int]] = {}
        for i, j, y in zip(remap[self.vote_task[keep]].tolist(),
                           self.vote_worker[keep].tolist(), self.vote_label[keep].tolist()):
            votes.setdefault(i, {})[j] = y
        gt = None if self.ground_truth is None else self.ground_truth[tasks]
        return CrowdDataset.from_votes(
            votes, self.features[tasks], self.n_class, n_worker=self.n_worker, ground_truth=gt
        )

    def without_ground_truth(self) -> "CrowdDataset":
        return CrowdDataset(
            self.n_task, self.n_worker, self.n_class, self.features,
            self.vote_task, self.vote_worker, self.vote_label, None,
        )


def annotator_sets(d: CrowdDataset) -> dict[int, list[int]]:
    """A(x_i): task -> sorted list of workers who voted on it."""
    out: dict[int, list[int]] = {i: [] for i in range(d.n_task)}
    for i, j in zip(d.vote_task.tolist(), d.vote_worker.tolist()):
        out[i].append(j)
    return out


def tasks_sets(d: CrowdDataset) -> dict[int, list[int]]:
    """T(w_j): worker -> sorted list of tasks it answered (only active workers)."""
    out: dict[int, list[int]] = {}
    order = np.lexsort((d.vote_task, d.vote_worker))
    for i, j in zip(d.vote_task[order].tolist(), d.vote_worker[order].tolist()):
        out.setdefault(j, []).append(i)
    return out


def _parse_votes_json(text: str, source: str) -> dict:
    def no_duplicates(pairs):
        obj = {}
        for k, v in pairs:
            if k in obj:
                raise DatasetFormatError(f"{source}: duplicate key {k!r}")
            obj[k] = v
        return obj

    try:
        raw = json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1].strip() if 0 < exc.lineno <= len(lines) else ""
        raise DatasetFormatError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg} (near: {context[:60]!r})"
        ) from exc
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{source}: top-level JSON value must be an object")
    votes: dict[int, dict[int, int]] = {}
    for task, answers in raw.items():
        if not isinstance(answers, dict):
            raise DatasetFormatError(f"{source}: task {task!r} must map to an object")
        try:
            votes[int(task)] = {int(w): _as_class(c, task, w) for w, c in answers.items()}
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{source}: non-integer index in task {task!r}: {exc}") from exc
    return votes


def _as_class(c, task, worker) -> int:
    if isinstance(c, bool) or not isinstance(c, int):
        raise ValidationError(f"task {task}, worker {worker}: class {c!r} is not an integer")
    return c


def read_votes(path) -> dict[int, dict[int, int]]:
    path = Path(path)
    return _parse_votes_json(path.read_text(encoding="utf-8"), str(path))


def read_matrix(path) -> np.ndarray:
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    return m


def read_labels(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def load_dataset(votes_path, features_path, n_class: int, ground_truth_path=None) -> CrowdDataset:
    """Read a votes JSON file and a features CSV into a validated dataset."""
    votes = read_votes(votes_path)
    features = read_matrix(features_path)
    gt = None if ground_truth_path is None else read_labels(ground_truth_path)
    return CrowdDataset.from_votes(votes, features, n_class, ground_truth=gt)


def dump_votes(d: CrowdDataset) -> str:
    """Canonical votes JSON (sorted keys, compact separators)."""
    votes = {str(i): {str(j): y for j, y in ans.items()} for i, ans in d.votes.items()}
    return json.dumps(votes, sort_keys=True, separators=(",", ":"))


def save_dataset(d: CrowdDataset, votes_path, features_path=None, ground_truth_path=None) -> None:
    Path(votes_path).write_text(dump_votes(d) + "\n", encoding="utf-8")
    if features_path is not None:
        write_matrix(features_path, d.features)
    if ground_truth_path is not None and d.ground_truth is not None:
        write_labels(ground_truth_path, d.ground_truth)


def write_matrix(path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    with open(path, "w", encoding="utf-8") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for y in np.asarray(labels, dtype=np.int64):
            fh.write(f"{int(y)}\n")
