"""End-to-end experiment: simulate -> identify -> prune -> aggregate -> retrain -> evaluate."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from waumkit.aggregation import EmConfig, dawid_skene, majority_vote, naive_soft, weighted_ds
from waumkit.data import CrowdDataset, ValidationError
from waumkit.glad import GladConfig, glad
from waumkit.identification import aumc, identify, prune
from waumkit.metrics import EceConfig, accuracy, ece
from waumkit.simulation import (
    SyntheticSpec,
    TaskSet,
    WorkerSpec,
    generate_tasks,
    simulate_votes,
    three_circles_spec,
    three_circles_workers,
)
from waumkit.trainer import MlpSpec, TrainConfig, predict_proba, train_with_trace

logger = logging.getLogger(__name__)

STRATEGIES = ("mv", "ns", "ds", "wds", "glad")
IDENTIFICATIONS = ("waum", "aumc", "waum_worker_wise")


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def stage_seed(master_seed: int, stage: str, repetition: int) -> int:
    """Independent 31-bit seed for one (stage, repetition) pair."""
    digest = hashlib.sha256(f"{master_seed}/{stage}/{repetition}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31 - 1)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of one experiment.

    ``runs`` lists (strategy, alpha) rows; when empty a single row
    (``strategy``, ``alpha``) is run. ``alpha == 0`` disables pruning.
    """

    strategy: str = "wds"
    alpha: float = 0.1
    runs: tuple = ()
    identification: str = "waum"
    repeat: int = 10
    master_seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=lambda: three_circles_spec())
    workers: tuple = ()
    votes_per_task: Optional[object] = None
    ident_hidden: tuple = (30, 20, 20)
    ident_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    retrain_hidden: tuple = (30, 20, 20)
    retrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=150, lr_decay_epochs=(50, 100)))
    em: EmConfig = field(default_factory=EmConfig)
    glad: GladConfig = field(default_factory=GladConfig)
    ece: EceConfig = field(default_factory=EceConfig)

    def __post_init__(self):
        for strategy, alpha in self.run_list():
            if strategy not in STRATEGIES:
                raise ValidationError(f"unknown strategy {strategy!r}")
            if not 0.0 <= alpha <= 1.0:
                raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
        if self.identification not in IDENTIFICATIONS:
            raise ValidationError(f"unknown identification {self.identification!r}")
        if self.repeat < 1:
            raise ValidationError("repeat must be >= 1")

    def run_list(self) -> list:
        runs = self.runs or ((self.strategy, self.alpha),)
        return [(str(s), float(a)) for s, a in runs]

    def worker_list(self) -> list:
        return list(self.workers) if self.workers else three_circles_workers()

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        """Build from a JSON-style dict; nested stage configs are dicts too."""
        raw = dict(raw)
        kw = {}
        if "synthetic" in raw:
            syn = dict(raw.pop("synthetic"))
            if "sector" in syn:
                syn["sector"] = tuple(syn["sector"])
            kw["synthetic"] = replace(three_circles_spec(), **syn)
        if "workers" in raw:
            kw["workers"] = tuple(WorkerSpec.from_dict(w) for w in raw.pop("workers"))
        for name, typ in (("ident_train", TrainConfig), ("retrain", TrainConfig),
                          ("em", EmConfig), ("glad", GladConfig), ("ece", EceConfig)):
            if name in raw:
                sub = dict(raw.pop(name))
                if "lr_decay_epochs" in sub:
                    sub["lr_decay_epochs"] = tuple(sub["lr_decay_epochs"])
                kw[name] = typ(**sub)
        for name in ("runs", "ident_hidden", "retrain_hidden"):
            if name in raw:
                val = raw.pop(name)
                kw[name] = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        if isinstance(raw.get("votes_per_task"), list):
            raw["votes_per_task"] = tuple(raw["votes_per_task"])
        kw.update(raw)
        return cls(**kw)


def aggregate(d: CrowdDataset, strategy: str, seed: int = 0, em: EmConfig = EmConfig(),
              glad_cfg: GladConfig = GladConfig()) -> np.ndarray:
    """Training targets (rows on the simplex) for ``strategy``."""
    if strategy == "mv":
        return np.eye(d.n_class)[majority_vote(d, seed)]
    if strategy == "ns":
        return naive_soft(d)
    if strategy == "ds":
        return dawid_skene(d, em).posteriors
    if strategy == "wds":
        return weighted_ds(d, dawid_skene(d, em).confusions)
    if strategy == "glad":
        return glad(d, glad_cfg).posteriors
    raise ValidationError(f"unknown strategy {strategy!r}")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValidationError, StageError):
        raise
    except (ArithmeticError, ValueError) as exc:
        raise StageError(name, exc) from exc


def run_repetition(cfg: PipelineConfig, rep: int, train: TaskSet = None, test: TaskSet = None,
                   dataset: CrowdDataset = None) -> list[dict]:
    """One seeded repetition; returns one record per (strategy, alpha) run."""
    seed = lambda stage: stage_seed(cfg.master_seed, stage, rep)  # noqa: E731
    K = cfg.synthetic.n_class if dataset is None else dataset.n_class
    if dataset is None:
        train, test = _stage("simulate", generate_tasks, replace(cfg.synthetic, seed=seed("tasks")))
        workers = [replace(w, seed=w.seed + seed("workers")) for w in cfg.worker_list()]
        dataset = _stage("simulate", simulate_votes, train, workers, K,
                         cfg.votes_per_task, seed("votes"))
    # aggregation and identification never see the ground truth
    d = dataset.without_ground_truth()

    scores = None
    if any(alpha > 0 for _, alpha in cfg.run_list()):
        ident_spec = MlpSpec(d.features.shape[1], K, cfg.ident_hidden, seed=seed("ident_init"))
        ident_cfg = replace(cfg.ident_train, shuffle_seed=seed("ident_shuffle"))
        rep_ = _stage("identify", identify, d, cfg.identification, ident_spec, ident_cfg,
                      alpha=0.0, em=cfg.em, mv_seed=seed("mv"))
        scores = rep_.scores

    records = []
    for strategy, alpha in cfg.run_list():
        if alpha > 0:
            _, mask = prune(scores, alpha)
            kept = np.flatnonzero(~mask)
        else:
            kept = np.arange(d.n_task)
        dp = d.subset(kept) if kept.size < d.n_task else d
        targets = _stage("aggregate", aggregate, dp, strategy, seed("mv"), cfg.em, cfg.glad)
        net_spec = MlpSpec(d.features.shape[1], K, cfg.retrain_hidden, seed=seed("retrain_init"))
        net_cfg = replace(cfg.retrain, shuffle_seed=seed("retrain_shuffle"))
        model, _ = _stage("retrain", train_with_trace, net_spec, net_cfg, dp.features, targets,
                          dp.features[:1])
        probs = predict_proba(model, test.features)
        records.append({
            "strategy": strategy if alpha == 0 else f"{strategy}+{cfg.identification}",
            "alpha": alpha,
            "accuracy": accuracy(probs, test.truth, seed=seed("eval")),
            "ece": ece(probs, test.truth, cfg.ece, seed=seed("eval")),
            "n_pruned": int(d.n_task - kept.size),
        })
    return records


def _mean_std(values: Sequence[float]):
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def summarize(per_rep: list[list[dict]]) -> list[dict]:
    """Mean and sample standard deviation per run over repetitions."""
    rows = []
    for k in range(len(per_rep[0])):
        recs = [r[k] for r in per_rep]
        acc_m, acc_s = _mean_std([r["accuracy"] for r in recs])
        ece_m, ece_s = _mean_std([r["ece"] for r in recs])
        rows.append({
            "strategy": recs[0]["strategy"],
            "alpha": recs[0]["alpha"],
            "acc_mean": acc_m,
            "acc_std": acc_s,
            "ece_mean": ece_m,
            "ece_std": ece_s,
        })
    return rows


def run_pipeline(cfg: PipelineConfig, dataset: CrowdDataset = None, test: TaskSet = None,
                 return_raw: bool = False):
    """Run ``cfg.repeat`` repetitions and summarize them like a results table.

    With ``dataset``/``test`` given, the data is fixed and only the training
    seeds change between repetitions; otherwise every repetition simulates
    fresh data.
    """
    if (dataset is None) != (test is None):
        raise ValidationError("pass both a training dataset and a test set, or neither")
    per_rep = [run_repetition(cfg, rep, dataset=dataset, test=test) for rep in range(cfg.repeat)]
    rows = summarize(per_rep)
    return (rows, per_rep) if return_raw else rows


def format_results(rows: list[dict]) -> str:
    """Stable JSON: sorted keys, floats with exactly 4 decimals."""
    def value(v):
        if isinstance(v, float):
            return "null" if not math.isfinite(v) else f"{v:.4f}"
        return json.dumps(v)

    lines = []
    for row in rows:
        body = ", ".join(f"{json.dumps(k)}: {value(row[k])}" for k in sorted(row))
        lines.append("  {" + body + "}")
    return "[\n" + ",\n".join(lines) + "\n]\n"


def format_table(rows: list[dict]) -> str:
    """Human-readable table (reports 1 - ECE)."""
    out = [f"{'strategy':<24}{'alpha':>7}  {'acc':>15}  {'1-ECE':>15}"]
    for r in rows:
        out.append(
            f"{r['strategy']:<24}{r['alpha']:>7.3g}  "
            f"{r['acc_mean']:.3f} +/- {r['acc_std']:.3f}  "
            f"{1 - r['ece_mean']:.3f} +/- {r['ece_std']:.3f}"
        )
    return "\n".join(out)


def three_circles_config(repeat: int = 10, master_seed: int = 0,
                         alphas: Sequence[float] = (0.01, 0.1, 0.25)) -> PipelineConfig:
    """The simulated three_circles table: plain aggregations, then WDS + WAUM."""
    runs = tuple((s, 0.0) for s in STRATEGIES) + tuple(("wds", a) for a in alphas)
    return PipelineConfig(runs=runs, repeat=repeat, master_seed=master_seed)


__all__ = [
    "PipelineConfig",
    "StageError",
    "aggregate",
    "aumc",
    "format_results",
    "format_table",
    "run_pipeline",
    "run_repetition",
    "stage_seed",
    "summarize",
    "three_circles_config",
]
