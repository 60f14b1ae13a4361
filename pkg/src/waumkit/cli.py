"""Command-line front end.

Exit codes: 0 on success, 1 on invalid input, 2 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from waumkit.aggregation import EmConfig, dawid_skene
from waumkit.data import (
    CrowdDataset,
    DatasetFormatError,
    DimensionError,
    ValidationError,
    load_dataset,
    read_labels,
    read_matrix,
    read_votes,
    save_dataset,
    write_matrix,
)
from waumkit.glad import GladConfig, glad
from waumkit.identification import identify
from waumkit.metrics import EceConfig, accuracy, ece
from waumkit.pipeline import (
    STRATEGIES,
    PipelineConfig,
    StageError,
    aggregate,
    format_results,
    format_table,
    run_pipeline,
    three_circles_config,
)
from waumkit.simulation import (
    TaskSet,
    WorkerSpec,
    generate_tasks,
    simulate_votes,
    three_circles_spec,
    three_circles_workers,
)
from waumkit.trainer import MlpSpec, NumericalError, TrainConfig, predict_proba, train_with_trace

logger = logging.getLogger("waumkit")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _hidden(text: str) -> tuple:
    try:
        sizes = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}") from exc
    if not sizes:
        raise argparse.ArgumentTypeError("need at least one hidden layer")
    return sizes


def _epochs(text: str) -> tuple:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _out(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_probs(path) -> np.ndarray:
    """Soft labels or predictions from a JSON array of rows or a CSV matrix."""
    if str(path).endswith(".json"):
        return np.asarray(_read_json(path), dtype=np.float64)
    return read_matrix(path)


def _load(args) -> CrowdDataset:
    if args.features is None:
        # aggregation is feature-blind: one empty feature row per task
        votes = read_votes(args.votes)
        n_task = max(votes, default=-1) + 1
        return CrowdDataset.from_votes(votes, np.zeros((n_task, 0)), args.n_class)
    return load_dataset(args.votes, args.features, args.n_class)


def _add_train_flags(p, epochs: int) -> None:
    p.add_argument("--spec", "--hidden", dest="hidden", type=_hidden, default=(30, 20, 20),
                   help="comma-separated hidden layer sizes")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--lr-decay-epochs", type=_epochs, default=())


def _train_cfg(args, shuffle_seed: int) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                       momentum=args.momentum, weight_decay=args.weight_decay,
                       lr_decay_epochs=args.lr_decay_epochs, shuffle_seed=shuffle_seed)


def cmd_simulate(args) -> int:
    spec = replace(three_circles_spec(), generator=args.generator, seed=args.seed)
    if args.n_task is not None:
        spec = replace(spec, n_task=args.n_task)
    if args.noise is not None:
        spec = replace(spec, noise=args.noise)
    if args.n_class is not None:
        spec = replace(spec, n_class=args.n_class)
    spec = replace(spec)  # re-validate
    if args.workers:
        workers = [WorkerSpec.from_dict(w) for w in _read_json(args.workers)]
    else:
        workers = three_circles_workers(args.seed)
    train, test = generate_tasks(spec)
    d = simulate_votes(train, workers, spec.n_class, args.votes_per_task, seed=args.seed)
    save_dataset(d, _out(args, "votes.json"), _out(args, "features.csv"),
                 _out(args, "truth.csv"))
    write_matrix(_out(args, "test_features.csv"), test.features)
    np.savetxt(_out(args, "test_truth.csv"), test.truth, fmt="%d")
    np.savetxt(_out(args, "hard.csv"), train.hard.astype(int), fmt="%d")
    logger.info("wrote %d tasks, %d votes and %d test tasks to %s",
                d.n_task, d.n_vote, len(test), args.out_dir)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    d = _load(args)
    em = EmConfig(epsilon=args.epsilon, max_iter=args.max_iter)
    gc = GladConfig(epsilon=args.epsilon)
    labels = aggregate(d, args.strategy, seed=args.seed, em=em, glad_cfg=gc)
    out = Path(args.out) if args.out else _out(args, f"labels_{args.strategy}.json")
    _write_json(out, labels.tolist())
    if args.dump_params:
        if args.strategy == "glad":
            st = glad(d, gc)
            params = {"alpha": st.abilities.tolist(), "beta": st.difficulties.tolist(),
                      "converged": st.converged, "n_iter": st.n_iter}
        elif args.strategy in ("ds", "wds"):
            st = dawid_skene(d, em)
            params = {"confusions": st.confusions.tolist(), "prevalence": st.prevalence.tolist(),
                      "converged": st.converged, "n_iter": st.n_iter}
        else:
            raise ValidationError(f"--dump-params is not available for {args.strategy!r}")
        _write_json(args.dump_params, params)
    logger.info("wrote %s", out)
    return EXIT_OK


def cmd_train(args) -> int:
    features = read_matrix(args.features)
    targets = _read_probs(args.labels)
    if targets.ndim == 1:
        targets = np.eye(args.n_class or int(targets.max()) + 1)[targets.astype(int)]
    spec = MlpSpec(features.shape[1], targets.shape[1], args.hidden, seed=args.seed)
    model, trace = train_with_trace(spec, _train_cfg(args, args.seed), features, targets)
    out = Path(args.trace_out) if args.trace_out else _out(args, "trace.json")
    trace.save(out)
    if args.predict:
        pred = predict_proba(model, read_matrix(args.predict))
        pred_out = Path(args.pred_out) if args.pred_out else _out(args, "predictions.json")
        _write_json(pred_out, pred.tolist())
    logger.info("trained %d epochs, trace %s written to %s", args.epochs, trace.shape, out)
    return EXIT_OK


def cmd_identify(args) -> int:
    d = _load(args)
    spec = MlpSpec(d.features.shape[1], d.n_class, args.hidden, seed=args.seed)
    rep = identify(d, args.method, spec, _train_cfg(args, args.seed), alpha=args.alpha,
                   mv_seed=args.seed)
    out = Path(args.out) if args.out else _out(args, f"identify_{rep.method}.json")
    out.write_text(rep.to_json() + "\n", encoding="utf-8")
    logger.info("%s: threshold %.4f, pruned %d of %d tasks", rep.method, rep.threshold,
                rep.pruned_tasks.size, d.n_task)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = _read_probs(args.pred)
    truth = read_labels(args.truth)
    res = {"accuracy": accuracy(pred, truth, args.seed),
           "ece": ece(pred, truth, EceConfig(args.bins), args.seed)}
    res["one_minus_ece"] = 1.0 - res["ece"]
    if args.out:
        _write_json(args.out, res)
    print(" ".join(f"{k}={v:.4f}" for k, v in res.items()))
    return EXIT_OK


def _finish_pipeline(args, cfg: PipelineConfig, dataset=None, test=None) -> int:
    rows = run_pipeline(cfg, dataset=dataset, test=test)
    out = _out(args, "results.json")
    out.write_text(format_results(rows), encoding="utf-8")
    if not args.quiet:
        print(format_table(rows))
    logger.info("results written to %s", out)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    raw.setdefault("master_seed", args.seed)
    if args.repeat is not None:
        raw["repeat"] = args.repeat
    if args.strategy is not None:
        raw["strategy"] = args.strategy
    if args.alpha is not None:
        raw["alpha"] = args.alpha
    cfg = PipelineConfig.from_dict(raw)
    dataset = test = None
    if args.votes:
        if not (args.features and args.test_features and args.test_truth and args.n_class):
            raise ValidationError("--votes needs --features, --n-class, --test-features "
                                  "and --test-truth")
        dataset = _load(args)
        tx, ty = read_matrix(args.test_features), read_labels(args.test_truth)
        test = TaskSet(tx, ty, np.zeros(ty.size, dtype=bool))
    return _finish_pipeline(args, cfg, dataset, test)


def cmd_repro(args) -> int:
    cfg = three_circles_config(repeat=args.repeat, master_seed=args.seed)
    return _finish_pipeline(args, cfg)


def build_parser() -> argparse.ArgumentParser:
    def shared(suppress: bool):
        # subcommand copies must not overwrite a value given before the subcommand
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--seed", type=int, help="master seed", **(kw or {"default": 0}))
        p.add_argument("--out-dir", help="directory for output files", **(kw or {"default": "."}))
        p.add_argument("--quiet", action="store_true", help="only print errors", **kw)
        return p

    parser = argparse.ArgumentParser(prog="waumkit", parents=[shared(False)],
                                     description="Crowdsourced label aggregation with "
                                                 "ambiguous-task pruning.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[shared(True)], help=help_)
        p.set_defaults(func=fn)
        return p

    def dataset_flags(p, required=True, features=True):
        p.add_argument("--votes", required=required, default=None)
        p.add_argument("--features", required=required and features, default=None)
        p.add_argument("--n-class", type=int, required=required, default=None)

    p = add("simulate", cmd_simulate, "simulate tasks and crowd votes")
    p.add_argument("--generator", choices=("circles", "moons", "blobs"), default="circles")
    p.add_argument("--n-task", type=int, default=None)
    p.add_argument("--n-class", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--workers", default=None, help="JSON list of worker specs")
    p.add_argument("--votes-per-task", type=int, default=None)

    p = add("aggregate", cmd_aggregate, "aggregate votes into soft labels")
    dataset_flags(p, features=False)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out", default=None)
    p.add_argument("--dump-params", default=None, help="write fitted model parameters here")

    p = add("train", cmd_train, "train the MLP and record the margin trace")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="JSON soft labels or CSV matrix")
    p.add_argument("--n-class", type=int, default=None)
    _add_train_flags(p, epochs=50)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--predict", default=None, help="features CSV to predict on")
    p.add_argument("--pred-out", default=None)

    p = add("identify", cmd_identify, "score tasks (aumc, waum, waum-ww) and prune")
    dataset_flags(p)
    p.add_argument("--method", choices=("aumc", "waum", "waum-ww"), default="waum")
    p.add_argument("--alpha", type=float, default=0.1)
    _add_train_flags(p, epochs=50)
    p.add_argument("--out", default=None)

    p = add("evaluate", cmd_evaluate, "accuracy and ECE of predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--out", default=None)

    p = add("pipeline", cmd_pipeline, "full pipeline from a JSON config")
    p.add_argument("--config", default=None)
    p.add_argument("--repeat", type=int, default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--alpha", type=float, default=None)
    dataset_flags(p, required=False)
    p.add_argument("--test-features", default=None)
    p.add_argument("--test-truth", default=None)

    p = add("repro-three-circles", cmd_repro, "reproduce the simulated three_circles table")
    p.add_argument("--repeat", type=int, default=10)
    return parser


def _configure_logging(quiet: bool) -> None:
    # package logger only, so repeated in-process calls do not stack handlers
    log = logging.getLogger("waumkit")
    for h in [h for h in log.handlers if getattr(h, "_waumkit_cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._waumkit_cli = True
    log.addHandler(handler)
    log.setLevel(logging.ERROR if quiet else logging.INFO)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        numerical = isinstance(exc.cause, ArithmeticError)
        return EXIT_NUMERICAL if numerical else EXIT_INVALID
    except (ValidationError, DimensionError, DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
