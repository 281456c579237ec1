"""Command-line interface: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every subcommand
prints a one-line JSON summary on stdout; data goes to files.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (ADAPTED, ADAPTED_NONE, AttackConfig, INFLUENCER, MODES,
                     SURFACES, attack_target, write_traces)
from .data import SbmConfig, generate_sbm, load_dataset, save_dataset
from .defense import remove_dissimilar_edges, save_factors, truncated_svd
from .gcn import (TrainConfig, f1_macro, gcn_forward, gcn_train,
                  margins_from_probs, predictions_from_probs, save_checkpoint,
                  surrogate_train)
from .graph import normalized_adjacency
from .harness import (ExperimentConfig, TargetCounts, run_experiment,
                      select_targets)
from .selection import METHODS, load_split, make_split, save_split
from .seeds import derive_seed


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(f"{self.prog}: error: {message}")


_FORMATTER = functools.partial(argparse.ArgumentDefaultsHelpFormatter, width=96)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", type=int, default=16, help="hidden layer width")
    p.add_argument("--learning-rate", type=float, default=0.01, help="Adam step size")
    p.add_argument("--weight-decay", type=float, default=5e-4,
                   help="L2 penalty on the first-layer weights")
    p.add_argument("--max-epochs", type=int, default=200, help="training epoch cap")
    p.add_argument("--patience", type=int, default=30,
                   help="early-stopping patience on validation loss")
    p.add_argument("--dropout", type=float, default=0.5, help="dropout probability")
    p.add_argument("--no-bias", action="store_true", help="disable bias terms")
    p.add_argument("--self-loops", action="store_true",
                   help="add self-loops before normalizing the adjacency")


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(hidden=args.hidden, learning_rate=args.learning_rate,
                       weight_decay=args.weight_decay, max_epochs=args.max_epochs,
                       patience=args.patience, dropout=args.dropout,
                       bias=not args.no_bias, self_loops=args.self_loops, seed=seed)


def build_parser() -> _Parser:
    parser = _Parser(prog="stratcover", formatter_class=_FORMATTER,
                     description="Training-set selection versus poisoning attacks "
                                 "on GCN vertex classification.")
    parser.add_argument("--version", action="version", version=f"stratcover {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("sbm", formatter_class=_FORMATTER,
                       help="generate a stochastic blockmodel dataset directory")
    p.add_argument("--inprob", type=float, default=0.0125,
                   help="additional within-block connection probability")
    p.add_argument("--outprob", type=float, default=None,
                   help="between-block probability (default: 0.004 - 0.2*inprob)")
    p.add_argument("--blocks", default="400,400,400,400,400",
                   help="comma-separated block sizes")
    p.add_argument("--features", type=int, default=50, help="number of binary features")
    p.add_argument("--per-class-features", type=int, default=10,
                   help="features tied to each class")
    p.add_argument("--p-on", type=float, default=0.35,
                   help="probability of a class feature being on")
    p.add_argument("--p-off", type=float, default=0.1,
                   help="probability of any other feature being on")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("select", formatter_class=_FORMATTER,
                       help="build a train/validation/test split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--method", choices=METHODS, default="random",
                   help="training-set selection method")
    p.add_argument("--train-frac", type=float, default=0.1, help="training fraction")
    p.add_argument("--val-frac", type=float, default=0.1, help="validation fraction")
    p.add_argument("--no-stratify", action="store_true",
                   help="disable class stratification for random selection")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--out", required=True, help="output split JSON path")

    p = sub.add_parser("train", formatter_class=_FORMATTER,
                       help="train the GCN (or surrogate) and report metrics")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", required=True, help="split JSON path")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--surrogate", action="store_true",
                   help="train the linear two-hop surrogate instead of the GCN")
    p.add_argument("--out", required=True, help="output model checkpoint path")
    p.add_argument("--metrics-out", default=None, help="optional metrics JSON path")

    p = sub.add_parser("attack", formatter_class=_FORMATTER,
                       help="attack selected targets and emit margin traces")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", required=True, help="split JSON path")
    p.add_argument("--mode", choices=MODES, default="direct", help="attacker mode")
    p.add_argument("--surface", choices=SURFACES, default="structure",
                   help="perturbation surface")
    p.add_argument("--budget", type=int, default=50, help="maximum perturbations")
    p.add_argument("--adapted", choices=ADAPTED, default=ADAPTED_NONE,
                   help="training-set-preserving candidate filter")
    p.add_argument("--no-unnoticeable", action="store_true",
                   help="disable the degree-distribution unnoticeability filter")
    p.add_argument("--eval-stride", type=int, default=1,
                   help="retrain and record the margin every this many steps")
    p.add_argument("--targets", default=None,
                   help="comma-separated target nodes (default: auto-select)")
    p.add_argument("--n-high", type=int, default=10,
                   help="auto-selected high-margin targets")
    p.add_argument("--n-low", type=int, default=10,
                   help="auto-selected low-margin targets")
    p.add_argument("--n-random", type=int, default=20,
                   help="auto-selected random targets")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="attack seed")
    p.add_argument("--out", required=True, help="output traces JSONL path")

    p = sub.add_parser("defend", formatter_class=_FORMATTER,
                       help="emit a defended dataset (similarity) or factors (low-rank)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--defense", choices=("similarity", "low-rank"), required=True,
                   help="defense to apply")
    p.add_argument("--rank", type=int, default=10, help="low-rank SVD rank")
    p.add_argument("--self-loops", action="store_true",
                   help="add self-loops before normalizing (low-rank)")
    p.add_argument("--seed", type=int, default=0, help="SVD seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("experiment", formatter_class=_FORMATTER,
                       help="run a full experiment from a config JSON")
    p.add_argument("--config", required=True, help="experiment config JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=0,
                   help="trial parallelism; 0 = all cores")

    p = sub.add_parser("report", formatter_class=_FORMATTER,
                       help="turn traces into budget/margin CSVs and figures")
    p.add_argument("--traces", action="append", required=True, metavar="LABEL=PATH",
                   help="labeled traces file; repeatable")
    p.add_argument("--quantiles", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                   help="comma-separated success probabilities")
    p.add_argument("--threshold", type=float, default=0.0,
                   help="margin threshold counted as attacker success")
    p.add_argument("--no-figures", action="store_true",
                   help="write only the CSV tables")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_sbm(args) -> dict:
    blocks = tuple(int(b) for b in args.blocks.split(","))
    cfg = SbmConfig(block_sizes=blocks, inprob=args.inprob, outprob=args.outprob,
                    n_features=args.features,
                    per_class_feature_count=args.per_class_features,
                    p_feature_on_class=args.p_on, p_feature_off_class=args.p_off,
                    seed=args.seed)
    ds = generate_sbm(cfg)
    save_dataset(ds, args.out)
    return {"command": "sbm", "out": args.out, "n_nodes": ds.graph.n_nodes,
            "n_edges": ds.graph.n_edges, "n_classes": ds.n_classes,
            "within_prob": cfg.within_prob, "between_prob": cfg.between_prob}


def _cmd_select(args) -> dict:
    ds = load_dataset(args.data)
    split = make_split(ds, args.method, args.train_frac, args.val_frac,
                       seed=args.seed, stratified=not args.no_stratify)
    save_split(split, args.out)
    return {"command": "select", "out": args.out, "method": args.method,
            "n_train": int(split.train.size), "n_val": int(split.val.size),
            "n_test": int(split.test.size)}


def _cmd_train(args) -> dict:
    ds = load_dataset(args.data)
    split = load_split(args.split)
    cfg = _train_config(args, args.seed)
    if args.surrogate:
        params = surrogate_train(ds, split, cfg)
        save_checkpoint(params, args.out)
        metrics = {"kind": "surrogate"}
    else:
        params = gcn_train(ds, split, cfg)
        ahat = normalized_adjacency(ds.graph, cfg.self_loops).matrix
        probs = gcn_forward(params, ahat, ds.features)
        _, _, test_mask = split.masks()
        preds = predictions_from_probs(probs)
        test_margins = margins_from_probs(probs[split.test], ds.labels[split.test])
        metrics = {"kind": "gcn",
                   "macro_f1_test": f1_macro(preds, ds.labels, test_mask, ds.n_classes),
                   "test_accuracy": float(np.mean(preds[split.test] == ds.labels[split.test])),
                   "median_test_margin": float(np.median(test_margins))}
        save_checkpoint(params, args.out)
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, sort_keys=True)
            fh.write("\n")
    return {"command": "train", "out": args.out, **metrics}


def _cmd_attack(args) -> dict:
    ds = load_dataset(args.data)
    split = load_split(args.split)
    train_cfg = _train_config(args, derive_seed(args.seed, "train"))
    attack_cfg = AttackConfig(mode=args.mode, surface=args.surface,
                              budget=args.budget, adapted=args.adapted,
                              unnoticeable=not args.no_unnoticeable,
                              eval_stride=args.eval_stride, seed=args.seed)
    ahat = normalized_adjacency(ds.graph, train_cfg.self_loops).matrix
    clean_params = gcn_train(ds, split, replace(train_cfg,
                                                seed=derive_seed(args.seed, "clean")))
    clean_probs = gcn_forward(clean_params, ahat, ds.features)
    if args.targets:
        targets = np.asarray([int(t) for t in args.targets.split(",")], dtype=np.int64)
    else:
        test_margins = margins_from_probs(clean_probs[split.test],
                                          ds.labels[split.test])
        correct = test_margins > 0
        if attack_cfg.mode == INFLUENCER:
            correct &= ds.graph.degrees()[split.test] > 0
        targets = select_targets(split.test, test_margins, correct,
                                 TargetCounts(args.n_high, args.n_low, args.n_random),
                                 seed=derive_seed(args.seed, "targets"))
    surrogate = surrogate_train(ds, split,
                                replace(train_cfg, seed=derive_seed(args.seed, "surrogate")))
    traces = [attack_target(ds, split, int(t), attack_cfg, train_cfg=train_cfg,
                            surrogate=surrogate, clean_probs=clean_probs)
              for t in targets]
    write_traces(traces, args.out)
    return {"command": "attack", "out": args.out, "n_targets": len(traces),
            "mode": args.mode, "surface": args.surface, "budget": args.budget}


def _cmd_defend(args) -> dict:
    ds = load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.defense == "similarity":
        defended = remove_dissimilar_edges(ds.graph, ds.features)
        ds.graph = defended
        save_dataset(ds, out_dir)
        return {"command": "defend", "defense": "similarity", "out": str(out_dir),
                "n_edges": defended.n_edges}
    ahat = normalized_adjacency(ds.graph, args.self_loops).matrix
    a_f = truncated_svd(ahat, args.rank, seed=derive_seed(args.seed, "svd-a"))
    x_f = truncated_svd(ds.features, args.rank, seed=derive_seed(args.seed, "svd-x"))
    save_factors(a_f, out_dir / "adjacency_factors.json")
    save_factors(x_f, out_dir / "feature_factors.json")
    return {"command": "defend", "defense": "low-rank", "out": str(out_dir),
            "rank": args.rank,
            "files": ["adjacency_factors.json", "feature_factors.json"]}


def _cmd_experiment(args) -> dict:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = ExperimentConfig.from_json_dict(json.load(fh))
    jobs = args.jobs if args.jobs > 0 else (os.cpu_count() or 1)
    result = run_experiment(cfg, out_dir=args.out, jobs=jobs)
    return {"command": "experiment", "out": args.out, "n_trials": cfg.n_trials,
            "n_targets": result.manifest["n_targets"],
            "elapsed_seconds": round(result.manifest["elapsed_seconds"], 3)}


def _cmd_report(args) -> dict:
    from .report import write_report

    labeled = {}
    for item in args.traces:
        if "=" in item:
            label, path = item.split("=", 1)
        else:
            label, path = Path(item).stem, item
        labeled[label] = path
    quantiles = tuple(float(q) for q in args.quantiles.split(","))
    outputs = write_report(labeled, args.out, quantiles, args.threshold,
                           figures=not args.no_figures)
    return {"command": "report", "out": args.out, **outputs}


_COMMANDS = {"sbm": _cmd_sbm, "select": _cmd_select, "train": _cmd_train,
             "attack": _cmd_attack, "defend": _cmd_defend,
             "experiment": _cmd_experiment, "report": _cmd_report}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        summary = _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"stratcover {args.command}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
