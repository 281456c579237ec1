"""End-to-end experiment orchestration and the budget/margin metrics.

A trial draws (or regenerates) the dataset, builds the split, trains the
clean model under the configured defense, selects targets, attacks each
one, and records traces. Aggregation turns traces into margin quantile
curves and interpolated adversary budgets with standard errors. Everything
is deterministic per master seed, independent of worker count.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__ as package_version
from .attack import (AttackConfig, AttackTrace, INFLUENCER, attack_target,
                     write_traces)
from .data import (BUDGET_COLUMNS, Dataset, MARGIN_COLUMNS, METRIC_COLUMNS,
                   SbmConfig, generate_sbm, load_dataset, write_results)
from .defense import low_rank_gcn_forward, low_rank_ops, remove_dissimilar_edges, truncated_svd
from .gcn import (SparseOps, TrainConfig, f1_macro, gcn_forward, gcn_train,
                  margins_from_probs, predictions_from_probs, surrogate_train)
from .graph import avg_training_neighbors, normalized_adjacency
from .selection import Split, make_split
from .seeds import derive_seed, rng as make_rng


@dataclass
class TargetCounts:
    high: int = 10
    low: int = 10
    random: int = 20

    @property
    def total(self) -> int:
        return self.high + self.low + self.random


@dataclass
class DefenseConfig:
    similarity: bool = False
    low_rank: int | None = None  # SVD rank, None disables


@dataclass
class ExperimentConfig:
    dataset: str | SbmConfig = field(default_factory=SbmConfig)
    selection_method: str = "random"
    train_frac: float = 0.1
    val_frac: float = 0.1
    stratified: bool = True
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_trials: int = 5
    targets: TargetCounts = field(default_factory=TargetCounts)
    success_threshold: float = 0.0
    quantiles: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    master_seed: int = 0
    regenerate_sbm_per_trial: bool = True

    def to_json_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.dataset, SbmConfig):
            out["dataset"] = {"sbm": asdict(self.dataset)}
        else:
            out["dataset"] = {"path": str(self.dataset)}
        out["quantiles"] = list(self.quantiles)
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        ds_spec = payload.get("dataset", {})
        if "sbm" in ds_spec:
            sbm = dict(ds_spec["sbm"])
            if "block_sizes" in sbm:
                sbm["block_sizes"] = tuple(sbm["block_sizes"])
            payload["dataset"] = SbmConfig(**sbm)
        elif "path" in ds_spec:
            payload["dataset"] = ds_spec["path"]
        else:
            raise ValueError("dataset must specify 'path' or 'sbm'")
        payload["attack"] = AttackConfig(**payload.get("attack", {}))
        payload["defense"] = DefenseConfig(**payload.get("defense", {}))
        payload["train"] = TrainConfig(**payload.get("train", {}))
        payload["targets"] = TargetCounts(**payload.get("targets", {}))
        payload["quantiles"] = tuple(payload.get("quantiles", cls.quantiles))
        return cls(**payload)


def select_targets(test_nodes: np.ndarray, margins: np.ndarray,
                   correct: np.ndarray, counts: TargetCounts,
                   seed: int) -> np.ndarray:
    """Pick disjoint high-margin, low-margin, and random target groups.

    All groups come from correctly classified test nodes; margin ties break
    to the lower node index. If fewer nodes than requested are available,
    the groups shrink proportionally (with a warning).
    """
    test_nodes = np.asarray(test_nodes, dtype=np.int64)
    margins = np.asarray(margins, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    nodes = test_nodes[correct]
    node_margins = margins[correct]
    avail = nodes.size
    n_high, n_low, n_rand = counts.high, counts.low, counts.random
    if avail < counts.total:
        warnings.warn(f"only {avail} correctly classified nodes for "
                      f"{counts.total} requested targets; shrinking groups")
        n_high = avail * counts.high // counts.total
        n_low = avail * counts.low // counts.total
        n_rand = avail - n_high - n_low

    by_high = nodes[np.lexsort((nodes, -node_margins))]
    high = by_high[:n_high]
    taken = set(high.tolist())
    rest = np.asarray([n for n in nodes[np.lexsort((nodes, node_margins))]
                       if n not in taken], dtype=np.int64)
    low = rest[:n_low]
    taken.update(low.tolist())
    remaining = np.asarray(sorted(set(nodes.tolist()) - taken), dtype=np.int64)
    rng = make_rng(seed, "targets")
    rand = rng.choice(remaining, size=min(n_rand, remaining.size), replace=False)
    return np.concatenate([high, low, np.sort(rand)])


def expected_eval_steps(budget: int, stride: int) -> list[int]:
    steps = [0] + [s for s in range(stride, budget + 1, stride)]
    if steps[-1] != budget:
        steps.append(budget)
    return steps


def align_traces(traces: Sequence[AttackTrace], budget: int,
                 stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Margins matrix (trace x step) on the full evaluation grid.

    Exhausted traces stop perturbing early; their last recorded margin is
    carried forward, since the poisoned data no longer changes.
    """
    grid = expected_eval_steps(budget, stride)
    out = np.zeros((len(traces), len(grid)))
    for i, tr in enumerate(traces):
        have = dict(zip(tr.steps, tr.margins))
        last = tr.margins[0]
        for j, s in enumerate(grid):
            if s in have:
                last = have[s]
            elif not tr.exhausted and s <= max(tr.steps):
                raise ValueError(f"trace for target {tr.target} missing step {s}")
            out[i, j] = last
    return np.asarray(grid), out


def margin_quantile_curve(traces: Sequence[AttackTrace], q: float
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Quantile of target margins at each shared evaluation step.

    Quantiles interpolate linearly between closest order statistics. All
    traces must have been evaluated on the same steps.
    """
    if not traces:
        raise ValueError("no traces")
    steps0 = traces[0].steps
    for tr in traces:
        if tr.steps != steps0:
            raise ValueError("traces do not share evaluation steps")
    values = np.asarray([tr.margins for tr in traces])
    return np.asarray(steps0), np.quantile(values, q, axis=0, method="linear")


def required_budget(curve: Sequence[float], tau: float,
                    steps: Sequence[int] | None = None,
                    budget: int | None = None) -> float:
    """Smallest perturbation count where the curve crosses down to tau.

    Linear interpolation between evaluated steps; if the curve never
    reaches tau the result is budget + 1. A curve that starts at or below
    tau returns 0 with a warning (degenerate input).
    """
    values = np.asarray(curve, dtype=np.float64)
    xs = np.arange(values.size) if steps is None else np.asarray(steps, dtype=np.float64)
    if values.size == 0 or xs.size != values.size:
        raise ValueError("curve and steps must be nonempty and aligned")
    cap = float(xs[-1] if budget is None else budget) + 1.0
    if values[0] <= tau:
        warnings.warn("margin curve starts at or below the threshold")
        return 0.0
    below = np.flatnonzero(values <= tau)
    if below.size == 0:
        return cap
    i = int(below[0])
    frac = (values[i - 1] - tau) / (values[i - 1] - values[i])
    return float(xs[i - 1] + frac * (xs[i] - xs[i - 1]))


def budget_vs_success(trials_traces: Sequence[Sequence[AttackTrace]],
                      quantiles: Sequence[float], tau: float,
                      budget: int, stride: int = 1) -> list[dict]:
    """Mean and standard error of the required budget per success level.

    The standard error is the sample standard deviation over trials divided
    by sqrt(n_trials); a single trial reports stderr 0 with a flag.
    """
    if not trials_traces:
        raise ValueError("need at least one trial")
    single = len(trials_traces) == 1
    rows = []
    for q in quantiles:
        budgets = []
        for traces in trials_traces:
            xs, values = align_traces(traces, budget, stride)
            curve = np.quantile(values, q, axis=0, method="linear")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                budgets.append(required_budget(curve, tau, steps=xs, budget=budget))
        budgets = np.asarray(budgets)
        stderr = 0.0 if single else float(budgets.std(ddof=1) / np.sqrt(budgets.size))
        rows.append({"success_prob": q, "budget_mean": float(budgets.mean()),
                     "budget_stderr": stderr, "single_trial": single})
    return rows


def make_evaluator(cfg: ExperimentConfig, ds: Dataset, split: Split):
    """Defense-aware retraining closure: (graph, features, seed) -> probs."""
    train_cfg = cfg.train
    defense = cfg.defense

    def evaluate(graph, features, seed: int) -> np.ndarray:
        g = remove_dissimilar_edges(graph, features) if defense.similarity else graph
        ahat = normalized_adjacency(g, train_cfg.self_loops).matrix
        if defense.low_rank:
            rank = defense.low_rank
            a_f = truncated_svd(ahat, rank, seed=derive_seed(seed, "svd-a"))
            x_f = truncated_svd(features, rank, seed=derive_seed(seed, "svd-x"))
            ops = low_rank_ops(a_f, x_f)
            params = gcn_train(ds, split, replace(train_cfg, seed=seed), ops=ops)
            return low_rank_gcn_forward(params, a_f, x_f)
        ops = SparseOps(ahat, features)
        params = gcn_train(ds, split, replace(train_cfg, seed=seed), ops=ops)
        return gcn_forward(params, ahat, features)

    return evaluate


@dataclass
class TrialResult:
    trial: int
    traces: list[AttackTrace]
    avg_training_neighbors: float
    macro_f1: float
    n_targets: int
    seed: int


def _trial_dataset(cfg: ExperimentConfig, trial: int) -> Dataset:
    if isinstance(cfg.dataset, SbmConfig):
        if cfg.regenerate_sbm_per_trial:
            seed = derive_seed(cfg.master_seed, "sbm", trial)
            return generate_sbm(replace(cfg.dataset, seed=seed))
        return generate_sbm(cfg.dataset)
    return load_dataset(cfg.dataset)


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialResult:
    trial_seed = derive_seed(cfg.master_seed, "trial", trial)
    ds = _trial_dataset(cfg, trial)
    split = make_split(ds, cfg.selection_method, cfg.train_frac, cfg.val_frac,
                       seed=derive_seed(trial_seed, "split"),
                       stratified=cfg.stratified)
    evaluator = make_evaluator(cfg, ds, split)
    clean_probs = evaluator(ds.graph, ds.features, derive_seed(trial_seed, "clean"))

    eq2 = avg_training_neighbors(ds.graph, split.train)
    _, _, test_mask = split.masks()
    f1 = f1_macro(predictions_from_probs(clean_probs), ds.labels, test_mask,
                  n_classes=ds.n_classes)

    test_margins = margins_from_probs(clean_probs[split.test],
                                      ds.labels[split.test])
    correct = test_margins > 0
    if cfg.attack.mode == INFLUENCER:
        correct &= ds.graph.degrees()[split.test] > 0
    targets = select_targets(split.test, test_margins, correct, cfg.targets,
                             seed=derive_seed(trial_seed, "targets"))

    surrogate = surrogate_train(
        ds, split, replace(cfg.train, seed=derive_seed(trial_seed, "surrogate")))
    attack_cfg = replace(cfg.attack, seed=derive_seed(trial_seed, "attack"))
    traces = []
    for target in targets:
        trace = attack_target(ds, split, int(target), attack_cfg,
                              train_cfg=cfg.train, surrogate=surrogate,
                              evaluator=evaluator, clean_probs=clean_probs)
        trace.config["trial"] = trial
        traces.append(trace)
    return TrialResult(trial=trial, traces=traces, avg_training_neighbors=eq2,
                       macro_f1=f1, n_targets=len(traces), seed=trial_seed)


def _trial_worker(args: tuple) -> TrialResult:
    cfg_payload, trial = args
    return run_trial(ExperimentConfig.from_json_dict(cfg_payload), trial)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list[TrialResult]
    budget_rows: list[dict]
    margin_rows: list[dict]
    metric_rows: list[dict]
    manifest: dict

    @property
    def traces_by_trial(self) -> list[list[AttackTrace]]:
        return [t.traces for t in self.trials]


def aggregate_results(cfg: ExperimentConfig,
                      trials: Sequence[TrialResult]) -> tuple[list, list, list]:
    budget = cfg.attack.budget
    stride = cfg.attack.eval_stride
    budget_rows = []
    for row in budget_vs_success([t.traces for t in trials], cfg.quantiles,
                                 cfg.success_threshold, budget, stride):
        budget_rows.append({"method": cfg.selection_method,
                            "success_prob": row["success_prob"],
                            "budget_mean": row["budget_mean"],
                            "budget_stderr": row["budget_stderr"]})
    margin_rows = []
    for t in trials:
        xs, values = align_traces(t.traces, budget, stride)
        for q in cfg.quantiles:
            curve = np.quantile(values, q, axis=0, method="linear")
            for step, val in zip(xs, curve):
                margin_rows.append({"trial": t.trial, "method": cfg.selection_method,
                                    "surface": cfg.attack.surface,
                                    "mode": cfg.attack.mode, "quantile": q,
                                    "perturbations": int(step),
                                    "margin": float(val)})
    metric_rows = [{"trial": t.trial, "method": cfg.selection_method,
                    "avg_training_neighbors": t.avg_training_neighbors,
                    "macro_f1": t.macro_f1} for t in trials]
    return budget_rows, margin_rows, metric_rows


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   jobs: int = 1) -> ExperimentResult:
    """Run all trials, aggregate, and (optionally) write the output files.

    Output files: traces.jsonl, margins.csv, budgets.csv, metrics.csv and
    manifest.json. Identical configs give byte-identical CSVs regardless of
    ``jobs``.
    """
    started = time.time()
    if jobs > 1 and cfg.n_trials > 1:
        payload = cfg.to_json_dict()
        with ProcessPoolExecutor(max_workers=min(jobs, cfg.n_trials)) as pool:
            trials = list(pool.map(_trial_worker,
                                   [(payload, t) for t in range(cfg.n_trials)]))
    else:
        trials = [run_trial(cfg, t) for t in range(cfg.n_trials)]
    trials.sort(key=lambda t: t.trial)
    budget_rows, margin_rows, metric_rows = aggregate_results(cfg, trials)
    manifest = {
        "config": cfg.to_json_dict(),
        "package_version": package_version,
        "numpy_version": np.__version__,
        "trial_seeds": [t.seed for t in trials],
        "n_targets": [t.n_targets for t in trials],
        "elapsed_seconds": time.time() - started,
    }
    result = ExperimentResult(config=cfg, trials=trials, budget_rows=budget_rows,
                              margin_rows=margin_rows, metric_rows=metric_rows,
                              manifest=manifest)
    if out_dir is not None:
        write_experiment_outputs(result, out_dir)
    return result


def write_experiment_outputs(result: ExperimentResult, out_dir: str | Path) -> None:
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results(result.margin_rows, out_dir / "margins.csv", MARGIN_COLUMNS)
    write_results(result.budget_rows, out_dir / "budgets.csv", BUDGET_COLUMNS)
    write_results(result.metric_rows, out_dir / "metrics.csv", METRIC_COLUMNS)
    all_traces = [tr for t in result.trials for tr in t.traces]
    write_traces(all_traces, out_dir / "traces.jsonl")
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(result.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
