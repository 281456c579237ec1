"""Turn attack traces into budget/margin tables and rendered figures.

The report path writes the delimited outputs (budgets.csv, margins.csv)
and, alongside them, matplotlib renderings of the budget-versus-success
curves (with standard-error bars) and the median-margin curves, one line
per labeled trace set.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .attack import AttackTrace, read_traces
from .data import BUDGET_COLUMNS, MARGIN_COLUMNS, write_results
from .harness import align_traces, budget_vs_success

FIG_SIZE = (4.2, 3.2)
FIG_DPI = 150


def group_traces_by_trial(traces: Sequence[AttackTrace]) -> list[list[AttackTrace]]:
    """Traces written by the harness carry their trial in config['trial']."""
    buckets: dict[int, list[AttackTrace]] = defaultdict(list)
    for tr in traces:
        buckets[int(tr.config.get("trial", 0))].append(tr)
    return [buckets[k] for k in sorted(buckets)]


def _trace_budget_stride(traces: Sequence[AttackTrace]) -> tuple[int, int]:
    cfg = traces[0].config
    return int(cfg.get("budget", max(traces[0].steps))), int(cfg.get("eval_stride", 1))


def report_tables(labeled_traces: dict[str, Sequence[AttackTrace]],
                  quantiles: Sequence[float], tau: float
                  ) -> tuple[list[dict], list[dict]]:
    """Budget and margin rows for one or more labeled trace sets."""
    budget_rows: list[dict] = []
    margin_rows: list[dict] = []
    for label, traces in labeled_traces.items():
        budget, stride = _trace_budget_stride(traces)
        trials = group_traces_by_trial(traces)
        for row in budget_vs_success(trials, quantiles, tau, budget, stride):
            budget_rows.append({"method": label,
                                "success_prob": row["success_prob"],
                                "budget_mean": row["budget_mean"],
                                "budget_stderr": row["budget_stderr"]})
        surface = traces[0].config.get("surface", "")
        mode = traces[0].config.get("mode", "")
        for trial_idx, trial in enumerate(trials):
            xs, values = align_traces(trial, budget, stride)
            for q in quantiles:
                curve = np.quantile(values, q, axis=0, method="linear")
                for step, val in zip(xs, curve):
                    margin_rows.append({"trial": trial_idx, "method": label,
                                        "surface": surface, "mode": mode,
                                        "quantile": q,
                                        "perturbations": int(step),
                                        "margin": float(val)})
    return budget_rows, margin_rows


def render_budget_figure(budget_rows: Sequence[dict], path: Path) -> None:
    """Required budget vs. attack success probability, error bars = stderr."""
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    by_label: dict[str, list[dict]] = defaultdict(list)
    for row in budget_rows:
        by_label[row["method"]].append(row)
    for label, rows in by_label.items():
        rows = sorted(rows, key=lambda r: r["success_prob"])
        x = [r["success_prob"] for r in rows]
        y = [r["budget_mean"] for r in rows]
        err = [r["budget_stderr"] for r in rows]
        ax.errorbar(x, y, yerr=err, marker="o", markersize=3, capsize=2, label=label)
    ax.set_xlabel("attack success probability")
    ax.set_ylabel("required budget (perturbations)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def render_margin_figure(margin_rows: Sequence[dict], path: Path,
                         quantile: float = 0.5) -> None:
    """Margin quantile (median by default) vs. perturbation count."""
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    series: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in margin_rows:
        if row["quantile"] == quantile:
            series[row["method"]][row["perturbations"]].append(row["margin"])
    for label, by_step in series.items():
        steps = sorted(by_step)
        means = [float(np.mean(by_step[s])) for s in steps]
        ax.plot(steps, means, marker="o", markersize=3, label=label)
    ax.axhline(0.0, color="k", linewidth=0.8, alpha=0.5)
    ax.set_xlabel("perturbations")
    ax.set_ylabel(f"margin ({quantile:g} quantile, mean over trials)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def write_report(labeled_trace_paths: dict[str, str | Path], out_dir: str | Path,
                 quantiles: Sequence[float], tau: float,
                 figures: bool = True) -> dict:
    """Read traces, write budgets.csv / margins.csv and the PNG figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labeled = {label: read_traces(p) for label, p in labeled_trace_paths.items()}
    for label, traces in labeled.items():
        if not traces:
            raise ValueError(f"trace set {label!r} is empty")
    budget_rows, margin_rows = report_tables(labeled, quantiles, tau)
    write_results(budget_rows, out_dir / "budgets.csv", BUDGET_COLUMNS)
    write_results(margin_rows, out_dir / "margins.csv", MARGIN_COLUMNS)
    outputs = {"budgets": str(out_dir / "budgets.csv"),
               "margins": str(out_dir / "margins.csv")}
    if figures:
        render_budget_figure(budget_rows, out_dir / "budget_vs_success.png")
        render_margin_figure(margin_rows, out_dir / "margin_median.png")
        outputs["budget_figure"] = str(out_dir / "budget_vs_success.png")
        outputs["margin_figure"] = str(out_dir / "margin_median.png")
    return outputs
