"""Report rendering: summary and matched-budget tables plus matplotlib figures
written next to the exported metric files."""

from __future__ import annotations

import math
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import BUDGET_AXES, SUMMARY_METRICS, _mean_std, read_records_csv, write_records_csv
from .accounting import common_feasible_budget, matched_budget_metric


def load_trajectories(out_dir) -> list:
    """All evaluation records exported under <out_dir>/trajectories."""
    traj_dir = os.path.join(out_dir, "trajectories")
    if not os.path.isdir(traj_dir):
        raise ValueError(f"no trajectories directory under {out_dir}")
    records = []
    for name in sorted(os.listdir(traj_dir)):
        if name.endswith(".csv"):
            records.extend(read_records_csv(os.path.join(traj_dir, name)))
    if not records:
        raise ValueError(f"no trajectory files under {traj_dir}")
    return records


def _group_runs(records) -> dict:
    runs = defaultdict(list)
    for rec in records:
        runs[(rec["scenario"], rec["seed"])].append(rec)
    for key in runs:
        runs[key].sort(key=lambda r: (r["round"], r["updates"]))
    return dict(runs)


def summary_rows(records) -> list:
    """Mean and sample std of each final metric per scenario."""
    runs = _group_runs(records)
    finals = defaultdict(list)
    for (scenario, _seed), recs in runs.items():
        finals[scenario].append(recs[-1])
    rows = []
    for scenario in sorted(finals):
        row = {"scenario": scenario, "n_seeds": len(finals[scenario])}
        for metric in SUMMARY_METRICS:
            mean, std = _mean_std([rec.get(metric) for rec in finals[scenario]])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    return rows


def matched_budget_rows(records, axis: str, budget=None):
    """Interpolated metrics at a shared budget along the given axis."""
    if axis not in BUDGET_AXES:
        raise ValueError(f"axis must be one of {sorted(BUDGET_AXES)}")
    key = BUDGET_AXES[axis]
    runs = _group_runs(records)
    if budget is None:
        budget = common_feasible_budget([[rec[key] for rec in recs] for recs in runs.values()])
    else:
        infeasible = [
            f"{scenario} seed {seed}"
            for (scenario, seed), recs in runs.items()
            if budget < min(rec[key] for rec in recs) or budget > max(rec[key] for rec in recs)
        ]
        if infeasible:
            raise ValueError(f"budget {budget} infeasible for: {', '.join(sorted(infeasible))}")
    per_scenario = defaultdict(list)
    for (scenario, _seed), recs in runs.items():
        xs = [rec[key] for rec in recs]
        values = {m: matched_budget_metric(xs, [rec[m] for rec in recs], budget) for m in ("r2", "rmse", "loss")}
        per_scenario[scenario].append(values)
    rows = []
    for scenario in sorted(per_scenario):
        row = {"scenario": scenario, "axis": axis, "budget": budget, "n_seeds": len(per_scenario[scenario])}
        for metric in ("r2", "rmse", "loss"):
            mean, std = _mean_std([v[metric] for v in per_scenario[scenario]])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    return budget, rows


def _scenario_color(scenarios):
    cmap = plt.get_cmap("tab10")
    return {s: cmap(k % 10) for k, s in enumerate(sorted(scenarios))}


def render_trajectory_figure(records, path, x_key: str, y_key: str, xlabel: str, ylabel: str, logy=False):
    runs = _group_runs(records)
    scenarios = {scenario for scenario, _ in runs}
    colors = _scenario_color(scenarios)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    seen = set()
    for (scenario, _seed), recs in sorted(runs.items()):
        xs = [rec[x_key] for rec in recs]
        ys = [rec[y_key] for rec in recs]
        label = scenario if scenario not in seen else None
        seen.add(scenario)
        ax.plot(xs, ys, color=colors[scenario], alpha=0.7, linewidth=1.2, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_final_bars(records, path, metric: str, ylabel: str):
    rows = summary_rows(records)
    labels = [row["scenario"] for row in rows]
    means = [row[f"{metric}_mean"] or 0.0 for row in rows]
    stds = [row[f"{metric}_std"] or 0.0 for row in rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(labels)), 4.5))
    ax.bar(range(len(labels)), means, yerr=stds, capsize=3, color="tab:blue", alpha=0.8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(out_dir, axis: str = None, budget=None) -> dict:
    """Build the full report: summary table, matched-budget tables, and figures.

    Returns the paths written, keyed by artifact name.
    """
    records = load_trajectories(out_dir)
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)
    written = {}

    rows = summary_rows(records)
    path = os.path.join(report_dir, "summary.csv")
    write_records_csv(rows, path)
    written["summary"] = path

    axes = [axis] if axis else sorted(BUDGET_AXES)
    for ax_name in axes:
        chosen, mb_rows = matched_budget_rows(records, ax_name, budget)
        path = os.path.join(report_dir, f"matched_budget_{ax_name}.csv")
        write_records_csv(mb_rows, path)
        written[f"matched_budget_{ax_name}"] = path

    figures = [
        ("fig_loss_vs_updates.png", "target_updates", "loss", "aggregated local updates", "pooled test MSE", True),
        ("fig_r2_vs_carbon.png", "carbon_g", "r2", "cumulative carbon (g)", "pooled test R^2", False),
    ]
    for name, x_key, y_key, xlabel, ylabel, logy in figures:
        path = os.path.join(report_dir, name)
        render_trajectory_figure(records, path, x_key, y_key, xlabel, ylabel, logy)
        written[name] = path
    path = os.path.join(report_dir, "fig_delivered_mb.png")
    render_final_bars(records, path, "delivered_mb", "delivered communication (MB)")
    written["fig_delivered_mb.png"] = path
    return written
