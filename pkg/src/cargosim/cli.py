"""Command-line experiment runner: topology generation, single-scenario runs,
scenario grids, and report rendering."""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .harness import (
    ScenarioConfig,
    client_stress_grid,
    run_single,
    summarize,
    write_records_csv,
    write_round_log,
)
from .reporting import render_report
from .topology import (
    REGIMES,
    MobilityConfig,
    build_snapshots,
    connectivity_stats,
    generate_mobility,
    inject_gaps,
    save_topology,
    save_trace,
)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return data


def _scenario_from_args(args) -> tuple:
    data = _load_config(args.config)
    grid_spec = data.pop("grid", None)
    for key in ("strategy", "regime", "preset"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "seed", None) is not None:
        data["seeds"] = [args.seed]
    config = ScenarioConfig.from_dict(data)
    config.validate()
    return config, grid_spec


def _write_runs(results, out_dir) -> None:
    traj_dir = os.path.join(out_dir, "trajectories")
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(traj_dir, exist_ok=True)
    os.makedirs(log_dir, exist_ok=True)
    for run in results:
        stem = f"{run.scenario_id}__s{run.seed}"
        write_records_csv(run.records, os.path.join(traj_dir, f"{stem}.csv"))
        write_round_log(run.round_log, os.path.join(log_dir, f"{stem}.jsonl"))


def cmd_gen_topology(args) -> int:
    seed = args.seed if args.seed is not None else 0
    regime_names = [args.regime] if args.regime else sorted(REGIMES)
    config = MobilityConfig()
    os.makedirs(args.out, exist_ok=True)
    trace = inject_gaps(generate_mobility(config, seed), config, seed)
    save_trace(trace, os.path.join(args.out, f"trace_s{seed}.csv"))
    stats_rows = []
    for name in regime_names:
        topo = build_snapshots(trace, REGIMES[name])
        save_topology(topo, os.path.join(args.out, f"topology_{name}_s{seed}.csv"))
        stats = connectivity_stats(topo)
        stats_rows.append(
            {
                "regime": name,
                "seed": seed,
                "connected": stats.connected_snapshot_count,
                "snapshots": stats.snapshot_count,
                "connectivity_rate": stats.connectivity_rate,
                "median_components": stats.median_components,
                "mean_lcr": stats.mean_largest_component_ratio,
            }
        )
    write_records_csv(stats_rows, os.path.join(args.out, f"connectivity_s{seed}.csv"))
    for row in stats_rows:
        print(
            f"{row['regime']}: {row['connected']}/{row['snapshots']} connected "
            f"(rate {row['connectivity_rate']:.3f}), median components {row['median_components']}, "
            f"mean LCR {row['mean_lcr']:.3f}"
        )
    return 0


def cmd_run(args) -> int:
    config, _ = _scenario_from_args(args)
    results = [run_single(config, seed) for seed in config.seeds]
    _write_runs(results, args.out)
    rows = summarize(results)
    os.makedirs(args.out, exist_ok=True)
    write_records_csv(rows, os.path.join(args.out, "summary.csv"))
    for row in rows:
        print(
            f"{row['scenario']}: loss {row['loss_mean']:.5f} +- {row['loss_std']:.5f}, "
            f"carbon {row['carbon_g_mean']:.4g} g, delivered {row['delivered_mb_mean']:.4g} MB "
            f"({row['n_seeds']} seeds)"
        )
    return 0


def cmd_grid(args) -> int:
    config, grid_spec = _scenario_from_args(args)
    grid_spec = grid_spec or {}
    cells = client_stress_grid(
        config,
        strategies=tuple(grid_spec.get("strategies", ("cargo", "dpsgd", "sgp", "choco", "gossip"))),
        dropout_grid=tuple(grid_spec.get("dropout_pd", (0.2, 0.5))),
        participation_grid=tuple(grid_spec.get("participation_f", (0.25, 0.5, 1.0))),
    )
    results = []
    for cell in cells:
        cell.validate()
        for seed in cell.seeds:
            results.append(run_single(cell, seed))
    _write_runs(results, args.out)
    rows = summarize(results)
    write_records_csv(rows, os.path.join(args.out, "summary.csv"))
    print(f"{len(cells)} cells x {len(config.seeds)} seeds -> {len(results)} runs")
    return 0


def cmd_report(args) -> int:
    written = render_report(args.out, axis=args.axis, budget=args.budget)
    for name in sorted(written):
        print(f"wrote {written[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cargosim",
        description="Deterministic carbon-aware gossip learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-topology", help="generate a mobility trace and snapshot graphs")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--regime", choices=sorted(REGIMES), default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_topology)

    run = sub.add_parser("run", help="run one scenario over its seeds")
    grid = sub.add_parser("grid", help="run the client-stress scenario grid")
    for p in (run, grid):
        p.add_argument("--config", default=None)
        p.add_argument("--strategy", default=None)
        p.add_argument("--regime", choices=sorted(REGIMES), default=None)
        p.add_argument("--preset", choices=("standard", "loss-robust"), default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)
    grid.set_defaults(func=cmd_grid)

    report = sub.add_parser("report", help="summaries, matched-budget tables, and figures")
    report.add_argument("--out", required=True, help="output directory of a previous run/grid")
    report.add_argument("--axis", choices=("carbon", "delivered_mb"), default=None)
    report.add_argument("--budget", type=float, default=None)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
