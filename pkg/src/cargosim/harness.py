"""Experiment runner: seeded scenario execution over trace-driven topologies,
client-stress grids, fixed-compute budgets with periodic evaluation, metric
export, and matched-budget summary tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .accounting import (
    CarbonLedger,
    DeviceProfile,
    account_round,
    common_feasible_budget,
    effective_loss,
    matched_budget_metric,
)
from .baselines import RoundContext, make_strategy
from .controller import PRESETS, ControllerConfig, CostModel, compute_proxy
from .dataplane import fresh_states
from .learners import (
    LinearLearner,
    LocalDataset,
    PreprocessConfig,
    SyntheticTaskSpec,
    eval_metrics,
    fleet_from_csv,
    flops_estimate,
    make_fleet_with_test,
)
from .topology import REGIMES, MobilityConfig, build_snapshots, generate_mobility, inject_gaps
from .signals import CarbonIntensityParams, SyntheticCarbonIntensity, load_carbon_intensity

_SALT_AVAILABILITY = 41

SUMMARY_METRICS = ("loss", "rmse", "r2", "energy_j", "carbon_g", "attempted_mb", "delivered_mb", "p_eff")

BUDGET_AXES = {"carbon": "carbon_g", "delivered_mb": "delivered_mb"}


@dataclass(frozen=True)
class ScenarioConfig:
    """One grid cell: a strategy under a fixed stress/topology setting,
    repeated over seeds."""

    strategy: str = "cargo"
    regime: str = "mid"
    preset: str = "standard"
    dropout_pd: float = 0.2
    participation_f: float = 1.0
    loss_p: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    total_local_updates: int = 20_000
    eval_every_updates: int = 1_000
    lr: float = 0.05
    batch: int = 128
    n_nodes: int = 5
    dim: int = 64
    samples_per_node: int = 512
    test_samples_per_node: int = 128
    hetero_alpha: float = 0.1
    noise_std: float = 0.1
    carbon_budget_g: float = None
    charge_idle: bool = True
    gamma: float = 0.5
    strategy_params: dict = field(default_factory=dict)
    task_kind: str = "synthetic"
    csv_path: str = None
    csv_target: str = None
    ci_path: str = None

    def validate(self) -> None:
        from .baselines import STRATEGY_NAMES

        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"strategy: unknown name {self.strategy!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"regime: unknown name {self.regime!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"preset: unknown name {self.preset!r}")
        if not 0.0 <= self.dropout_pd < 1.0:
            raise ValueError(f"dropout_pd: must be in [0, 1), got {self.dropout_pd}")
        if not 0.0 < self.participation_f <= 1.0:
            raise ValueError(f"participation_f: must be in (0, 1], got {self.participation_f}")
        if not 0.0 <= self.loss_p < 1.0:
            raise ValueError(f"loss_p: must be in [0, 1), got {self.loss_p}")
        if not self.seeds:
            raise ValueError("seeds: must be nonempty")
        if self.total_local_updates < 0:
            raise ValueError(f"total_local_updates: must be >= 0, got {self.total_local_updates}")
        if self.eval_every_updates < 1:
            raise ValueError(f"eval_every_updates: must be >= 1, got {self.eval_every_updates}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes: must be >= 1, got {self.n_nodes}")
        if self.task_kind not in ("synthetic", "csv"):
            raise ValueError(f"task_kind: must be synthetic or csv, got {self.task_kind!r}")
        if self.task_kind == "csv" and not (self.csv_path and self.csv_target):
            raise ValueError("csv_path: required (with csv_target) when task_kind is csv")

    @property
    def scenario_id(self) -> str:
        return (
            f"{self.strategy}_{self.regime}_{self.preset}"
            f"_pd{self.dropout_pd:g}_f{self.participation_f:g}_p{self.loss_p:g}"
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "seeds" in data:
            data = dict(data)
            data["seeds"] = tuple(data["seeds"])
        return cls(**data)


@dataclass
class RunResult:
    scenario_id: str
    strategy: str
    seed: int
    records: list
    final: dict
    round_log: list
    final_model: np.ndarray


def availability_draw(n_nodes: int, dropout_pd: float, seed: int, t: int) -> tuple:
    """Bernoulli(1 - p_d) availability per node, keyed by (seed, round) only."""
    if dropout_pd == 0.0:
        return tuple(range(n_nodes))
    rng = np.random.default_rng([seed, _SALT_AVAILABILITY, t])
    draws = rng.uniform(size=n_nodes)
    return tuple(i for i in range(n_nodes) if draws[i] >= dropout_pd)


def default_carbon_budget(config: ScenarioConfig, device: DeviceProfile) -> float:
    """Per-run budget: estimated round count times the fleet-wide compute proxy
    at the mid carbon intensity; deliberately tight so the dual engages."""
    steps_per_epoch = math.ceil(config.samples_per_node / config.batch)
    k_est = max(1, math.ceil(config.participation_f * config.n_nodes))
    rounds_est = max(1, math.ceil(config.total_local_updates / (k_est * steps_per_epoch)))
    flops = flops_estimate(config.dim, config.samples_per_node)
    per_node = compute_proxy(flops, device.throughput_flops, device.active_power_w, 330.0)
    return rounds_est * config.n_nodes * per_node


def _build_task(config: ScenarioConfig, seed: int):
    """Fleet of per-node train datasets plus the pooled held-out test set."""
    if config.task_kind == "csv":
        pre = PreprocessConfig(target=config.csv_target)
        fleet, pooled_test = fleet_from_csv(config.csv_path, pre, config.n_nodes)
        return fleet, pooled_test
    spec = SyntheticTaskSpec(
        dim=config.dim,
        samples_per_node=config.samples_per_node,
        test_samples_per_node=config.test_samples_per_node,
        hetero_alpha=config.hetero_alpha,
        noise_std=config.noise_std,
        seed=seed,
    )
    train, test, _ = make_fleet_with_test(spec, config.n_nodes)
    pooled_test = LocalDataset(
        np.vstack([d.features for d in test]), np.concatenate([d.targets for d in test])
    )
    return train, pooled_test


def run_single(config: ScenarioConfig, seed: int) -> RunResult:
    """Execute one seeded run of the configured scenario."""
    config.validate()
    regime = REGIMES[config.regime]
    preset = PRESETS[config.preset]
    device = DeviceProfile()

    mobility_cfg = MobilityConfig(n_vessels=config.n_nodes)
    trace = inject_gaps(generate_mobility(mobility_cfg, seed), mobility_cfg, seed)
    topo = build_snapshots(trace, regime)

    fleet, pooled_test = _build_task(config, seed)
    dim = fleet[0].features.shape[1]
    learner = LinearLearner(fleet, lr=config.lr, batch=config.batch, seed=seed)
    if config.ci_path:
        ci = load_carbon_intensity(config.ci_path)
    else:
        ci = SyntheticCarbonIntensity(CarbonIntensityParams(), seed)

    nominal_flops = flops_estimate(dim, max(d.n_samples for d in fleet))
    cost = CostModel(dim, nominal_flops, device)
    budget = config.carbon_budget_g
    if budget is None:
        budget = default_carbon_budget(config, device)
    controller_cfg = ControllerConfig(
        gamma=config.gamma,
        carbon_budget_g=budget,
        participation_fraction=config.participation_f,
    )
    strategy = make_strategy(
        config.strategy,
        learner,
        config.participation_f,
        preset,
        controller_config=controller_cfg,
        cost=cost,
        n_nodes=config.n_nodes,
        params=config.strategy_params,
    )

    states = fresh_states(config.n_nodes, dim)
    ledger = CarbonLedger()
    records = []
    round_log = []

    def snapshot_record(rounds_done: int, updates: int, target: int, partial: bool) -> dict:
        mean_model = np.mean([s.x for s in states], axis=0)
        metrics = eval_metrics(mean_model, pooled_test)
        p_eff = effective_loss(ledger)
        lam_c = getattr(strategy, "duals", None)
        rec = {
            "method": config.strategy,
            "seed": seed,
            "scenario": config.scenario_id,
            "round": rounds_done,
            "updates": updates,
            "target_updates": target,
            "loss": metrics["mse"],
            "rmse": metrics["rmse"],
            "r2": metrics["r2"],
            "energy_j": ledger.cumulative_energy_j,
            "carbon_g": ledger.cumulative_carbon_g,
            "attempted_mb": ledger.bytes_attempted / 1e6,
            "delivered_mb": ledger.bytes_delivered / 1e6,
            "p_eff": p_eff,
            "lambda_c": lam_c.lambda_c if lam_c is not None else None,
            "lambda_f": lam_c.lambda_f if lam_c is not None else None,
            "partial": int(partial),
        }
        ledger.record_eval(rec)
        records.append(rec)
        return rec

    snapshot_record(0, 0, 0, partial=False)
    updates = 0
    next_eval = config.eval_every_updates
    t = 0
    max_rounds = 1000 + 1000 * math.ceil(
        config.total_local_updates / max(1, math.ceil(config.samples_per_node / config.batch))
    )
    while updates < config.total_local_updates:
        if t >= max_rounds:
            raise RuntimeError(f"no training progress after {t} rounds; check availability settings")
        snap = topo.snapshots[t % len(topo.snapshots)]
        available = availability_draw(config.n_nodes, config.dropout_pd, seed, t)
        chi = {i: ci.at(i, t) for i in range(config.n_nodes)}
        ctx = RoundContext(
            t=t,
            n_nodes=config.n_nodes,
            available=available,
            candidate_edges=snap.edges,
            loss_p=config.loss_p,
            seed=seed,
            chi=chi,
        )
        outcome = strategy.round(ctx, states)
        cost_round = account_round(
            outcome.flops,
            outcome.payloads,
            chi,
            device,
            config.n_nodes,
            nominal_flops,
            charge_idle=config.charge_idle,
        )
        ledger.add_round(cost_round)
        extra = strategy.after_accounting(ledger.cumulative_carbon_g)
        if extra:
            outcome.record.update(extra)
        round_log.append(
            {
                "round": t,
                "available": list(available),
                "active": list(outcome.active),
                "steps": outcome.steps,
                "bytes_attempted": cost_round.bytes_attempted,
                "bytes_delivered": cost_round.bytes_delivered,
                "carbon_g": cost_round.carbon_g,
                **outcome.record,
            }
        )
        updates += outcome.steps
        t += 1
        while next_eval <= updates and next_eval <= config.total_local_updates:
            snapshot_record(t, updates, next_eval, partial=False)
            next_eval += config.eval_every_updates
    if records[-1]["updates"] != updates:
        snapshot_record(t, updates, updates, partial=True)

    final = {k: records[-1][k] for k in ("round", "updates", *SUMMARY_METRICS, "lambda_c", "lambda_f")}
    mean_model = np.mean([s.x for s in states], axis=0)
    return RunResult(
        scenario_id=config.scenario_id,
        strategy=config.strategy,
        seed=seed,
        records=records,
        final=final,
        round_log=round_log,
        final_model=mean_model,
    )


def run_scenario(config: ScenarioConfig) -> list:
    """All seeded runs of one scenario cell."""
    config.validate()
    return [run_single(config, seed) for seed in config.seeds]


def client_stress_grid(
    base: ScenarioConfig,
    strategies=("cargo", "dpsgd", "sgp", "choco", "gossip"),
    dropout_grid=(0.2, 0.5),
    participation_grid=(0.25, 0.5, 1.0),
) -> list:
    """Scenario cells of the availability/participation stress grid."""
    cells = []
    for strategy in strategies:
        for pd_value in dropout_grid:
            for f_value in participation_grid:
                cells.append(
                    replace(base, strategy=strategy, dropout_pd=pd_value, participation_f=f_value)
                )
    return cells


def packet_loss_grid(
    base: ScenarioConfig,
    strategies=("cargo", "dpsgd", "sgp", "choco", "gossip"),
    loss_grid=(0.0, 0.05, 0.1, 0.2),
    regimes=("well-connected", "mid", "fragmented"),
) -> list:
    """Scenario cells of the packet-loss sensitivity grid (loss-robust preset)."""
    cells = []
    for strategy in strategies:
        for regime in regimes:
            for p in loss_grid:
                cells.append(replace(base, strategy=strategy, regime=regime, loss_p=p, preset="loss-robust"))
    return cells


def _mean_std(values) -> tuple:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None, None
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


def summarize(results: list) -> list:
    """Per-scenario mean and sample std of each final metric over the seeds."""
    if not results:
        raise ValueError("no results to summarize")
    by_scenario = {}
    for run in results:
        by_scenario.setdefault(run.scenario_id, []).append(run)
    rows = []
    for scenario in sorted(by_scenario):
        runs = by_scenario[scenario]
        row = {"scenario": scenario, "strategy": runs[0].strategy, "n_seeds": len(runs)}
        for metric in SUMMARY_METRICS:
            mean, std = _mean_std([r.final.get(metric) for r in runs])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    return rows


def matched_budget_report(results: list, axis: str, budget: float = None):
    """Interpolated R^2/RMSE at a shared budget along the carbon or delivered
    communication axis; the budget defaults to the common feasible maximum."""
    if axis not in BUDGET_AXES:
        raise ValueError(f"axis must be one of {sorted(BUDGET_AXES)}")
    key = BUDGET_AXES[axis]
    trajectories = {}
    for run in results:
        xs = [rec[key] for rec in run.records]
        trajectories[(run.scenario_id, run.seed)] = (xs, run.records)
    if budget is None:
        budget = common_feasible_budget([xs for xs, _ in trajectories.values()])
    else:
        infeasible = [
            f"{scenario} seed {seed}"
            for (scenario, seed), (xs, _) in trajectories.items()
            if budget < min(xs) or budget > max(xs)
        ]
        if infeasible:
            raise ValueError(f"budget {budget} infeasible for: {', '.join(sorted(infeasible))}")
    interpolated = {}
    for (scenario, seed), (xs, recs) in trajectories.items():
        values = {}
        for metric in ("r2", "rmse", "loss"):
            values[metric] = matched_budget_metric(xs, [rec[metric] for rec in recs], budget)
        interpolated.setdefault(scenario, []).append(values)
    rows = []
    for scenario in sorted(interpolated):
        row = {"scenario": scenario, "axis": axis, "budget": budget, "n_seeds": len(interpolated[scenario])}
        for metric in ("r2", "rmse", "loss"):
            mean, std = _mean_std([v[metric] for v in interpolated[scenario]])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    return budget, rows


# ---------------------------------------------------------------------------
# Tabular export
# ---------------------------------------------------------------------------


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_records_csv(records: list, path) -> None:
    if not records:
        raise ValueError("no records to write")
    keys = list(records[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(keys)
        for rec in records:
            writer.writerow([_format_cell(rec.get(k)) for k in keys])


def read_records_csv(path) -> list:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rec = {}
            for k, v in row.items():
                if v == "":
                    rec[k] = None
                else:
                    try:
                        rec[k] = int(v)
                    except ValueError:
                        try:
                            rec[k] = float(v)
                        except ValueError:
                            rec[k] = v
            out.append(rec)
    return out


def write_round_log(round_log: list, path) -> None:
    with open(path, "w") as f:
        for entry in round_log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
