"""Energy, carbon, and communication ledger: per-round compute/communication
energy, gCO2e conversion, attempted vs delivered byte tracking, effective-loss
reporting, and matched-budget trajectory interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOULES_PER_KWH = 3.6e6
BYTES_PER_MB = 1e6


@dataclass(frozen=True)
class DeviceProfile:
    """Homogeneous low-power edge device used for every node."""

    active_power_w: float = 10.0
    idle_power_w: float = 1.5
    throughput_flops: float = 2.0e10
    energy_per_byte_j: float = 2.0e-7
    link_efficiency: float = 1.0

    def __post_init__(self):
        for name in (
            "active_power_w",
            "idle_power_w",
            "throughput_flops",
            "energy_per_byte_j",
            "link_efficiency",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


def compute_energy(flops: float, profile: DeviceProfile) -> float:
    """Compute energy in joules: (flops / throughput) * active power."""
    return (flops / profile.throughput_flops) * profile.active_power_w


def comm_energy(tx_bytes: float, rx_bytes: float, profile: DeviceProfile) -> float:
    """Link energy in joules from transmitted and received payload bytes."""
    eps = profile.energy_per_byte_j * profile.link_efficiency
    return tx_bytes * eps + rx_bytes * eps


def carbon_of(energy_j: float, chi: float) -> float:
    """Convert joules at carbon intensity chi (gCO2/kWh) to grams CO2e."""
    if energy_j < 0:
        raise ValueError("energy must be >= 0")
    return energy_j / JOULES_PER_KWH * chi


@dataclass
class RoundCost:
    energy_comp_j: float
    energy_comm_j: float
    energy_total_j: float
    carbon_g: float
    bytes_attempted: int
    bytes_delivered: int


def account_round(
    flops_by_node: dict,
    payloads,
    chi_by_node: dict,
    profile: DeviceProfile,
    n_nodes: int,
    nominal_round_flops: float,
    charge_idle: bool = True,
) -> RoundCost:
    """Aggregate one round into a RoundCost.

    Transmit energy is charged on attempted bytes (the sender spends it either
    way); receive energy only on delivered bytes. Nodes that did not compute are
    charged idle power for the nominal round duration when charge_idle is set.
    Carbon is converted per node at that node's intensity.
    """
    tx_attempted = {i: 0 for i in range(n_nodes)}
    rx_delivered = {i: 0 for i in range(n_nodes)}
    attempted = 0
    delivered = 0
    for rec in payloads:
        tx_attempted[rec.sender] += rec.bytes_attempted
        attempted += rec.bytes_attempted
        if rec.delivered:
            rx_delivered[rec.receiver] += rec.bytes_attempted
            delivered += rec.bytes_attempted
    round_time_s = nominal_round_flops / profile.throughput_flops
    energy_comp = 0.0
    energy_comm = 0.0
    carbon = 0.0
    for i in range(n_nodes):
        if i in flops_by_node:
            e_comp = compute_energy(flops_by_node[i], profile)
        elif charge_idle:
            e_comp = round_time_s * profile.idle_power_w
        else:
            e_comp = 0.0
        e_comm = comm_energy(tx_attempted[i], rx_delivered[i], profile)
        energy_comp += e_comp
        energy_comm += e_comm
        carbon += carbon_of(e_comp + e_comm, chi_by_node[i])
    return RoundCost(
        energy_comp_j=energy_comp,
        energy_comm_j=energy_comm,
        energy_total_j=energy_comp + energy_comm,
        carbon_g=carbon,
        bytes_attempted=attempted,
        bytes_delivered=delivered,
    )


@dataclass
class CarbonLedger:
    """Single-writer per-run ledger of round costs and evaluation records."""

    rounds: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    dual_history: list = field(default_factory=list)
    cumulative_carbon_g: float = 0.0
    cumulative_energy_j: float = 0.0
    bytes_attempted: int = 0
    bytes_delivered: int = 0

    def add_round(self, cost: RoundCost) -> None:
        self.rounds.append(cost)
        self.cumulative_carbon_g += cost.carbon_g
        self.cumulative_energy_j += cost.energy_total_j
        self.bytes_attempted += cost.bytes_attempted
        self.bytes_delivered += cost.bytes_delivered

    def record_eval(self, record: dict) -> None:
        self.trajectory.append(record)

    def record_duals(self, t: int, lambda_c: float, lambda_f: float) -> None:
        self.dual_history.append({"round": t, "lambda_c": lambda_c, "lambda_f": lambda_f})


def effective_loss(ledger: CarbonLedger):
    """Run-level 1 - delivered/attempted bytes; None when nothing was attempted."""
    if ledger.bytes_attempted == 0:
        return None
    return 1.0 - ledger.bytes_delivered / ledger.bytes_attempted


def matched_budget_metric(abscissas, values, budget: float):
    """Piecewise-linear interpolation of a metric along a nondecreasing budget
    axis; None marks an infeasible budget outside the recorded range."""
    xs = np.asarray(abscissas, dtype=float)
    ys = np.asarray(values, dtype=float)
    if xs.size == 0:
        raise ValueError("empty trajectory")
    if np.any(np.diff(xs) < 0):
        raise ValueError("budget axis must be nondecreasing")
    if budget < xs[0] or budget > xs[-1]:
        return None
    return float(np.interp(budget, xs, ys))


def common_feasible_budget(trajectories) -> float:
    """Largest budget feasible for every trajectory: min over trajectories of
    each trajectory's maximum abscissa."""
    if not trajectories:
        raise ValueError("no trajectories")
    maxima = []
    for xs in trajectories:
        xs = np.asarray(xs, dtype=float)
        if xs.size == 0:
            raise ValueError("empty trajectory")
        maxima.append(float(xs.max()))
    return min(maxima)
