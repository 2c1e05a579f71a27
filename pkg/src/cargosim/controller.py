"""Round control plane: utility/carbon/fairness scoring, active-set selection
with forced activation and cardinality correction, degree-bounded edge
activation, carbon-indexed compression, Metropolis mixing, the periodic
resynchronization flag, and projected-subgradient dual updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accounting import DeviceProfile
from .dataplane import (
    FLOAT_BYTES,
    CompressionOperator,
    Mode,
    metropolis_weights,
    payload_bytes,
)
from .signals import Telemetry


@dataclass(frozen=True)
class ControllerConfig:
    beta: float = 0.0
    rho_star: float = 0.8
    s_max: int = 2
    eta_c: float = 0.01
    eta_f: float = 0.01
    eps: float = 1e-6
    gamma: float = 0.5
    carbon_budget_g: float = 1.0
    participation_fraction: float = 1.0

    def __post_init__(self):
        if self.eta_c < 0 or self.eta_f < 0:
            raise ValueError("dual step sizes must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.rho_star <= 1.0:
            raise ValueError("rho_star must be in (0, 1]")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError("participation_fraction must be in (0, 1]")


@dataclass(frozen=True)
class RuntimePreset:
    name: str
    fanout_cap: int
    chi_lo: float
    chi_hi: float
    topk_ratio: float
    resync_interval: int

    def __post_init__(self):
        if self.fanout_cap < 1:
            raise ValueError("fanout_cap must be >= 1")
        if self.chi_lo >= self.chi_hi:
            raise ValueError("chi_lo must be < chi_hi")
        if not 0.0 < self.topk_ratio <= 1.0:
            raise ValueError("topk_ratio must be in (0, 1]")
        if self.resync_interval < 1:
            raise ValueError("resync_interval must be >= 1")


PRESETS = {
    "standard": RuntimePreset("standard", 3, 300.0, 400.0, 0.05, 2),
    "loss-robust": RuntimePreset("loss-robust", 2, 260.0, 340.0, 0.02, 3),
}


@dataclass(frozen=True)
class DualState:
    lambda_c: float = 0.0
    lambda_f: float = 0.0

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_f < 0:
            raise ValueError("dual variables must be nonnegative")


@dataclass(frozen=True)
class CostModel:
    """Workload and device constants behind the per-node carbon proxies."""

    model_dim: int
    flops_per_round: float
    device: DeviceProfile

    @property
    def dense_bytes(self) -> int:
        return FLOAT_BYTES * self.model_dim


@dataclass
class DecisionBundle:
    """Controller output consumed by the data plane for one round."""

    active_set: tuple
    activated_edges: tuple
    mixing: np.ndarray
    compression: dict  # node -> Mode, for active nodes
    resync: bool
    resync_nodes: tuple = ()
    edge_selections: dict = field(default_factory=dict)  # node -> tuple of chosen edges
    topk_ratio: float = 1.0


@dataclass
class ControlContext:
    """Immutable inputs of one control round."""

    t: int
    n_nodes: int
    available: tuple
    candidate_edges: tuple
    telemetry: dict  # node -> Telemetry, for available nodes
    duals: DualState
    config: ControllerConfig
    preset: RuntimePreset
    cost: CostModel


def utility(loss: float, disagreement: float) -> float:
    """Informativeness term 1/(1 + loss) + disagreement."""
    if loss < 0:
        raise ValueError(f"loss must be >= 0, got {loss}")
    return 1.0 / (1.0 + loss) + disagreement


def compute_proxy(flops: float, throughput: float, active_power: float, chi: float) -> float:
    """Compute-side carbon proxy in grams: (flops/throughput * power) * chi / 3.6e6."""
    if throughput <= 0:
        raise ValueError("throughput must be > 0")
    return (flops / throughput) * active_power * chi / 3.6e6


def comm_proxy(
    dense_bytes: float,
    ratio: float,
    fanout_cap: int,
    energy_per_byte: float,
    chi: float,
) -> float:
    """Communication-side carbon proxy in grams for one round of sending
    dense_bytes * ratio to at most fanout_cap neighbors."""
    if dense_bytes <= 0:
        raise ValueError("dense_bytes must be > 0")
    tx_bytes = dense_bytes * ratio * fanout_cap
    return tx_bytes * energy_per_byte * chi / 3.6e6


def fairness_penalty(streak: int, rate: float, s_max: int, rho_star: float) -> float:
    """Chronic-exclusion penalty [streak - s_max + 1]_+ + [rho_star - rate]_+."""
    return max(streak - s_max + 1, 0) + max(rho_star - rate, 0.0)


def activation_score(telemetry: Telemetry, duals: DualState, proxies) -> float:
    """Score g = U - lambda_c * carbon_proxy - lambda_f * fairness_penalty."""
    carbon, fairness = proxies
    u = utility(telemetry.loss, telemetry.disagreement)
    return u - duals.lambda_c * carbon - duals.lambda_f * fairness


def select_active(scores: dict, streaks: dict, efficiency: dict, k_target: int, config: ControllerConfig):
    """Robust-threshold activation with forced members and cardinality correction.

    Threshold set: score > median + beta. Nodes at or past the streak limit are
    forced in. The set is filled (descending efficiency) or trimmed (ascending
    efficiency, forced nodes immune) toward k_target; ties break on node id.
    """
    available = sorted(scores)
    if not available:
        return ()
    med = float(np.median([scores[i] for i in available]))
    chosen = {i for i in available if scores[i] > med + config.beta}
    forced = {i for i in available if streaks[i] >= config.s_max}
    chosen |= forced
    if len(chosen) < k_target:
        rest = sorted((i for i in available if i not in chosen), key=lambda i: (-efficiency[i], i))
        for i in rest[: k_target - len(chosen)]:
            chosen.add(i)
    elif len(chosen) > k_target:
        removable = sorted((i for i in chosen if i not in forced), key=lambda i: (efficiency[i], i))
        excess = len(chosen) - k_target
        for i in removable[:excess]:
            chosen.remove(i)
    return tuple(sorted(chosen))


@dataclass(frozen=True)
class EdgeSelection:
    edges: tuple
    per_node: dict  # node -> tuple of edges it selected


def rank_and_select_edges(active, candidates, influence: dict, edge_cost: dict, fanout_cap: int, eps: float):
    """Each active node keeps its top-fanout_cap incident candidate edges by the
    informativeness-to-cost ratio |nu_i - nu_j| / (cost + eps); the activated
    set is the union of all selections, so realized degree may exceed the cap."""
    active_set = set(active)
    usable = sorted(
        (min(i, j), max(i, j)) for i, j in candidates if i in active_set and j in active_set and i != j
    )
    psi = {
        e: abs(influence[e[0]] - influence[e[1]]) / (edge_cost[e] + eps)
        for e in usable
    }
    per_node = {}
    selected = set()
    for node in sorted(active_set):
        incident = [e for e in usable if node in e]
        incident.sort(key=lambda e: (-psi[e], e))
        keep = tuple(incident[:fanout_cap])
        per_node[node] = keep
        selected.update(keep)
    return EdgeSelection(tuple(sorted(selected)), per_node)


def compression_mode(chi: float, preset: RuntimePreset) -> Mode:
    """Payload representation from the sender's carbon intensity: dense below
    chi_lo, int8 in [chi_lo, chi_hi), top-k at or above chi_hi."""
    if chi < preset.chi_lo:
        return Mode.DENSE
    if chi < preset.chi_hi:
        return Mode.INT8
    return Mode.TOPK


# Re-exported so callers of the control plane build mixing matrices through one name.
metropolis = metropolis_weights


def resync_flag(t: int, interval: int) -> bool:
    """Periodic resynchronization rule: fires when t mod interval == 0."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return t % interval == 0


def dual_update(
    duals: DualState,
    cumulative_carbon: float,
    budget: float,
    mean_rate: float,
    config: ControllerConfig,
) -> DualState:
    """Projected subgradient step on the carbon and fairness multipliers."""
    if budget <= 0:
        raise ValueError("budget must be > 0")
    g_c = (cumulative_carbon - budget) / (budget + config.eps)
    g_f = max(config.rho_star - mean_rate, 0.0)
    return DualState(
        lambda_c=max(duals.lambda_c + config.eta_c * g_c, 0.0),
        lambda_f=max(duals.lambda_f + config.eta_f * g_f, 0.0),
    )


def _mode_ratio(mode: Mode, preset: RuntimePreset, dim: int) -> float:
    """Byte ratio of a mode's payload relative to the dense payload."""
    op = CompressionOperator(mode, preset.topk_ratio if mode is Mode.TOPK else 1.0)
    return payload_bytes(op, dim) / (FLOAT_BYTES * dim)


def control_round(ctx: ControlContext) -> DecisionBundle:
    """Produce the round decision bundle: score available nodes, pick the active
    set, activate degree-bounded edges, assign compression, build the mixing
    matrix, and set the resynchronization flag."""
    cfg = ctx.config
    preset = ctx.preset
    n = ctx.n_nodes
    r_t = resync_flag(ctx.t, preset.resync_interval)
    available = tuple(sorted(ctx.available))
    if not available:
        return DecisionBundle(
            active_set=(),
            activated_edges=(),
            mixing=np.eye(n),
            compression={},
            resync=r_t,
            resync_nodes=(),
            edge_selections={},
            topk_ratio=preset.topk_ratio,
        )

    modes = {i: compression_mode(ctx.telemetry[i].chi, preset) for i in available}
    scores = {}
    streaks = {}
    efficiency = {}
    for i in available:
        tel = ctx.telemetry[i]
        ratio = _mode_ratio(modes[i], preset, ctx.cost.model_dim)
        gamma_proxy = compute_proxy(
            ctx.cost.flops_per_round,
            ctx.cost.device.throughput_flops,
            ctx.cost.device.active_power_w,
            tel.chi,
        ) + comm_proxy(
            ctx.cost.dense_bytes,
            ratio,
            preset.fanout_cap,
            ctx.cost.device.energy_per_byte_j,
            tel.chi,
        )
        phi = fairness_penalty(tel.streak, tel.rate, cfg.s_max, cfg.rho_star)
        scores[i] = activation_score(tel, ctx.duals, (gamma_proxy, phi))
        streaks[i] = tel.streak
        efficiency[i] = utility(tel.loss, tel.disagreement) / (gamma_proxy + cfg.eps)

    k_target = min(math.ceil(cfg.participation_fraction * n), len(available))
    active = select_active(scores, streaks, efficiency, k_target, cfg)

    influence = {i: ctx.telemetry[i].loss for i in active}
    edge_cost = {}
    for i, j in ctx.candidate_edges:
        a, b = min(i, j), max(i, j)
        if a in influence and b in influence:
            mean_ratio = 0.5 * (
                _mode_ratio(modes[a], preset, ctx.cost.model_dim)
                + _mode_ratio(modes[b], preset, ctx.cost.model_dim)
            )
            mean_chi = 0.5 * (ctx.telemetry[a].chi + ctx.telemetry[b].chi)
            edge_cost[(a, b)] = (
                ctx.cost.dense_bytes * mean_ratio * ctx.cost.device.energy_per_byte_j * mean_chi / 3.6e6
            )
    selection = rank_and_select_edges(
        active, ctx.candidate_edges, influence, edge_cost, preset.fanout_cap, cfg.eps
    )
    mixing = metropolis_weights(selection.edges, n)
    waking = tuple(i for i in active if ctx.telemetry[i].streak >= 1) if r_t else ()
    return DecisionBundle(
        active_set=active,
        activated_edges=selection.edges,
        mixing=mixing,
        compression={i: modes[i] for i in active},
        resync=r_t,
        resync_nodes=waking,
        edge_selections=selection.per_node,
        topk_ratio=preset.topk_ratio,
    )


def bundle_record(bundle: DecisionBundle, duals: DualState) -> dict:
    """JSON-ready audit record of one control decision."""
    return {
        "active": list(bundle.active_set),
        "edges": [list(e) for e in bundle.activated_edges],
        "modes": {str(i): bundle.compression[i].value for i in sorted(bundle.compression)},
        "resync": int(bundle.resync),
        "resync_nodes": list(bundle.resync_nodes),
        "selections": {str(i): len(bundle.edge_selections.get(i, ())) for i in bundle.active_set},
        "lambda_c": duals.lambda_c,
        "lambda_f": duals.lambda_f,
    }
