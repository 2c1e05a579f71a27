"""Per-node round telemetry: carbon-intensity traces, participation history,
and the disagreement signal derived from delivered neighbor states."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

_SALT_CI_PHASE = 21
_SALT_CI_NOISE = 22

PARTICIPATION_WINDOW = 8


@dataclass(frozen=True)
class CarbonIntensityParams:
    """Seeded diurnal sinusoid with per-node phase, clamped to a plausible grid
    range. Defaults straddle both compression threshold pairs in use."""

    mid: float = 330.0
    amp: float = 90.0
    period_rounds: int = 24
    noise_std: float = 10.0
    clamp_lo: float = 180.0
    clamp_hi: float = 520.0


def carbon_intensity(node: int, t: int, params: CarbonIntensityParams, seed: int) -> float:
    """Carbon intensity in gCO2/kWh for one node at one round."""
    if t < 0:
        raise ValueError("round index must be >= 0")
    phase = np.random.default_rng([seed, _SALT_CI_PHASE, node]).uniform(0.0, 2.0 * np.pi)
    noise = 0.0
    if params.noise_std > 0:
        noise = np.random.default_rng([seed, _SALT_CI_NOISE, node, t]).normal(0.0, params.noise_std)
    chi = params.mid + params.amp * np.sin(2.0 * np.pi * t / params.period_rounds + phase) + noise
    return float(min(params.clamp_hi, max(params.clamp_lo, chi)))


class SyntheticCarbonIntensity:
    """Callable trace over (node, round) backed by carbon_intensity; caches the
    per-node phase so repeated lookups stay cheap."""

    def __init__(self, params: CarbonIntensityParams, seed: int):
        self.params = params
        self.seed = seed
        self._phase = {}

    def at(self, node: int, t: int) -> float:
        if t < 0:
            raise ValueError("round index must be >= 0")
        p = self.params
        if node not in self._phase:
            self._phase[node] = np.random.default_rng(
                [self.seed, _SALT_CI_PHASE, node]
            ).uniform(0.0, 2.0 * np.pi)
        noise = 0.0
        if p.noise_std > 0:
            noise = np.random.default_rng(
                [self.seed, _SALT_CI_NOISE, node, t]
            ).normal(0.0, p.noise_std)
        chi = p.mid + p.amp * np.sin(2.0 * np.pi * t / p.period_rounds + self._phase[node]) + noise
        return float(min(p.clamp_hi, max(p.clamp_lo, chi)))


class TableCarbonIntensity:
    """Carbon-intensity trace read from a (node_id, round, chi) table, overriding
    the synthetic generator. Missing rounds reuse the last value at or before t."""

    def __init__(self, values: dict):
        if not values:
            raise ValueError("empty carbon intensity table")
        for chi in values.values():
            if chi <= 0:
                raise ValueError("carbon intensity must be > 0")
        self._values = values
        self._rounds_by_node = {}
        for node, t in values:
            self._rounds_by_node.setdefault(node, []).append(t)
        for node in self._rounds_by_node:
            self._rounds_by_node[node].sort()

    def at(self, node: int, t: int) -> float:
        if (node, t) in self._values:
            return self._values[(node, t)]
        rounds = self._rounds_by_node.get(node)
        if not rounds:
            raise KeyError(f"no carbon intensity rows for node {node}")
        earlier = [r for r in rounds if r <= t]
        if not earlier:
            raise KeyError(f"no carbon intensity at or before round {t} for node {node}")
        return self._values[(node, earlier[-1])]


def load_carbon_intensity(path) -> TableCarbonIntensity:
    values = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            values[(int(row["node_id"]), int(row["round"]))] = float(row["chi"])
    return TableCarbonIntensity(values)


class ParticipationTracker:
    """Sliding-window participation rate and inactivity streak per node.

    The window holds the last PARTICIPATION_WINDOW activity flags; the rate of a
    node with no history yet is 1.0 (fresh nodes start unpenalized).
    """

    def __init__(self, n_nodes: int, window_len: int = PARTICIPATION_WINDOW):
        if window_len < 1:
            raise ValueError("window_len must be >= 1")
        self.n_nodes = n_nodes
        self.window_len = window_len
        self._windows = [deque(maxlen=window_len) for _ in range(n_nodes)]
        self._streaks = [0] * n_nodes

    def update(self, active_set) -> None:
        active = set(active_set)
        for i in range(self.n_nodes):
            if i in active:
                self._windows[i].append(1)
                self._streaks[i] = 0
            else:
                self._windows[i].append(0)
                self._streaks[i] += 1

    def streak(self, node: int) -> int:
        return self._streaks[node]

    def rate(self, node: int) -> float:
        window = self._windows[node]
        if not window:
            return 1.0
        return sum(window) / len(window)

    def mean_rate(self) -> float:
        return sum(self.rate(i) for i in range(self.n_nodes)) / self.n_nodes


@dataclass(frozen=True)
class Telemetry:
    """Per-node control-plane inputs for one round."""

    loss: float
    disagreement: float
    streak: int
    rate: float
    chi: float


def disagreement(own_state: np.ndarray, delivered_neighbor_states) -> float:
    """Mean normalized L2 distance to delivered neighbor states; 0 when none."""
    if not delivered_neighbor_states:
        return 0.0
    own = np.asarray(own_state, dtype=float)
    denom = float(np.linalg.norm(own)) + 1e-6
    total = 0.0
    for other in delivered_neighbor_states:
        other = np.asarray(other, dtype=float)
        if other.shape != own.shape:
            raise ValueError(f"state dimension mismatch: {own.shape} vs {other.shape}")
        total += float(np.linalg.norm(own - other)) / denom
    return total / len(delivered_neighbor_states)
