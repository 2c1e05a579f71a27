"""Synthetic vessel mobility traces and time-binned contact graphs.

Vessels alternate between in-port dwells and point-to-point transits inside
a bounded coastal region. Positions are reported once per base step, with
state-dependent reporting gaps, and are binned into snapshot graphs whose
edges combine a haversine range rule with same-port cliques.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0
MIN_PORT_SEPARATION_KM = 30.0
# Ports occupy an inner fraction of the region disk. Sampling the full disk
# produces port legs that single transits cannot finish inside the 48-step
# trace and collapses the contact-range separation between regime presets.
PORT_ZONE_FRACTION = 0.65

PHASE_PORT = "port"
PHASE_SEA = "sea"

# RNG stream salts, kept distinct so every draw is reproducible per (seed, role).
_SALT_PORTS = 11
_SALT_VESSEL = 12
_SALT_GAPS = 13


@dataclass(frozen=True)
class GeoPosition:
    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"lat_deg out of range: {self.lat_deg}")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise ValueError(f"lon_deg out of range: {self.lon_deg}")


@dataclass(frozen=True)
class PortSpec:
    port_id: int
    position: GeoPosition


@dataclass(frozen=True)
class MobilityConfig:
    """Parameters of the synthetic fleet mobility model."""

    n_vessels: int = 5
    n_ports: int = 6
    region_center: GeoPosition = field(default_factory=lambda: GeoPosition(37.0, -122.0))
    region_radius_km: float = 300.0
    n_base_steps: int = 48
    base_step_min: int = 30
    dwell_mean: float = 4.0
    dwell_std: float = 1.0
    dwell_min: int = 1
    speed_mean_kmh: float = 28.0
    speed_std_kmh: float = 6.0
    speed_min_kmh: float = 5.0
    gap_prob_in_port: float = 0.10
    gap_prob_at_sea: float = 0.25

    def __post_init__(self):
        for name in ("n_vessels", "n_ports", "n_base_steps", "base_step_min", "dwell_min"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("gap_prob_in_port", "gap_prob_at_sea"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.speed_min_kmh <= 0:
            raise ValueError("speed_min_kmh must be > 0")
        if self.region_radius_km <= 0:
            raise ValueError("region_radius_km must be > 0")


@dataclass
class MobilityTrace:
    """Per-vessel, per-base-step positions (None marks a reporting gap) with
    the phase tag (kind, port id) that produced each report."""

    positions: list  # [vessel][step] -> GeoPosition | None
    phases: list  # [vessel][step] -> (PHASE_PORT | PHASE_SEA, port_id)
    base_step_min: int

    @property
    def n_vessels(self) -> int:
        return len(self.positions)

    @property
    def n_steps(self) -> int:
        return len(self.positions[0]) if self.positions else 0


@dataclass(frozen=True)
class RegimePreset:
    """Snapshot bin duration and contact range defining a connectivity regime."""

    name: str
    bin_min: int
    comm_range_km: float

    def __post_init__(self):
        if self.bin_min < 1:
            raise ValueError("bin_min must be >= 1")
        if self.comm_range_km <= 0:
            raise ValueError("comm_range_km must be > 0")


REGIMES = {
    "well-connected": RegimePreset("well-connected", 30, 200.0),
    "mid": RegimePreset("mid", 30, 80.0),
    "fragmented": RegimePreset("fragmented", 60, 80.0),
}


@dataclass(frozen=True)
class SnapshotGraph:
    bin_index: int
    edges: tuple  # sorted tuple of (i, j) pairs with i < j


@dataclass
class TopologyTrace:
    snapshots: list
    regime: RegimePreset
    n_nodes: int


@dataclass(frozen=True)
class ConnectivityStats:
    connected_snapshot_count: int
    snapshot_count: int
    connectivity_rate: float
    median_components: float
    mean_largest_component_ratio: float


def haversine_km(a: GeoPosition, b: GeoPosition) -> float:
    """Great-circle distance in km between two positions (R = 6371 km)."""
    lat1, lat2 = math.radians(a.lat_deg), math.radians(b.lat_deg)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon_deg - a.lon_deg)
    s = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def _offset_km(center: GeoPosition, east_km: float, north_km: float) -> GeoPosition:
    """Local tangent-plane offset; adequate at the few-hundred-km scale used here."""
    lat = center.lat_deg + north_km / KM_PER_DEG_LAT
    lon = center.lon_deg + east_km / (KM_PER_DEG_LAT * math.cos(math.radians(center.lat_deg)))
    return GeoPosition(lat, lon)


def place_ports(config: MobilityConfig, seed: int) -> list:
    """Sample port locations uniformly in the inner port zone of the region
    disk, rejection-sampled to keep pairwise separation >= MIN_PORT_SEPARATION_KM."""
    rng = np.random.default_rng([seed, _SALT_PORTS])
    ports = []
    attempts = 0
    while len(ports) < config.n_ports:
        attempts += 1
        if attempts > 100_000:
            raise RuntimeError("port placement failed; region too small for separation rule")
        r = PORT_ZONE_FRACTION * config.region_radius_km * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        pos = _offset_km(config.region_center, r * math.cos(theta), r * math.sin(theta))
        if all(haversine_km(pos, p.position) >= MIN_PORT_SEPARATION_KM for p in ports):
            ports.append(PortSpec(len(ports), pos))
    return ports


def _draw_dwell(rng, config: MobilityConfig) -> int:
    d = int(round(rng.normal(config.dwell_mean, config.dwell_std)))
    return max(config.dwell_min, d)


def _draw_speed(rng, config: MobilityConfig) -> float:
    return max(config.speed_min_kmh, rng.normal(config.speed_mean_kmh, config.speed_std_kmh))


def _interpolate(a: GeoPosition, b: GeoPosition, frac: float) -> GeoPosition:
    return GeoPosition(
        a.lat_deg + frac * (b.lat_deg - a.lat_deg),
        a.lon_deg + frac * (b.lon_deg - a.lon_deg),
    )


def generate_mobility(config: MobilityConfig, seed: int) -> MobilityTrace:
    """Simulate dwell/transit cycles for every vessel over the base-step grid.

    Each vessel starts dwelling at a random port, then alternates: dwell length
    from a rounded truncated Normal, destination uniform among the other ports,
    transit time ceil(distance / speed / step length) with linearly interpolated
    reports along the segment.
    """
    ports = place_ports(config, seed)
    step_h = config.base_step_min / 60.0
    positions = []
    phases = []
    for v in range(config.n_vessels):
        rng = np.random.default_rng([seed, _SALT_VESSEL, v])
        pos_row = []
        phase_row = []
        port = int(rng.integers(config.n_ports))
        dwell_left = _draw_dwell(rng, config)
        transit = None  # [origin, dest_port, total_steps, done_steps]

        def plan_transit():
            others = [p for p in range(config.n_ports) if p != port]
            dest = others[int(rng.integers(len(others)))]
            speed = _draw_speed(rng, config)
            dist = haversine_km(ports[port].position, ports[dest].position)
            steps = max(1, math.ceil(dist / speed / step_h))
            return [ports[port].position, dest, steps, 0]

        while len(pos_row) < config.n_base_steps:
            if transit is None:
                pos_row.append(ports[port].position)
                phase_row.append((PHASE_PORT, port))
                dwell_left -= 1
                if dwell_left <= 0:
                    if config.n_ports > 1:
                        transit = plan_transit()
                    else:
                        dwell_left = _draw_dwell(rng, config)
            else:
                origin, dest, total, done = transit
                done += 1
                if done >= total:
                    # The arrival step is spent at the destination port.
                    pos_row.append(ports[dest].position)
                    phase_row.append((PHASE_PORT, dest))
                    port = dest
                    dwell_left = _draw_dwell(rng, config) - 1
                    transit = plan_transit() if dwell_left <= 0 and config.n_ports > 1 else None
                else:
                    pos_row.append(_interpolate(origin, ports[dest].position, done / total))
                    phase_row.append((PHASE_SEA, dest))
                    transit[3] = done
        positions.append(pos_row)
        phases.append(phase_row)
    return MobilityTrace(positions, phases, config.base_step_min)


def inject_gaps(trace: MobilityTrace, config: MobilityConfig, seed: int) -> MobilityTrace:
    """Erase each report independently with the phase-dependent gap probability."""
    rng = np.random.default_rng([seed, _SALT_GAPS])
    positions = []
    for v in range(trace.n_vessels):
        row = []
        for s in range(trace.n_steps):
            kind, _ = trace.phases[v][s]
            p_gap = config.gap_prob_in_port if kind == PHASE_PORT else config.gap_prob_at_sea
            erased = rng.uniform() < p_gap
            row.append(None if erased else trace.positions[v][s])
        positions.append(row)
    return MobilityTrace(positions, [list(r) for r in trace.phases], trace.base_step_min)


def build_snapshots(trace: MobilityTrace, regime: RegimePreset) -> TopologyTrace:
    """Bin the trace into snapshot graphs for one regime.

    Per bin a vessel contributes its last report inside the bin; a vessel silent
    for exactly one bin reuses its previous bin's report (hold-last-position),
    longer silences exclude it. Edges: haversine distance <= comm range, or both
    vessels tagged in the same port (port clique), whichever fires first.
    """
    if trace.n_steps == 0 or trace.n_vessels == 0:
        raise ValueError("empty trace")
    if regime.bin_min % trace.base_step_min != 0:
        raise ValueError(
            f"bin_min {regime.bin_min} is not a multiple of base_step_min {trace.base_step_min}"
        )
    steps_per_bin = regime.bin_min // trace.base_step_min
    n_bins = trace.n_steps // steps_per_bin
    n = trace.n_vessels

    # reported[b][v]: (position, phase) of the last report in bin b, or None.
    reported = []
    for b in range(n_bins):
        row = []
        for v in range(n):
            entry = None
            for s in range(b * steps_per_bin, (b + 1) * steps_per_bin):
                if trace.positions[v][s] is not None:
                    entry = (trace.positions[v][s], trace.phases[v][s])
            row.append(entry)
        reported.append(row)

    snapshots = []
    for b in range(n_bins):
        effective = []
        for v in range(n):
            entry = reported[b][v]
            if entry is None and b > 0:
                entry = reported[b - 1][v]  # bridge at most one silent bin
            effective.append(entry)
        edges = []
        for i in range(n):
            if effective[i] is None:
                continue
            for j in range(i + 1, n):
                if effective[j] is None:
                    continue
                pos_i, phase_i = effective[i]
                pos_j, phase_j = effective[j]
                same_port = (
                    phase_i[0] == PHASE_PORT
                    and phase_j[0] == PHASE_PORT
                    and phase_i[1] == phase_j[1]
                )
                if same_port or haversine_km(pos_i, pos_j) <= regime.comm_range_km:
                    edges.append((i, j))
        snapshots.append(SnapshotGraph(b, tuple(edges)))
    return TopologyTrace(snapshots, regime, n)


def _components(n: int, edges) -> list:
    """Connected components over nodes 0..n-1; nodes without edges are singletons."""
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = []
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(comp)
    return comps


def connectivity_stats(topo: TopologyTrace) -> ConnectivityStats:
    """Regime separation statistics: a snapshot counts as connected only when a
    single component spans all nodes (absent nodes break connectivity)."""
    if not topo.snapshots:
        raise ValueError("empty topology trace")
    n = topo.n_nodes
    connected = 0
    comp_counts = []
    lcr_values = []
    for snap in topo.snapshots:
        comps = _components(n, snap.edges)
        comp_counts.append(len(comps))
        largest = max(len(c) for c in comps)
        lcr_values.append(largest / n)
        if len(comps) == 1:
            connected += 1
    total = len(topo.snapshots)
    return ConnectivityStats(
        connected_snapshot_count=connected,
        snapshot_count=total,
        connectivity_rate=connected / total,
        median_components=float(statistics.median(comp_counts)),
        mean_largest_component_ratio=float(np.mean(lcr_values)),
    )


def save_trace(trace: MobilityTrace, path) -> None:
    """Write one row per vessel per base step: vessel, step, lat, lon, present, phase."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["vessel_id", "step", "lat", "lon", "present", "phase", "base_step_min"])
        for v in range(trace.n_vessels):
            for s in range(trace.n_steps):
                pos = trace.positions[v][s]
                kind, ref = trace.phases[v][s]
                writer.writerow(
                    [
                        v,
                        s,
                        "" if pos is None else repr(pos.lat_deg),
                        "" if pos is None else repr(pos.lon_deg),
                        0 if pos is None else 1,
                        f"{kind}:{ref}",
                        trace.base_step_min,
                    ]
                )


def load_trace(path) -> MobilityTrace:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(row)
    if not rows:
        raise ValueError(f"empty trace file: {path}")
    n_vessels = max(int(r["vessel_id"]) for r in rows) + 1
    n_steps = max(int(r["step"]) for r in rows) + 1
    base_step_min = int(rows[0]["base_step_min"])
    positions = [[None] * n_steps for _ in range(n_vessels)]
    phases = [[(PHASE_PORT, 0)] * n_steps for _ in range(n_vessels)]
    for r in rows:
        v, s = int(r["vessel_id"]), int(r["step"])
        if int(r["present"]):
            positions[v][s] = GeoPosition(float(r["lat"]), float(r["lon"]))
        kind, ref = r["phase"].split(":")
        phases[v][s] = (kind, int(ref))
    return MobilityTrace(positions, phases, base_step_min)


def save_topology(topo: TopologyTrace, path) -> None:
    """Write one row per snapshot edge: bin, i, j."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin", "i", "j"])
        for snap in topo.snapshots:
            for i, j in snap.edges:
                writer.writerow([snap.bin_index, i, j])


def load_topology(path, n_nodes: int, n_bins: int, regime: RegimePreset) -> TopologyTrace:
    """Rebuild a TopologyTrace from an edge list file; bins with no rows stay empty."""
    edges_by_bin = {b: [] for b in range(n_bins)}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            edges_by_bin[int(row["bin"])].append((int(row["i"]), int(row["j"])))
    snapshots = [SnapshotGraph(b, tuple(sorted(edges_by_bin[b]))) for b in range(n_bins)]
    return TopologyTrace(snapshots, regime, n_nodes)
