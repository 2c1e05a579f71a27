import math

import numpy as np
import pytest

from cargosim.topology import (
    REGIMES,
    ConnectivityStats,
    GeoPosition,
    MobilityConfig,
    MobilityTrace,
    PHASE_PORT,
    PHASE_SEA,
    RegimePreset,
    SnapshotGraph,
    TopologyTrace,
    build_snapshots,
    connectivity_stats,
    generate_mobility,
    haversine_km,
    inject_gaps,
    load_topology,
    load_trace,
    place_ports,
    save_topology,
    save_trace,
)

CENTER = GeoPosition(37.0, -122.0)


def offset_north(base: GeoPosition, km: float) -> GeoPosition:
    return GeoPosition(base.lat_deg + km / 111.1949266, base.lon_deg)


# ---------------------------------------------------------------------------
# haversine
# ---------------------------------------------------------------------------


def test_haversine_identical_points_is_zero():
    assert haversine_km(CENTER, CENTER) == 0.0


def test_haversine_one_degree_longitude_at_equator():
    # Direct evaluation of the formula with R = 6371: 2 R asin(sin(0.5 deg)).
    d = haversine_km(GeoPosition(0.0, 0.0), GeoPosition(0.0, 1.0))
    assert abs(d - 111.195) < 0.01


def test_haversine_symmetry_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = GeoPosition(rng.uniform(-90, 90), rng.uniform(-180, 180))
        b = GeoPosition(rng.uniform(-90, 90), rng.uniform(-180, 180))
        assert haversine_km(a, b) == haversine_km(b, a)
        assert haversine_km(a, b) >= 0.0


# ---------------------------------------------------------------------------
# mobility generation
# ---------------------------------------------------------------------------


def test_geoposition_bounds_rejected():
    with pytest.raises(ValueError):
        GeoPosition(95.0, 0.0)
    with pytest.raises(ValueError):
        GeoPosition(0.0, 200.0)


def test_config_rejects_zero_vessels_and_ports():
    with pytest.raises(ValueError):
        MobilityConfig(n_vessels=0)
    with pytest.raises(ValueError):
        MobilityConfig(n_ports=0)


def test_ports_within_region_and_separated():
    config = MobilityConfig()
    ports = place_ports(config, seed=3)
    assert len(ports) == config.n_ports
    assert len({p.port_id for p in ports}) == config.n_ports
    for k, p in enumerate(ports):
        assert haversine_km(p.position, config.region_center) <= config.region_radius_km + 1e-9
        for q in ports[k + 1 :]:
            assert haversine_km(p.position, q.position) >= 30.0


def test_generate_mobility_deterministic():
    config = MobilityConfig()
    a = generate_mobility(config, 5)
    b = generate_mobility(config, 5)
    assert a.phases == b.phases
    for v in range(config.n_vessels):
        for s in range(config.n_base_steps):
            assert a.positions[v][s] == b.positions[v][s]


def _phase_runs(phases):
    runs = []
    for tag in phases:
        if runs and runs[-1][0] == tag:
            runs[-1][1] += 1
        else:
            runs.append([tag, 1])
    return runs


def test_degenerate_distributions_give_constant_draws():
    config = MobilityConfig(dwell_std=0.0, speed_std_kmh=0.0)
    trace = generate_mobility(config, 2)
    step_h = config.base_step_min / 60.0
    for v in range(config.n_vessels):
        # Port stays not truncated by the trace boundary are exactly 4 steps.
        runs = _phase_runs(trace.phases[v])
        for (tag, length) in runs[1:-1]:
            if tag[0] == PHASE_PORT:
                assert length == 4
        # Consecutive reports never imply speed above the constant 28 km/h draw.
        for s in range(trace.n_steps - 1):
            d = haversine_km(trace.positions[v][s], trace.positions[v][s + 1])
            assert d / step_h <= 28.0 + 1e-6


def test_every_vessel_visits_two_ports():
    config = MobilityConfig()
    for seed in range(5):
        trace = generate_mobility(config, seed)
        for v in range(config.n_vessels):
            ports_seen = {ref for kind, ref in trace.phases[v] if kind == PHASE_PORT}
            assert len(ports_seen) >= 2


# ---------------------------------------------------------------------------
# gap injection
# ---------------------------------------------------------------------------


def test_zero_gap_probabilities_leave_trace_unchanged():
    config = MobilityConfig(gap_prob_in_port=0.0, gap_prob_at_sea=0.0)
    trace = generate_mobility(config, 1)
    gapped = inject_gaps(trace, config, 1)
    assert gapped.positions == trace.positions


def test_unit_gap_probabilities_erase_everything():
    config = MobilityConfig(gap_prob_in_port=1.0, gap_prob_at_sea=1.0)
    trace = generate_mobility(config, 1)
    gapped = inject_gaps(trace, config, 1)
    assert all(pos is None for row in gapped.positions for pos in row)


def test_gap_rates_match_per_phase():
    config = MobilityConfig(gap_prob_in_port=0.1, gap_prob_at_sea=0.3)
    erased = {PHASE_PORT: 0, PHASE_SEA: 0}
    total = {PHASE_PORT: 0, PHASE_SEA: 0}
    for seed in range(10):
        trace = generate_mobility(config, seed)
        gapped = inject_gaps(trace, config, seed)
        for v in range(trace.n_vessels):
            for s in range(trace.n_steps):
                kind, _ = trace.phases[v][s]
                total[kind] += 1
                if gapped.positions[v][s] is None:
                    erased[kind] += 1
    assert abs(erased[PHASE_PORT] / total[PHASE_PORT] - 0.1) < 0.05
    assert abs(erased[PHASE_SEA] / total[PHASE_SEA] - 0.3) < 0.05


def test_inject_gaps_deterministic():
    config = MobilityConfig()
    trace = generate_mobility(config, 4)
    a = inject_gaps(trace, config, 9)
    b = inject_gaps(trace, config, 9)
    assert a.positions == b.positions


# ---------------------------------------------------------------------------
# snapshot construction
# ---------------------------------------------------------------------------


def _two_vessel_trace(distance_km: float, phases, n_steps: int = 1, present=None):
    """Two vessels `distance_km` apart, constant over n_steps."""
    p0 = CENTER
    p1 = offset_north(CENTER, distance_km)
    positions = [[p0] * n_steps, [p1] * n_steps]
    if present is not None:
        positions = [
            [positions[v][s] if present[v][s] else None for s in range(n_steps)] for v in range(2)
        ]
    return MobilityTrace(positions, [[phases[0]] * n_steps, [phases[1]] * n_steps], 30)


def test_edge_by_distance_rule():
    trace = _two_vessel_trace(50.0, [(PHASE_SEA, 0), (PHASE_SEA, 1)])
    topo = build_snapshots(trace, RegimePreset("t", 30, 80.0))
    assert topo.snapshots[0].edges == ((0, 1),)


def test_no_edge_beyond_range_without_port():
    trace = _two_vessel_trace(50.0, [(PHASE_SEA, 0), (PHASE_SEA, 1)])
    topo = build_snapshots(trace, RegimePreset("t", 30, 30.0))
    assert topo.snapshots[0].edges == ()


def test_port_clique_overrides_distance():
    trace = _two_vessel_trace(50.0, [(PHASE_PORT, 3), (PHASE_PORT, 3)])
    topo = build_snapshots(trace, RegimePreset("t", 30, 30.0))
    assert topo.snapshots[0].edges == ((0, 1),)


def test_different_ports_no_clique():
    trace = _two_vessel_trace(50.0, [(PHASE_PORT, 3), (PHASE_PORT, 4)])
    topo = build_snapshots(trace, RegimePreset("t", 30, 30.0))
    assert topo.snapshots[0].edges == ()


def test_single_bin_absence_bridged_two_bin_absence_excluded():
    present = [[True, False, False], [True, True, True]]
    trace = _two_vessel_trace(50.0, [(PHASE_SEA, 0), (PHASE_SEA, 1)], n_steps=3, present=present)
    topo = build_snapshots(trace, RegimePreset("t", 30, 80.0))
    assert topo.snapshots[0].edges == ((0, 1),)  # reported
    assert topo.snapshots[1].edges == ((0, 1),)  # bridged from bin 0
    assert topo.snapshots[2].edges == ()  # absent two bins running


def test_gap_bridging_preserves_previous_bin_contribution():
    present = [[True, False], [True, True]]
    trace = _two_vessel_trace(50.0, [(PHASE_SEA, 0), (PHASE_SEA, 1)], n_steps=2, present=present)
    topo = build_snapshots(trace, RegimePreset("t", 30, 80.0))
    assert topo.snapshots[1].edges == topo.snapshots[0].edges


def test_build_snapshots_rejects_bad_bin():
    trace = _two_vessel_trace(50.0, [(PHASE_SEA, 0), (PHASE_SEA, 1)])
    with pytest.raises(ValueError):
        build_snapshots(trace, RegimePreset("t", 45, 80.0))


def test_build_snapshots_rejects_empty_trace():
    with pytest.raises(ValueError):
        build_snapshots(MobilityTrace([], [], 30), REGIMES["mid"])


def test_snapshot_count_matches_bin_size():
    config = MobilityConfig()
    trace = generate_mobility(config, 0)
    topo30 = build_snapshots(trace, RegimePreset("a", 30, 80.0))
    topo60 = build_snapshots(trace, RegimePreset("b", 60, 80.0))
    assert len(topo30.snapshots) == 48
    assert len(topo60.snapshots) == 24


def test_snapshot_edges_valid():
    config = MobilityConfig()
    for seed in range(3):
        trace = inject_gaps(generate_mobility(config, seed), config, seed)
        topo = build_snapshots(trace, REGIMES["mid"])
        for snap in topo.snapshots:
            for i, j in snap.edges:
                assert i < j < config.n_vessels
            assert len(set(snap.edges)) == len(snap.edges)


def test_range_monotonicity():
    config = MobilityConfig()
    for seed in range(3):
        trace = inject_gaps(generate_mobility(config, seed), config, seed)
        small = build_snapshots(trace, RegimePreset("s", 30, 80.0))
        large = build_snapshots(trace, RegimePreset("l", 30, 200.0))
        for a, b in zip(small.snapshots, large.snapshots):
            assert set(a.edges) <= set(b.edges)


# ---------------------------------------------------------------------------
# connectivity statistics
# ---------------------------------------------------------------------------


def _topo_from_edges(edge_lists, n: int) -> TopologyTrace:
    snaps = [SnapshotGraph(b, tuple(sorted(e))) for b, e in enumerate(edge_lists)]
    return TopologyTrace(snaps, REGIMES["mid"], n)


def test_stats_complete_graphs():
    complete = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    stats = connectivity_stats(_topo_from_edges([complete] * 4, 5))
    assert stats == ConnectivityStats(4, 4, 1.0, 1.0, 1.0)


def test_stats_edgeless_graphs():
    stats = connectivity_stats(_topo_from_edges([[], []], 5))
    assert stats.connectivity_rate == 0.0
    assert stats.median_components == 5.0
    assert stats.mean_largest_component_ratio == pytest.approx(0.2)


def test_regime_ordering_light():
    config = MobilityConfig()
    rates = {"well-connected": [], "mid": []}
    mid_comps = []
    for seed in range(3):
        trace = inject_gaps(generate_mobility(config, seed), config, seed)
        for name in rates:
            stats = connectivity_stats(build_snapshots(trace, REGIMES[name]))
            rates[name].append(stats.connectivity_rate)
            if name == "mid":
                mid_comps.append(stats.median_components)
    assert np.mean(rates["well-connected"]) > np.mean(rates["mid"])
    assert all(c >= 2 for c in mid_comps)


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------


def test_trace_roundtrip(tmp_path):
    config = MobilityConfig()
    trace = inject_gaps(generate_mobility(config, 6), config, 6)
    path = tmp_path / "trace.csv"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert loaded.base_step_min == trace.base_step_min
    assert loaded.phases == trace.phases
    for v in range(trace.n_vessels):
        for s in range(trace.n_steps):
            a, b = trace.positions[v][s], loaded.positions[v][s]
            if a is None:
                assert b is None
            else:
                assert a.lat_deg == b.lat_deg and a.lon_deg == b.lon_deg


def test_topology_roundtrip(tmp_path):
    config = MobilityConfig()
    trace = inject_gaps(generate_mobility(config, 6), config, 6)
    topo = build_snapshots(trace, REGIMES["mid"])
    path = tmp_path / "topo.csv"
    save_topology(topo, path)
    loaded = load_topology(path, topo.n_nodes, len(topo.snapshots), topo.regime)
    assert [s.edges for s in loaded.snapshots] == [s.edges for s in topo.snapshots]
