import numpy as np
import pytest

from cargosim.accounting import (
    CarbonLedger,
    DeviceProfile,
    account_round,
    carbon_of,
    comm_energy,
    common_feasible_budget,
    compute_energy,
    effective_loss,
    matched_budget_metric,
)
from cargosim.dataplane import Mode, PayloadRecord

PROFILE = DeviceProfile()


def test_compute_energy_values():
    assert compute_energy(2e10, PROFILE) == pytest.approx(10.0)
    assert compute_energy(0.0, PROFILE) == 0.0
    assert compute_energy(4e10, PROFILE) == pytest.approx(2 * compute_energy(2e10, PROFILE))


def test_comm_energy_values():
    assert comm_energy(1e6, 0.0, PROFILE) == pytest.approx(0.2)
    assert comm_energy(0.0, 0.0, PROFILE) == 0.0
    doubled = DeviceProfile(link_efficiency=2.0)
    assert comm_energy(1e6, 0.0, doubled) == pytest.approx(0.4)


def test_carbon_conversion():
    assert carbon_of(3.6e6, 400.0) == pytest.approx(400.0)
    assert carbon_of(0.0, 400.0) == 0.0
    # Consistency with the controller's compute proxy example.
    assert carbon_of(compute_energy(2e10, PROFILE), 360.0) == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        carbon_of(-1.0, 300.0)


def test_device_profile_validation():
    with pytest.raises(ValueError):
        DeviceProfile(active_power_w=0.0)


# ---------------------------------------------------------------------------
# per-round accounting
# ---------------------------------------------------------------------------


def _payload(sender, receiver, nbytes, delivered):
    return PayloadRecord(sender, receiver, Mode.DENSE, nbytes, delivered)


def test_account_round_byte_conservation():
    payloads = [_payload(0, 1, 100, True), _payload(1, 0, 100, False), _payload(0, 2, 50, True)]
    cost = account_round({0: 1e9, 1: 1e9}, payloads, {0: 300.0, 1: 300.0, 2: 300.0}, PROFILE, 3, 1e9)
    assert cost.bytes_attempted == 250
    assert cost.bytes_delivered == 150
    assert cost.energy_total_j == pytest.approx(cost.energy_comp_j + cost.energy_comm_j)


def test_tx_charged_on_attempt_rx_only_on_delivery():
    lost = [_payload(0, 1, 1e6, False)]
    arrived = [_payload(0, 1, 1e6, True)]
    cost_lost = account_round({}, lost, {0: 300.0, 1: 300.0}, PROFILE, 2, 1e9, charge_idle=False)
    cost_ok = account_round({}, arrived, {0: 300.0, 1: 300.0}, PROFILE, 2, 1e9, charge_idle=False)
    assert cost_lost.energy_comm_j == pytest.approx(0.2)  # tx only
    assert cost_ok.energy_comm_j == pytest.approx(0.4)  # tx + rx


def test_idle_power_charged_when_enabled():
    chi = {0: 300.0, 1: 300.0}
    active = account_round({0: 2e10}, [], chi, PROFILE, 2, 2e10, charge_idle=True)
    no_idle = account_round({0: 2e10}, [], chi, PROFILE, 2, 2e10, charge_idle=False)
    # Round lasts 1 s; the idle node draws 1.5 W.
    assert active.energy_comp_j == pytest.approx(10.0 + 1.5)
    assert no_idle.energy_comp_j == pytest.approx(10.0)


def test_carbon_uses_per_node_intensity():
    chi = {0: 720.0, 1: 360.0}
    cost = account_round({0: 2e10, 1: 2e10}, [], chi, PROFILE, 2, 2e10)
    expected = carbon_of(10.0, 720.0) + carbon_of(10.0, 360.0)
    assert cost.carbon_g == pytest.approx(expected)


# ---------------------------------------------------------------------------
# ledger
# ---------------------------------------------------------------------------


def _cost(carbon, att, dl):
    from cargosim.accounting import RoundCost

    return RoundCost(1.0, 1.0, 2.0, carbon, att, dl)


def test_ledger_cumulative_monotone():
    ledger = CarbonLedger()
    for k in range(5):
        ledger.add_round(_cost(0.1 * k, 100, 80))
    assert ledger.cumulative_carbon_g == pytest.approx(sum(0.1 * k for k in range(5)))
    assert ledger.bytes_attempted == 500
    assert ledger.bytes_delivered == 400


def test_effective_loss():
    ledger = CarbonLedger()
    assert effective_loss(ledger) is None
    ledger.add_round(_cost(0.0, 100_000_000, 80_000_000))
    assert effective_loss(ledger) == pytest.approx(0.2)
    full = CarbonLedger()
    full.add_round(_cost(0.0, 100, 100))
    assert effective_loss(full) == 0.0


# ---------------------------------------------------------------------------
# matched-budget interpolation
# ---------------------------------------------------------------------------


def test_interpolation_at_recorded_points():
    assert matched_budget_metric([1.0, 2.0, 3.0], [0.5, 0.7, 0.9], 2.0) == pytest.approx(0.7)


def test_interpolation_between_points():
    assert matched_budget_metric([1.0, 2.0], [0.8, 0.9], 1.5) == pytest.approx(0.85)


def test_out_of_range_budget_is_infeasible():
    assert matched_budget_metric([1.0, 2.0], [0.8, 0.9], 2.5) is None
    assert matched_budget_metric([1.0, 2.0], [0.8, 0.9], 0.5) is None


def test_decreasing_axis_rejected():
    with pytest.raises(ValueError):
        matched_budget_metric([2.0, 1.0], [0.8, 0.9], 1.5)


def test_common_feasible_budget():
    assert common_feasible_budget([[0.0, 3.0], [0.0, 5.0], [1.0, 4.0]]) == 3.0
    assert common_feasible_budget([[0.0, 2.0], [0.0, 2.0]]) == 2.0
    with pytest.raises(ValueError):
        common_feasible_budget([])
    with pytest.raises(ValueError):
        common_feasible_budget([[1.0], []])
