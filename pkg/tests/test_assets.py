"""Tests for the asset fleet, storage and price book."""

import pytest

from modules.core.errors import BadScenario, EmptyFeasibleSet
from modules.environment.assets import (
    ControllableGenerator,
    StorageUnit,
    build_price_book,
    load_fleet,
)

from conftest import DATA_DIR


def generator(**overrides):
    values = dict(id="g", owner="mg1", bus=3, p_min=0.0, p_max=1.0, q_min=-0.5, q_max=0.5,
                  ramp_down=-0.2, ramp_up=0.3, cost=400.0)
    values.update(overrides)
    return ControllableGenerator(**values)


def test_feasible_band_intersects_ramp_and_capacity():
    gen = generator()
    assert gen.feasible_band(0.5) == pytest.approx((0.3, 0.8))
    assert gen.feasible_band(0.9) == pytest.approx((0.7, 1.0))
    assert gen.feasible_band(0.1) == pytest.approx((0.0, 0.4))


def test_feasible_band_empty_raises():
    gen = generator(p_min=0.5)
    with pytest.raises(EmptyFeasibleSet):
        gen.feasible_band(0.1)


def test_inverted_limits_rejected():
    with pytest.raises(BadScenario):
        generator(p_min=2.0)
    with pytest.raises(BadScenario):
        generator(ramp_down=0.1)


def test_reactive_output_at_fixed_power_factor():
    gen = generator()
    assert gen.reactive_output(0.95) == pytest.approx(0.95 * (1 - 0.95 ** 2) ** 0.5 / 0.95)
    assert gen.reactive_output(10.0) == 0.5


def test_storage_limits_and_soc():
    ess = StorageUnit(id="ess", bus=2, p_min=-0.5, p_max=0.5, soc_min=0.2, soc_max=2.0,
                      soc_init=1.0, efficiency=0.81, cost=480.0)
    assert ess.one_way_efficiency == pytest.approx(0.9)
    assert ess.discharge_limit(0.3) == pytest.approx(0.09)
    assert ess.discharge_limit(1.0) == 0.5
    assert ess.charge_limit(1.9) == pytest.approx(0.1 / 0.9)
    assert ess.next_soc(1.0, 0.45) == pytest.approx(0.5)
    assert ess.next_soc(1.0, -0.5) == pytest.approx(1.45)


def test_synthetic_fleet_layout():
    fleet = load_fleet(DATA_DIR / "fleets" / "synthetic_fleet.json")
    assert fleet.n_agents == 4
    assert fleet.action_dims == [2, 2, 2, 2]
    assert all(len(mg.renewables) == 2 for mg in fleet.microgrids)
    assert len(fleet.dso_generators) == 3
    assert len(fleet.dso_storage) == 1
    costs = sorted(gen.cost for gen in fleet.dso_generators)
    assert costs[0] < costs[-1]


def test_fleet_matches_network(ieee33, toy6):
    load_fleet(DATA_DIR / "fleets" / "synthetic_fleet.json").validate_against(ieee33)
    load_fleet(DATA_DIR / "fleets" / "toy_fleet.json").validate_against(toy6)


def test_fleet_on_wrong_network_rejected(toy6):
    fleet = load_fleet(DATA_DIR / "fleets" / "synthetic_fleet.json")
    with pytest.raises(BadScenario):
        fleet.validate_against(toy6)


def test_scaled_fleet():
    fleet = load_fleet(DATA_DIR / "fleets" / "toy_fleet.json")
    scaled = fleet.scaled(load_scale=0.5, uncertainty_scale=2.0)
    assert scaled.microgrids[0].load_forecast[10] == pytest.approx(0.5 * fleet.microgrids[0].load_forecast[10])
    assert scaled.microgrids[0].renewables[0].error_std == pytest.approx(0.6)
    assert scaled.adn_error_std == pytest.approx(0.1)
    assert scaled.microgrids[0].renewables[0].forecast == fleet.microgrids[0].renewables[0].forecast


def test_penalty_regimes():
    fleet = load_fleet(DATA_DIR / "fleets" / "toy_fleet.json")
    a = build_price_book(fleet, "A")
    b = build_price_book(fleet, "B")
    assert (a.hv_price, a.voltage_penalty, a.voltage_in_reward) == (500.0, 100.0, False)
    assert (b.hv_price, b.voltage_penalty, b.voltage_in_reward) == (100.0, 1000.0, True)
    with pytest.raises(BadScenario):
        build_price_book(fleet, "C")
