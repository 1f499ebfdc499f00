"""Tests for configuration loading and validation."""

import json

import pytest
from pydantic import ValidationError

from modules.core.config import (
    RunConfig,
    ScenarioConfig,
    load_config,
    save_config,
    with_overrides,
)
from modules.core.errors import ConfigParseError, ConfigValidationError
from modules.environment.assets import load_fleet

from conftest import CONFIG_DIR, DATA_DIR


def test_bundled_scenario1_is_low_load_low_uncertainty():
    scenario, run = load_config(str(CONFIG_DIR / "scenario1.json"))
    assert scenario.load_scale == 0.5
    assert scenario.uncertainty_scale == 0.5
    assert run.batch_size == 64
    assert run.critic_learning_rate == 1e-4
    assert run.gamma == 0.9


def test_round_trip_is_idempotent(tmp_path):
    scenario, run = load_config(str(CONFIG_DIR / "toy_risk.json"))
    path = save_config(str(tmp_path / "copy.json"), scenario, run)
    again_scenario, again_run = load_config(str(path))
    assert again_scenario == scenario
    assert again_run == run
    second = save_config(str(tmp_path / "second.json"), again_scenario, again_run)
    assert path.read_text() == second.read_text()


def test_unknown_key_reports_field_path(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"scenario": {"scenario_id": "x", "load_scael": 0.5}}))
    with pytest.raises(ConfigValidationError) as info:
        load_config(str(path))
    assert info.value.field_path == "scenario.load_scael"


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"scenario": {"scenario_id": "x"}, "extras": {}}))
    with pytest.raises(ConfigValidationError) as info:
        load_config(str(path))
    assert info.value.field_path == "extras"


def test_out_of_range_value_names_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"scenario": {"scenario_id": "x"}, "run": {"alpha": 1.5}}))
    with pytest.raises(ConfigValidationError) as info:
        load_config(str(path))
    assert info.value.field_path == "run.alpha"


def test_malformed_json_reports_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "scenario": {\n    "scenario_id": "x",\n  }\n}')
    with pytest.raises(ConfigParseError) as info:
        load_config(str(path))
    assert info.value.context["line"] == 4


def test_negative_price_names_the_field(tmp_path):
    data = json.loads((DATA_DIR / "fleets" / "toy_fleet.json").read_text())
    data["prices"]["mg_retail"] = -1.0
    path = tmp_path / "fleet.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigValidationError) as info:
        load_fleet(path)
    assert info.value.field_path == "fleet.prices.mg_retail"


def test_with_overrides_ignores_none_and_validates():
    run = RunConfig()
    assert with_overrides(run, alpha=None) is run
    assert with_overrides(run, alpha=0.5).alpha == 0.5
    with pytest.raises(ConfigValidationError):
        with_overrides(run, epsilon=-1.0)


def test_scenario_rejects_unknown_regime():
    with pytest.raises(ValidationError):
        ScenarioConfig(scenario_id="x", penalty_regime="C")
