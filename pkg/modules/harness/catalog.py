"""
Scenario Catalog
Bundled dispatch scenarios and their default run settings
"""

from pathlib import Path
from typing import Dict, Optional, Tuple

from modules.core.config import (
    RunConfig,
    ScenarioConfig,
    get_settings,
    load_config,
    validate_model,
)
from modules.core.errors import ConfigValidationError

# ==================== FEEDER SCENARIOS ====================

SCENARIOS: Dict[str, Dict] = {
    "scenario1": {
        "load_scale": 0.5,
        "uncertainty_scale": 0.5,
        "description": "Low load demand, low forecast uncertainty",
    },
    "scenario2": {
        "load_scale": 0.5,
        "uncertainty_scale": 1.0,
        "description": "Low load demand, high forecast uncertainty",
    },
    "scenario3": {
        "load_scale": 1.0,
        "uncertainty_scale": 0.5,
        "description": "High load demand, low forecast uncertainty",
    },
    "scenario4": {
        "load_scale": 1.0,
        "uncertainty_scale": 1.0,
        "description": "High load demand, high forecast uncertainty",
    },
    "toy": {
        "network_file": "networks/toy6.json",
        "fleet_file": "fleets/toy_fleet.json",
        "load_scale": 1.0,
        "uncertainty_scale": 1.0,
        "description": "Six-bus feeder with four single-generator microgrids",
    },
    "toy_risk": {
        "network_file": "networks/toy6.json",
        "fleet_file": "fleets/toy_fleet.json",
        "load_scale": 1.0,
        "uncertainty_scale": 2.0,
        "description": "Toy feeder with doubled renewable and load forecast errors",
    },
}

TOY_RUN = {"batch_size": 16, "iterations": 300, "seeds": [0, 1, 2, 3, 4], "hidden_sizes": [32, 16]}

RUN_DEFAULTS: Dict[str, Dict] = {
    "toy": TOY_RUN,
    "toy_risk": {**TOY_RUN, "alpha": 0.5},
}


def catalog_ids() -> list:
    return sorted(SCENARIOS)


def catalog_entry(scenario_id: str, regime: str = "A") -> Tuple[ScenarioConfig, RunConfig]:
    """
    Build the configs of a bundled scenario

    Args:
        scenario_id: Catalog key (scenario1..4, toy, toy_risk)
        regime: Penalty regime A (balancing-heavy) or B (voltage-heavy)

    Returns:
        (ScenarioConfig, RunConfig)
    """
    if scenario_id not in SCENARIOS:
        raise ConfigValidationError(f"Unknown scenario '{scenario_id}'", field_path="scenario",
                                    reason=f"expected one of {catalog_ids()}")
    scenario = validate_model(ScenarioConfig, {
        "scenario_id": scenario_id, "penalty_regime": regime, **SCENARIOS[scenario_id],
    }, "scenario")
    run = validate_model(RunConfig, RUN_DEFAULTS.get(scenario_id, {}), "run")
    return scenario, run


def resolve_scenario(ref: str, config_dir: Optional[Path] = None,
                     regime: Optional[str] = None) -> Tuple[ScenarioConfig, RunConfig]:
    """
    Resolve a --scenario argument

    Tries, in order: an existing config file, <config dir>/<ref>.json,
    then the built-in catalog.
    """
    path = Path(ref)
    candidates = [path, (config_dir or get_settings().config_path) / f"{ref}.json"]
    for candidate in candidates:
        if candidate.is_file():
            scenario, run = load_config(str(candidate))
            if regime and regime != scenario.penalty_regime:
                scenario = validate_model(ScenarioConfig, {**scenario.model_dump(),
                                                           "penalty_regime": regime}, "scenario")
            return scenario, run
    return catalog_entry(ref, regime or "A")
