"""
Configuration Module
Scenario and run configuration, JSON file loading and validation
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from modules.core.errors import ConfigParseError, ConfigValidationError

load_dotenv()

ModelT = TypeVar("ModelT", bound=BaseModel)


# ==================== SETTINGS ====================

@dataclass(frozen=True)
class Settings:
    """Paths taken from the environment (.env supported)"""

    data_path: Path
    config_path: Path
    out_dir: Path
    log_level: str


def get_settings() -> Settings:
    """Read MGC_* variables, falling back to repository defaults"""
    return Settings(
        data_path=Path(os.getenv("MGC_DATA_PATH", "./data")),
        config_path=Path(os.getenv("MGC_CONFIG_PATH", "./configs")),
        out_dir=Path(os.getenv("MGC_OUT_DIR", "./runs")),
        log_level=os.getenv("MGC_LOG_LEVEL", "INFO"),
    )


def resolve_data_file(ref: str, base: Optional[Path] = None) -> Path:
    """
    Locate a data file referenced from a config

    Args:
        ref: Absolute path, path relative to the working directory,
            or path relative to the data directory
        base: Data directory override (default: MGC_DATA_PATH)

    Returns:
        Existing path
    """
    path = Path(ref)
    if path.is_absolute() or path.exists():
        return path
    candidate = (base or get_settings().data_path) / ref
    if candidate.exists():
        return candidate
    raise ConfigValidationError(f"Data file not found: {ref}", field_path="file", reason="missing")


# ==================== JSON HELPERS ====================

def read_json(path: Path) -> Any:
    """Load a JSON document, turning syntax errors into ConfigParseError"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"Malformed JSON in {path}", line=e.lineno, column=e.colno) from e


def write_json(path: Path, data: Any) -> Path:
    """Write a JSON document with the repository's formatting"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, default=str)
        f.write("\n")
    return path


def validate_model(model: Type[ModelT], data: Any, section: str = "") -> ModelT:
    """Validate data against a pydantic model, reporting the first failing field path"""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        parts = [section] if section else []
        parts.extend(str(p) for p in first["loc"])
        field_path = ".".join(parts) or model.__name__
        raise ConfigValidationError(
            f"Invalid value for {field_path}: {first['msg']}",
            field_path=field_path,
            reason=first["msg"],
        ) from e


class StrictModel(BaseModel):
    """Immutable model rejecting unknown keys"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


# ==================== SCENARIO ====================

class ScenarioConfig(StrictModel):
    """One dispatch scenario: data files, scaling and penalty regime"""

    scenario_id: str
    network_file: str = "networks/ieee33.json"
    fleet_file: str = "fleets/synthetic_fleet.json"
    load_scale: float = Field(1.0, gt=0)
    uncertainty_scale: float = Field(1.0, gt=0)
    penalty_regime: Literal["A", "B"] = "A"
    alpha_v: float = Field(1.0, ge=0)
    beta_v: float = Field(1.0, ge=0)
    initial_soc: Optional[float] = Field(None, ge=0)
    balancing_uplift: float = Field(0.1, ge=0)
    reward_scale: Optional[float] = Field(None, gt=0)
    description: str = ""


# ==================== RUN ====================

class RunConfig(StrictModel):
    """Trainer hyperparameters and run bookkeeping"""

    algorithm: Literal["rs-trpo", "matrpo", "vpg"] = "rs-trpo"
    alpha: float = Field(0.9, gt=0, le=1)
    epsilon: float = Field(0.01, gt=0)
    backtrack_coeff: float = Field(0.8, gt=0, lt=1)
    max_backtracks: int = Field(10, ge=0)
    cg_iterations: int = Field(10, ge=1)
    cg_damping: float = Field(0.1, ge=0)
    gamma: float = Field(0.9, gt=0, le=1)
    batch_size: int = Field(64, ge=1)
    iterations: int = Field(500, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 32])
    critic_learning_rate: float = Field(1e-4, gt=0)
    critic_epochs: int = Field(10, ge=1)
    critic_minibatches: int = Field(4, ge=1)
    critic_target: Literal["return-to-go", "one-step-reward"] = "return-to-go"
    cvar_baseline: Literal["quantile-advantage", "raw-var", "none"] = "quantile-advantage"
    vpg_learning_rate: float = Field(1e-3, gt=0)
    replay_capacity: int = Field(100_000_000, ge=1)
    ratio_cap: float = Field(1e3, gt=1)
    max_nonfinite_iterations: int = Field(3, ge=1)
    checkpoint_every: int = Field(50, ge=0)
    eval_episodes: int = Field(20, ge=1)
    workers: int = Field(1, ge=1)
    record_timing: bool = False

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_layers(cls, value: List[int]) -> List[int]:
        if any(size <= 0 for size in value):
            raise ValueError("layer sizes must be positive")
        return value


def with_overrides(model: ModelT, **overrides: Any) -> ModelT:
    """Copy a config with validated field overrides (None values are ignored)"""
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return model
    return validate_model(type(model), {**model.model_dump(), **updates})


# ==================== FILES ====================

def load_config(path: str) -> Tuple[ScenarioConfig, RunConfig]:
    """
    Load a combined scenario/run configuration file

    Args:
        path: JSON file with top-level "scenario" and "run" sections

    Returns:
        (ScenarioConfig, RunConfig)
    """
    data = read_json(Path(path))
    if not isinstance(data, dict):
        raise ConfigValidationError("Config root must be an object", field_path="<root>", reason="type")

    unknown = set(data) - {"scenario", "run"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigValidationError(f"Unknown section '{key}'", field_path=key, reason="extra section")
    if "scenario" not in data:
        raise ConfigValidationError("Missing section 'scenario'", field_path="scenario", reason="missing")

    scenario = validate_model(ScenarioConfig, data["scenario"], "scenario")
    run = validate_model(RunConfig, data.get("run", {}), "run")
    return scenario, run


def dump_config(scenario: ScenarioConfig, run: RunConfig) -> Dict[str, Any]:
    """Serialize configs to the file layout read by load_config"""
    return {"scenario": scenario.model_dump(), "run": run.model_dump()}


def save_config(path: str, scenario: ScenarioConfig, run: RunConfig) -> Path:
    """Write a combined config file"""
    return write_json(Path(path), dump_config(scenario, run))
