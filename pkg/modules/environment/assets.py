"""
Asset Fleet Module
Generators, renewables, storage, microgrids and the price book
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from modules.core.config import StrictModel, read_json, validate_model
from modules.core.errors import BadScenario, EmptyFeasibleSet
from modules.network.topology import NetworkTopology

HOURS = 24
POWER_FACTOR = 0.95

# Regime id -> (HV balancing price RMB/MW, voltage penalty RMB per unit, charged to MG reward)
PENALTY_REGIMES: Dict[str, Tuple[float, float, bool]] = {
    "A": (500.0, 100.0, False),
    "B": (100.0, 1000.0, True),
}


# ==================== ASSETS ====================

@dataclass(frozen=True)
class ControllableGenerator:
    """Dispatchable unit owned by a microgrid or by the DSO"""

    id: str
    owner: str
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_down: float  # MW/h, <= 0
    ramp_up: float    # MW/h, >= 0
    cost: float       # RMB/MWh

    def __post_init__(self):
        if self.p_min > self.p_max or self.q_min > self.q_max:
            raise BadScenario("Generator limits are inverted", generator=self.id)
        if self.ramp_down > 0 or self.ramp_up < 0:
            raise BadScenario("Ramp band must contain 0", generator=self.id)
        if self.cost < 0:
            raise BadScenario("Generator cost must be non-negative", generator=self.id)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.p_min + self.p_max)

    def feasible_band(self, previous: float) -> Tuple[float, float]:
        """Ramp band around the previous output intersected with the capacity band"""
        low = max(self.p_min, previous + self.ramp_down)
        high = min(self.p_max, previous + self.ramp_up)
        if low > high:
            raise EmptyFeasibleSet(
                "Ramp band and capacity band do not intersect",
                generator=self.id, previous=previous, low=low, high=high,
            )
        return low, high

    def reactive_output(self, p: float, power_factor: float = POWER_FACTOR) -> float:
        """Lagging reactive output at a fixed power factor, clipped to the Q band"""
        q = p * float(np.tan(np.arccos(power_factor)))
        return min(self.q_max, max(self.q_min, q))


@dataclass(frozen=True)
class RenewableUnit:
    """Wind or PV unit with a 24-hour forecast (MW) and a relative error model"""

    id: str
    owner: str
    bus: int
    kind: str
    capacity: float
    forecast: Tuple[float, ...]
    error_std: float
    group: str


@dataclass(frozen=True)
class StorageUnit:
    """DSO battery. Positive power discharges, negative charges"""

    id: str
    bus: int
    p_min: float
    p_max: float
    soc_min: float
    soc_max: float
    soc_init: float
    efficiency: float  # round trip
    cost: float

    def __post_init__(self):
        if self.p_min > 0 or self.p_max < 0:
            raise BadScenario("Storage power band must contain 0", storage=self.id)
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise BadScenario("Initial SOC outside the SOC band", storage=self.id)
        if not 0 < self.efficiency <= 1:
            raise BadScenario("Storage efficiency must be in (0, 1]", storage=self.id)

    @property
    def one_way_efficiency(self) -> float:
        return float(np.sqrt(self.efficiency))

    def discharge_limit(self, soc: float) -> float:
        """Largest discharge (MW over one hour) allowed by power and SOC bands"""
        return max(0.0, min(self.p_max, (soc - self.soc_min) * self.one_way_efficiency))

    def charge_limit(self, soc: float) -> float:
        """Largest charge magnitude (MW over one hour)"""
        return max(0.0, min(-self.p_min, (self.soc_max - soc) / self.one_way_efficiency))

    def next_soc(self, soc: float, power: float) -> float:
        eta = self.one_way_efficiency
        if power >= 0:
            value = soc - power / eta
        else:
            value = soc - power * eta
        return min(self.soc_max, max(self.soc_min, value))


@dataclass(frozen=True)
class Microgrid:
    """One agent: its bus, dispatchable units, renewables and local load"""

    id: str
    bus: int
    generators: Tuple[ControllableGenerator, ...]
    renewables: Tuple[RenewableUnit, ...]
    load_forecast: Tuple[float, ...]
    load_q_ratio: float
    load_error_std: float
    load_group: str

    @property
    def action_dim(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class PriceBook:
    """Prices in RMB/MWh unless noted; voltage penalty in RMB per penalty unit"""

    mg_retail: float
    adn_retail: float
    hv_price: float
    loss_price: float
    voltage_penalty: float
    curtailment_penalty: float
    balancing_uplift: float = 0.1
    alpha_v: float = 1.0
    beta_v: float = 1.0
    voltage_in_reward: bool = False

    def __post_init__(self):
        for name in ("mg_retail", "adn_retail", "hv_price", "loss_price", "voltage_penalty",
                     "curtailment_penalty", "balancing_uplift", "alpha_v", "beta_v"):
            if getattr(self, name) < 0:
                raise BadScenario("Prices must be non-negative", field=name)


@dataclass(frozen=True)
class AssetFleet:
    """Everything connected to the feeder, partitioned by owner"""

    name: str
    microgrids: Tuple[Microgrid, ...]
    dso_generators: Tuple[ControllableGenerator, ...]
    dso_storage: Tuple[StorageUnit, ...]
    dso_renewables: Tuple[RenewableUnit, ...]
    adn_load_shape: Tuple[float, ...]
    adn_error_std: float
    adn_group: str
    correlation: Dict[str, dict] = field(default_factory=dict)
    base_prices: Dict[str, float] = field(default_factory=dict)
    hv_import_cap: Optional[float] = None

    @property
    def n_agents(self) -> int:
        return len(self.microgrids)

    @property
    def agent_ids(self) -> List[str]:
        return [mg.id for mg in self.microgrids]

    @property
    def action_dims(self) -> List[int]:
        return [mg.action_dim for mg in self.microgrids]

    def mg_generators(self) -> List[ControllableGenerator]:
        return [gen for mg in self.microgrids for gen in mg.generators]

    def all_generators(self) -> List[ControllableGenerator]:
        return self.mg_generators() + list(self.dso_generators)

    def all_renewables(self) -> List[RenewableUnit]:
        return [unit for mg in self.microgrids for unit in mg.renewables] + list(self.dso_renewables)

    def asset_ids(self) -> List[str]:
        ids = [mg.id for mg in self.microgrids]
        ids += [gen.id for gen in self.all_generators()]
        ids += [unit.id for unit in self.all_renewables()]
        ids += [ess.id for ess in self.dso_storage]
        return ids

    def scaled(self, load_scale: float = 1.0, uncertainty_scale: float = 1.0) -> "AssetFleet":
        """Apply scenario load and uncertainty scaling to loads and error stds"""
        def scale_unit(unit: RenewableUnit) -> RenewableUnit:
            return replace(unit, error_std=unit.error_std * uncertainty_scale)

        microgrids = tuple(
            replace(
                mg,
                load_forecast=tuple(v * load_scale for v in mg.load_forecast),
                load_error_std=mg.load_error_std * uncertainty_scale,
                renewables=tuple(scale_unit(u) for u in mg.renewables),
            )
            for mg in self.microgrids
        )
        return replace(
            self,
            microgrids=microgrids,
            dso_renewables=tuple(scale_unit(u) for u in self.dso_renewables),
            adn_load_shape=tuple(v * load_scale for v in self.adn_load_shape),
            adn_error_std=self.adn_error_std * uncertainty_scale,
        )

    def validate_against(self, topology: NetworkTopology) -> None:
        """Every asset must sit on a network bus and every listed network asset must exist"""
        bus_set = set(topology.buses)
        placed = [(mg.id, mg.bus) for mg in self.microgrids]
        placed += [(gen.id, gen.bus) for gen in self.all_generators()]
        placed += [(unit.id, unit.bus) for unit in self.all_renewables()]
        placed += [(ess.id, ess.bus) for ess in self.dso_storage]
        for asset_id, bus in placed:
            if bus not in bus_set:
                raise BadScenario("Asset placed on an unknown bus", asset=asset_id, bus=bus)
            if bus == topology.slack_bus:
                raise BadScenario("Assets cannot sit on the slack bus", asset=asset_id)

        known = set(self.asset_ids())
        for bus, assets in topology.bus_assets.items():
            for asset_id in assets:
                if asset_id not in known:
                    raise BadScenario("Network lists an asset missing from the fleet",
                                      asset=asset_id, bus=bus)

        if len(set(self.asset_ids())) != len(self.asset_ids()):
            raise BadScenario("Duplicate asset ids in fleet", fleet=self.name)


def build_price_book(fleet: AssetFleet, regime: str, balancing_uplift: float = 0.1,
                     alpha_v: float = 1.0, beta_v: float = 1.0) -> PriceBook:
    """Combine fleet base prices with a penalty regime"""
    if regime not in PENALTY_REGIMES:
        raise BadScenario("Unknown penalty regime", regime=regime)
    hv_price, voltage_penalty, in_reward = PENALTY_REGIMES[regime]
    prices = fleet.base_prices
    return PriceBook(
        mg_retail=prices["mg_retail"],
        adn_retail=prices["adn_retail"],
        hv_price=hv_price,
        loss_price=prices["loss_price"],
        voltage_penalty=voltage_penalty,
        curtailment_penalty=prices["curtailment_penalty"],
        balancing_uplift=balancing_uplift,
        alpha_v=alpha_v,
        beta_v=beta_v,
        voltage_in_reward=in_reward,
    )


# ==================== FILE FORMAT ====================

Profile = List[float]


class GeneratorRecord(StrictModel):
    id: str
    bus: Optional[int] = None
    kind: str = "CDG"
    p_min: float = Field(0.0, ge=0)
    p_max: float = Field(gt=0)
    q_min: float = 0.0
    q_max: float = 0.0
    ramp_down: float = Field(le=0)
    ramp_up: float = Field(ge=0)
    cost: float = Field(ge=0)


class RenewableRecord(StrictModel):
    id: str
    bus: Optional[int] = None
    kind: Literal["wind", "pv"]
    capacity_mw: float = Field(gt=0)
    profile: str
    error_std: float = Field(0.0, ge=0)
    group: Optional[str] = None


class StorageRecord(StrictModel):
    id: str
    bus: int
    p_min: float = Field(le=0)
    p_max: float = Field(ge=0)
    soc_min: float = Field(ge=0)
    soc_max: float = Field(gt=0)
    soc_init: float = Field(ge=0)
    efficiency: float = Field(0.9, gt=0, le=1)
    cost: float = Field(ge=0)


class MicrogridRecord(StrictModel):
    id: str
    bus: int
    load_peak_mw: float = Field(gt=0)
    load_profile: str = "load"
    load_q_ratio: float = Field(0.33, ge=0)
    load_error_std: float = Field(0.0, ge=0)
    load_group: Optional[str] = None
    generators: List[GeneratorRecord] = Field(min_length=1)
    renewables: List[RenewableRecord] = Field(default_factory=list)


class DsoRecord(StrictModel):
    generators: List[GeneratorRecord] = Field(default_factory=list)
    storage: List[StorageRecord] = Field(default_factory=list)
    renewables: List[RenewableRecord] = Field(default_factory=list)
    hv_import_cap_mw: Optional[float] = Field(None, gt=0)


class AdnLoadRecord(StrictModel):
    profile: str = "load"
    error_std: float = Field(0.0, ge=0)
    group: Optional[str] = None


class PriceRecord(StrictModel):
    mg_retail: float = Field(ge=0)
    adn_retail: float = Field(ge=0)
    loss_price: float = Field(ge=0)
    curtailment_penalty: float = Field(ge=0)


class CorrelationRecord(StrictModel):
    rho: Optional[float] = Field(None, ge=-1, le=1)
    matrix: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.rho is None) == (self.matrix is None):
            raise ValueError("give exactly one of rho or matrix")
        return self


class FleetFile(StrictModel):
    name: str = "fleet"
    notes: str = ""
    profiles: Dict[str, List[float]]
    prices: PriceRecord
    correlation_groups: Dict[str, CorrelationRecord] = Field(default_factory=dict)
    microgrids: List[MicrogridRecord] = Field(min_length=1)
    dso: DsoRecord = Field(default_factory=DsoRecord)
    adn_load: AdnLoadRecord = Field(default_factory=AdnLoadRecord)

    @model_validator(mode="after")
    def _profiles_are_daily(self):
        for key, values in self.profiles.items():
            if len(values) != HOURS:
                raise ValueError(f"profile '{key}' must have {HOURS} values")
            if any(v < 0 for v in values):
                raise ValueError(f"profile '{key}' must be non-negative")
        return self


def _profile(data: FleetFile, key: str, owner: str) -> List[float]:
    if key not in data.profiles:
        raise BadScenario("Unknown profile reference", profile=key, owner=owner)
    return data.profiles[key]


def _generator(record: GeneratorRecord, owner: str, bus: int) -> ControllableGenerator:
    return ControllableGenerator(
        id=record.id, owner=owner, bus=bus,
        p_min=record.p_min, p_max=record.p_max,
        q_min=record.q_min, q_max=record.q_max,
        ramp_down=record.ramp_down, ramp_up=record.ramp_up,
        cost=record.cost,
    )


def _renewable(data: FleetFile, record: RenewableRecord, owner: str, bus: int) -> RenewableUnit:
    shape = _profile(data, record.profile, record.id)
    return RenewableUnit(
        id=record.id, owner=owner, bus=bus, kind=record.kind,
        capacity=record.capacity_mw,
        forecast=tuple(record.capacity_mw * min(1.0, v) for v in shape),
        error_std=record.error_std,
        group=record.group or record.id,
    )


def fleet_from_records(data: FleetFile) -> AssetFleet:
    """Build the fleet from a parsed fleet file"""
    microgrids = []
    for mg in data.microgrids:
        shape = _profile(data, mg.load_profile, mg.id)
        microgrids.append(Microgrid(
            id=mg.id,
            bus=mg.bus,
            generators=tuple(_generator(g, mg.id, g.bus or mg.bus) for g in mg.generators),
            renewables=tuple(_renewable(data, r, mg.id, r.bus or mg.bus) for r in mg.renewables),
            load_forecast=tuple(mg.load_peak_mw * v for v in shape),
            load_q_ratio=mg.load_q_ratio,
            load_error_std=mg.load_error_std,
            load_group=mg.load_group or f"{mg.id}_load",
        ))

    for record in data.dso.generators + data.dso.renewables:
        if record.bus is None:
            raise BadScenario("DSO assets need a bus", asset=record.id)

    return AssetFleet(
        name=data.name,
        microgrids=tuple(microgrids),
        dso_generators=tuple(_generator(g, "DSO", g.bus) for g in data.dso.generators),
        dso_storage=tuple(
            StorageUnit(id=s.id, bus=s.bus, p_min=s.p_min, p_max=s.p_max,
                        soc_min=s.soc_min, soc_max=s.soc_max, soc_init=s.soc_init,
                        efficiency=s.efficiency, cost=s.cost)
            for s in data.dso.storage
        ),
        dso_renewables=tuple(_renewable(data, r, "DSO", r.bus) for r in data.dso.renewables),
        adn_load_shape=tuple(_profile(data, data.adn_load.profile, "adn_load")),
        adn_error_std=data.adn_load.error_std,
        adn_group=data.adn_load.group or "adn_load",
        correlation={k: v.model_dump() for k, v in data.correlation_groups.items()},
        base_prices=data.prices.model_dump(),
        hv_import_cap=data.dso.hv_import_cap_mw,
    )


def load_fleet(path: Path) -> AssetFleet:
    """Load and validate a fleet file"""
    data = validate_model(FleetFile, read_json(Path(path)), "fleet")
    return fleet_from_records(data)
