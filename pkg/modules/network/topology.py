"""
Network Topology Module
Radial distribution feeder: buses, lines, slack bus and adjacency maps
"""

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import Field, model_validator

from modules.core.config import StrictModel, read_json, validate_model
from modules.core.errors import NonRadialNetwork


@dataclass(frozen=True)
class Line:
    """Branch from upstream bus j to downstream bus i, impedances in p.u."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass
class NetworkTopology:
    """
    Radial feeder rooted at the slack (PCC) bus

    Base loads are stored in MW / MVAr; all impedances are per unit on base_mva.
    The derived maps (upstream, downstream, feeding line, BFS order) are built
    in __post_init__ and the tree invariants are checked there.
    """

    buses: List[int]
    lines: List[Line]
    slack_bus: int
    load_p_mw: Dict[int, float] = field(default_factory=dict)
    load_q_mvar: Dict[int, float] = field(default_factory=dict)
    bus_assets: Dict[int, List[str]] = field(default_factory=dict)
    v_min: float = 0.95
    v_max: float = 1.05
    base_mva: float = 1.0
    shunt_mode: Literal["consume", "inject"] = "consume"
    name: str = "network"

    # Derived
    upstream: Dict[int, int] = field(init=False, default_factory=dict)
    downstream: Dict[int, List[int]] = field(init=False, default_factory=dict)
    feeding_line: Dict[int, Line] = field(init=False, default_factory=dict)
    order: List[int] = field(init=False, default_factory=list)

    def __post_init__(self):
        for bus in self.buses:
            self.load_p_mw.setdefault(bus, 0.0)
            self.load_q_mvar.setdefault(bus, 0.0)
            self.bus_assets.setdefault(bus, [])
        self._build_tree()

    def _build_tree(self) -> None:
        bus_set = set(self.buses)
        if len(bus_set) != len(self.buses):
            raise NonRadialNetwork("Duplicate bus ids", network=self.name)
        if self.slack_bus not in bus_set:
            raise NonRadialNetwork("Slack bus is not a network bus", slack_bus=self.slack_bus)
        if len(self.lines) != len(self.buses) - 1:
            raise NonRadialNetwork(
                "Radial network needs |lines| = |buses| - 1",
                buses=len(self.buses),
                lines=len(self.lines),
            )
        if not 0 < self.v_min < self.v_max:
            raise NonRadialNetwork("Voltage limits must satisfy 0 < v_min < v_max",
                                   v_min=self.v_min, v_max=self.v_max)
        if self.base_mva <= 0:
            raise NonRadialNetwork("Base power must be positive", base_mva=self.base_mva)

        neighbors: Dict[int, List[Tuple[int, Line]]] = {bus: [] for bus in self.buses}
        for line in self.lines:
            if line.from_bus not in bus_set or line.to_bus not in bus_set:
                raise NonRadialNetwork("Line references an unknown bus",
                                       from_bus=line.from_bus, to_bus=line.to_bus)
            if line.r < 0 or line.x < 0:
                raise NonRadialNetwork("Line impedance must be non-negative",
                                       from_bus=line.from_bus, to_bus=line.to_bus)
            neighbors[line.from_bus].append((line.to_bus, line))
            neighbors[line.to_bus].append((line.from_bus, line))

        # Orient every line away from the slack bus
        self.upstream = {}
        self.downstream = {bus: [] for bus in self.buses}
        self.feeding_line = {}
        self.order = [self.slack_bus]
        seen = {self.slack_bus}
        queue = deque([self.slack_bus])
        while queue:
            j = queue.popleft()
            for i, line in neighbors[j]:
                if i in seen:
                    continue
                seen.add(i)
                self.upstream[i] = j
                self.downstream[j].append(i)
                oriented = line if line.from_bus == j else Line(j, i, line.r, line.x, line.b)
                self.feeding_line[i] = oriented
                self.order.append(i)
                queue.append(i)

        if len(seen) != len(self.buses):
            missing = sorted(bus_set - seen)
            raise NonRadialNetwork("Network is not connected", unreachable=missing[:5])

    # ==================== ACCESSORS ====================

    @property
    def non_slack_buses(self) -> List[int]:
        """Non-slack buses in root-to-leaf order"""
        return self.order[1:]

    def oriented_lines(self) -> List[Line]:
        """Lines oriented upstream to downstream, in BFS order"""
        return [self.feeding_line[bus] for bus in self.non_slack_buses]

    def bus_of_asset(self, asset_id: str) -> Optional[int]:
        for bus, assets in self.bus_assets.items():
            if asset_id in assets:
                return bus
        return None

    def scaled_loads(self, scale: float) -> Tuple[Dict[int, float], Dict[int, float]]:
        """Base loads multiplied by a scenario load scale (MW, MVAr)"""
        p = {bus: value * scale for bus, value in self.load_p_mw.items()}
        q = {bus: value * scale for bus, value in self.load_q_mvar.items()}
        return p, q

    def with_lines(self, lines: List[Line]) -> "NetworkTopology":
        """Copy with a different line set (re-validated)"""
        return NetworkTopology(
            buses=list(self.buses),
            lines=list(lines),
            slack_bus=self.slack_bus,
            load_p_mw=dict(self.load_p_mw),
            load_q_mvar=dict(self.load_q_mvar),
            bus_assets={bus: list(a) for bus, a in self.bus_assets.items()},
            v_min=self.v_min,
            v_max=self.v_max,
            base_mva=self.base_mva,
            shunt_mode=self.shunt_mode,
            name=self.name,
        )


# ==================== FILE FORMAT ====================

class BusRecord(StrictModel):
    id: int
    p_mw: float = Field(0.0, ge=0)
    q_mvar: float = 0.0
    assets: List[str] = Field(default_factory=list)


class LineRecord(StrictModel):
    from_bus: int = Field(alias="from")
    to_bus: int = Field(alias="to")
    r_pu: Optional[float] = Field(None, ge=0)
    x_pu: Optional[float] = Field(None, ge=0)
    r_ohm: Optional[float] = Field(None, ge=0)
    x_ohm: Optional[float] = Field(None, ge=0)
    b_pu: float = 0.0

    @model_validator(mode="after")
    def _one_unit_system(self):
        has_pu = self.r_pu is not None and self.x_pu is not None
        has_ohm = self.r_ohm is not None and self.x_ohm is not None
        if has_pu == has_ohm:
            raise ValueError("give either r_pu/x_pu or r_ohm/x_ohm")
        return self


class NetworkFile(StrictModel):
    name: str = "network"
    base_mva: float = Field(1.0, gt=0)
    base_kv: Optional[float] = Field(None, gt=0)
    slack_bus: int
    v_limits: Tuple[float, float] = (0.95, 1.05)
    shunt_mode: Literal["consume", "inject"] = "consume"
    buses: List[BusRecord]
    lines: List[LineRecord]
    notes: str = ""

    @model_validator(mode="after")
    def _ohm_needs_base_kv(self):
        if any(line.r_ohm is not None for line in self.lines) and self.base_kv is None:
            raise ValueError("base_kv is required when impedances are given in ohms")
        return self


def topology_from_records(data: NetworkFile) -> NetworkTopology:
    """Build a validated topology from a parsed network file"""
    z_base = (data.base_kv ** 2 / data.base_mva) if data.base_kv else None
    lines = []
    for record in data.lines:
        if record.r_pu is not None:
            r, x = record.r_pu, record.x_pu
        else:
            r, x = record.r_ohm / z_base, record.x_ohm / z_base
        lines.append(Line(record.from_bus, record.to_bus, r, x, record.b_pu))

    return NetworkTopology(
        buses=[bus.id for bus in data.buses],
        lines=lines,
        slack_bus=data.slack_bus,
        load_p_mw={bus.id: bus.p_mw for bus in data.buses},
        load_q_mvar={bus.id: bus.q_mvar for bus in data.buses},
        bus_assets={bus.id: list(bus.assets) for bus in data.buses},
        v_min=data.v_limits[0],
        v_max=data.v_limits[1],
        base_mva=data.base_mva,
        shunt_mode=data.shunt_mode,
        name=data.name,
    )


def load_network(path: Path) -> NetworkTopology:
    """
    Load a network file

    Args:
        path: JSON file with buses[], lines[], slack_bus, v_limits, base_mva

    Returns:
        Validated NetworkTopology
    """
    data = validate_model(NetworkFile, read_json(Path(path)), "network")
    return topology_from_records(data)
