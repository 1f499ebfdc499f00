"""
Power Flow Module
DistFlow forward-backward sweep, losses, voltage penalty and violation reports
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd

from modules.core.console import get_logger
from modules.core.errors import NetworkError, NotConverged, PowerFlowDiverged
from modules.network.topology import NetworkTopology

logger = get_logger(__name__)

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITER = 50
RESIDUAL_TOLERANCE = 1e-8


@dataclass
class NodalInjection:
    """Net injection (generation minus load) per bus, MW / MVAr"""

    p_mw: Dict[int, float] = field(default_factory=dict)
    q_mvar: Dict[int, float] = field(default_factory=dict)

    @classmethod
    def from_loads(cls, topology: NetworkTopology, scale: float = 1.0) -> "NodalInjection":
        """Injections equal to minus the (scaled) base loads"""
        p, q = topology.scaled_loads(scale)
        return cls(p_mw={bus: -value for bus, value in p.items()},
                   q_mvar={bus: -value for bus, value in q.items()})

    def add(self, bus: int, p_mw: float, q_mvar: float = 0.0) -> None:
        self.p_mw[bus] = self.p_mw.get(bus, 0.0) + p_mw
        self.q_mvar[bus] = self.q_mvar.get(bus, 0.0) + q_mvar


@dataclass
class PowerFlowSolution:
    """
    Converged (or last-iterate) sweep result

    flows are keyed by (upstream bus, downstream bus) and measured at the
    sending end in MW / MVAr. Voltages are magnitudes in p.u.
    """

    voltages: Dict[int, float]
    p_flow_mw: Dict[Tuple[int, int], float]
    q_flow_mvar: Dict[Tuple[int, int], float]
    loss_mw: float
    slack_p_mw: float
    slack_q_mvar: float
    converged: bool
    iterations: int
    residual: float
    slack_bus: int
    base_mva: float

    @property
    def min_voltage(self) -> float:
        return min(self.voltages.values())

    @property
    def max_voltage(self) -> float:
        return max(self.voltages.values())

    def to_frame(self) -> pd.DataFrame:
        """Per-bus voltage table"""
        return pd.DataFrame(
            [{'bus_id': bus, 'voltage_pu': v} for bus, v in self.voltages.items()]
        )


# ==================== SOLVER ====================

def _per_unit(topology: NetworkTopology, injections: NodalInjection) -> Tuple[Dict[int, float], Dict[int, float]]:
    base = topology.base_mva
    p, q = {}, {}
    for bus in topology.buses:
        if bus != topology.slack_bus and bus not in injections.p_mw:
            raise NetworkError("Injection missing for bus", bus=bus)
        value_p = injections.p_mw.get(bus, 0.0)
        value_q = injections.q_mvar.get(bus, 0.0)
        if not (math.isfinite(value_p) and math.isfinite(value_q)):
            raise NetworkError("Non-finite injection", bus=bus)
        p[bus] = value_p / base
        q[bus] = value_q / base
    return p, q


def distflow_residual(topology: NetworkTopology,
                      p_inj: Dict[int, float],
                      q_inj: Dict[int, float],
                      v_sq: Dict[int, float],
                      p_flow: Dict[int, float],
                      q_flow: Dict[int, float]) -> float:
    """
    Largest mismatch of the three branch-flow equations, all in p.u.

    Flows are keyed by receiving bus i (the line j -> i feeding it).
    """
    sign = 1.0 if topology.shunt_mode == "consume" else -1.0
    worst = 0.0
    for i in topology.non_slack_buses:
        line = topology.feeding_line[i]
        j = line.from_bus
        ell = (p_flow[i] ** 2 + q_flow[i] ** 2) / v_sq[j]
        children = topology.downstream[i]
        p_expected = -p_inj[i] + sum(p_flow[k] for k in children) + line.r * ell
        q_expected = (-q_inj[i] + sum(q_flow[k] for k in children)
                      + sign * line.b * v_sq[i] + line.x * ell)
        v_expected = (v_sq[j] - 2.0 * (line.r * p_flow[i] + line.x * q_flow[i])
                      + (line.r ** 2 + line.x ** 2) * ell)
        worst = max(worst,
                    abs(p_flow[i] - p_expected),
                    abs(q_flow[i] - q_expected),
                    abs(v_sq[i] - v_expected))
    return worst


def solve_power_flow(topology: NetworkTopology,
                     injections: NodalInjection,
                     tol: float = DEFAULT_TOLERANCE,
                     max_iter: int = DEFAULT_MAX_ITER,
                     raise_on_divergence: bool = True) -> PowerFlowSolution:
    """
    Solve the radial DistFlow equations by forward-backward sweep

    Flat start at 1.0 p.u. The backward sweep accumulates sending-end flows
    from the leaves using the previous iterate's losses and shunt voltages;
    the forward sweep updates squared voltages from the slack bus.

    Args:
        topology: Radial network
        injections: Net injections for every non-slack bus (MW / MVAr)
        tol: Stop when voltage and flow changes fall below this (p.u.)
        max_iter: Sweep cap
        raise_on_divergence: Raise PowerFlowDiverged instead of returning
            an unconverged solution

    Returns:
        PowerFlowSolution
    """
    p_inj, q_inj = _per_unit(topology, injections)
    sign = 1.0 if topology.shunt_mode == "consume" else -1.0
    buses = topology.non_slack_buses
    slack = topology.slack_bus

    v_sq = {bus: 1.0 for bus in topology.buses}
    p_flow = {bus: 0.0 for bus in buses}
    q_flow = {bus: 0.0 for bus in buses}

    converged = False
    iterations = 0
    residual = math.inf

    for iterations in range(1, max_iter + 1):
        # Backward sweep (leaves to root)
        new_p: Dict[int, float] = {}
        new_q: Dict[int, float] = {}
        for i in reversed(buses):
            line = topology.feeding_line[i]
            ell = (p_flow[i] * p_flow[i] + q_flow[i] * q_flow[i]) / v_sq[line.from_bus]
            children = topology.downstream[i]
            new_p[i] = -p_inj[i] + sum(new_p[k] for k in children) + line.r * ell
            new_q[i] = (-q_inj[i] + sum(new_q[k] for k in children)
                        + sign * line.b * v_sq[i] + line.x * ell)

        # Forward sweep (root to leaves)
        new_v = {slack: 1.0}
        for i in buses:
            line = topology.feeding_line[i]
            j = line.from_bus
            ell = (new_p[i] * new_p[i] + new_q[i] * new_q[i]) / new_v[j]
            value = (new_v[j] - 2.0 * (line.r * new_p[i] + line.x * new_q[i])
                     + (line.r ** 2 + line.x ** 2) * ell)
            if value <= 0.0 or not math.isfinite(value):
                raise PowerFlowDiverged(
                    "Voltage collapse: squared voltage became non-positive",
                    bus=i, iteration=iterations, v_squared=value,
                )
            new_v[i] = value

        dv = max((abs(math.sqrt(new_v[b]) - math.sqrt(v_sq[b])) for b in buses), default=0.0)
        df = max((max(abs(new_p[b] - p_flow[b]), abs(new_q[b] - q_flow[b])) for b in buses),
                 default=0.0)
        v_sq, p_flow, q_flow = new_v, new_p, new_q

        if max(dv, df) <= tol:
            residual = distflow_residual(topology, p_inj, q_inj, v_sq, p_flow, q_flow)
            converged = residual <= RESIDUAL_TOLERANCE
            if converged:
                break

    if not converged:
        residual = distflow_residual(topology, p_inj, q_inj, v_sq, p_flow, q_flow)

    solution = _assemble(topology, p_inj, q_inj, v_sq, p_flow, q_flow,
                         converged, iterations, residual)
    if not converged:
        logger.warning(f"Power flow did not converge on {topology.name} "
                       f"after {iterations} sweeps (residual {residual:.3e})")
        if raise_on_divergence:
            raise PowerFlowDiverged("Power flow did not converge",
                                    solution=solution, iterations=iterations, residual=residual)
    return solution


def _assemble(topology, p_inj, q_inj, v_sq, p_flow, q_flow,
              converged, iterations, residual) -> PowerFlowSolution:
    base = topology.base_mva
    slack = topology.slack_bus
    loss_pu = 0.0
    p_mw, q_mvar = {}, {}
    for i in topology.non_slack_buses:
        line = topology.feeding_line[i]
        loss_pu += line.r * (p_flow[i] ** 2 + q_flow[i] ** 2) / v_sq[line.from_bus]
        p_mw[(line.from_bus, i)] = p_flow[i] * base
        q_mvar[(line.from_bus, i)] = q_flow[i] * base

    slack_children = topology.downstream[slack]
    slack_p = (sum(p_flow[k] for k in slack_children) - p_inj[slack]) * base
    slack_q = (sum(q_flow[k] for k in slack_children) - q_inj[slack]) * base

    return PowerFlowSolution(
        voltages={bus: math.sqrt(v_sq[bus]) for bus in topology.order},
        p_flow_mw=p_mw,
        q_flow_mvar=q_mvar,
        loss_mw=loss_pu * base,
        slack_p_mw=slack_p,
        slack_q_mvar=slack_q,
        converged=converged,
        iterations=iterations,
        residual=residual,
        slack_bus=slack,
        base_mva=base,
    )


# ==================== POST-PROCESSING ====================

def _require_converged(solution: PowerFlowSolution) -> None:
    if not solution.converged:
        raise NotConverged("Operation needs a converged power flow",
                           iterations=solution.iterations, residual=solution.residual)


def total_loss(solution: PowerFlowSolution, topology: NetworkTopology) -> float:
    """Sum of line losses r(P^2 + Q^2)/V_j^2, in MW"""
    _require_converged(solution)
    base = topology.base_mva
    loss = 0.0
    for (j, i), p in solution.p_flow_mw.items():
        line = topology.feeding_line[i]
        q = solution.q_flow_mvar[(j, i)]
        loss += line.r * (p ** 2 + q ** 2) / (base * solution.voltages[j] ** 2)
    return loss


def voltage_quality_penalty(solution: PowerFlowSolution, alpha_v: float = 1.0,
                            beta_v: float = 1.0) -> float:
    """sqrt(alpha_v * sum over buses of (1 - V)^2 + beta_v * (1 - V_pcc)^2)"""
    _require_converged(solution)
    if alpha_v < 0 or beta_v < 0:
        raise ValueError("Voltage weights must be non-negative")
    bus_term = sum((1.0 - v) ** 2 for bus, v in solution.voltages.items()
                   if bus != solution.slack_bus)
    pcc_term = (1.0 - solution.voltages[solution.slack_bus]) ** 2
    return math.sqrt(alpha_v * bus_term + beta_v * pcc_term)


@dataclass
class ViolationReport:
    """Buses outside the voltage band and the largest excursion beyond it"""

    entries: List[Tuple[int, float, float]]
    max_deviation: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.entries, columns=['bus_id', 'voltage_pu', 'deviation_pu'])

    def export_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def violation_report(solution: PowerFlowSolution, topology: NetworkTopology) -> ViolationReport:
    """List buses outside [v_min, v_max] with their deviation beyond the band"""
    _require_converged(solution)
    entries = []
    for bus in topology.order:
        v = solution.voltages[bus]
        if v < topology.v_min:
            entries.append((bus, v, topology.v_min - v))
        elif v > topology.v_max:
            entries.append((bus, v, v - topology.v_max))
    max_dev = max((dev for _, _, dev in entries), default=0.0)
    return ViolationReport(entries=entries, max_deviation=max_dev)
