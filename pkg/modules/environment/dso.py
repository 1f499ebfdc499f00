"""
DSO Module
Merit-order settlement of the distribution system operator
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from modules.core.console import get_logger
from modules.core.errors import DispatchInfeasible
from modules.environment.assets import AssetFleet, PriceBook
from modules.network.power_flow import (
    NodalInjection,
    PowerFlowSolution,
    solve_power_flow,
    violation_report,
    voltage_quality_penalty,
)
from modules.network.topology import NetworkTopology

logger = get_logger(__name__)

BALANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Resource:
    """One merit-order entry: output band [lower, upper] at a marginal cost"""

    name: str
    kind: str  # rdg | cdg | ess | hv
    cost: float
    lower: float
    upper: float
    bus: Optional[int] = None


@dataclass
class MeritOrderResult:
    dispatch: List[float]
    marginal: Optional[int]
    unserved: float
    surplus: float

    def cost(self, resources: Sequence[Resource]) -> float:
        return sum(r.cost * p for r, p in zip(resources, self.dispatch))


def merit_order(resources: Sequence[Resource], demand: float) -> MeritOrderResult:
    """
    Fill demand in ascending cost order, starting every resource at its lower bound

    Ties are broken by position. The marginal resource is the last one that
    received energy; with nothing to fill it is the cheapest resource with room.

    Args:
        resources: Available resources for the hour
        demand: Energy to balance (MW over one hour)

    Returns:
        MeritOrderResult with per-resource output, marginal index and any
        unserved demand or forced surplus
    """
    dispatch = [r.lower for r in resources]
    remaining = demand - sum(dispatch)
    ranked = sorted(range(len(resources)), key=lambda i: (resources[i].cost, i))

    surplus = 0.0
    if remaining < 0:
        surplus = -remaining
        remaining = 0.0

    marginal = None
    for i in ranked:
        if remaining <= 0:
            break
        room = resources[i].upper - dispatch[i]
        if room <= 0:
            continue
        take = min(room, remaining)
        dispatch[i] += take
        remaining -= take
        marginal = i

    if marginal is None:
        with_room = [i for i in ranked if resources[i].upper > resources[i].lower]
        marginal = with_room[0] if with_room else (ranked[0] if ranked else None)

    return MeritOrderResult(dispatch=dispatch, marginal=marginal,
                            unserved=max(0.0, remaining), surplus=surplus)


# ==================== DSO SETTLEMENT ====================

@dataclass
class DsoDispatch:
    """Outcome of one hour of DSO settlement"""

    cdg_mw: Dict[str, float]
    ess_mw: Dict[str, float]
    rdg_mw: Dict[str, float]
    hv_import_mw: float
    marginal_resource: Optional[str]
    marginal_cost: float
    balancing_price: float
    solution: PowerFlowSolution
    loss_mw: float
    loss_mismatch_mw: float
    balance_residual_mw: float
    unserved_mw: float
    mg_delivered_mw: Dict[str, float]
    mg_curtailed_mw: Dict[str, float]
    adn_shed_mw: float
    next_soc: Dict[str, float]
    voltage_penalty: float
    voltage_max_dev: float
    objective: float
    cost_breakdown: Dict[str, float] = field(default_factory=dict)

    @property
    def delivered_total_mw(self) -> float:
        return sum(self.mg_delivered_mw.values())

    @property
    def curtailed_total_mw(self) -> float:
        return sum(self.mg_curtailed_mw.values())


def dso_resources(fleet: AssetFleet, prices: PriceBook, dso_prev: Dict[str, float],
                  soc: Dict[str, float], rdg_available: Dict[str, float]) -> List[Resource]:
    """Resources the DSO can call on this hour"""
    resources = []
    for unit in fleet.dso_renewables:
        resources.append(Resource(unit.id, "rdg", 0.0, 0.0, rdg_available.get(unit.id, 0.0), unit.bus))
    for gen in fleet.dso_generators:
        low, high = gen.feasible_band(dso_prev.get(gen.id, gen.midpoint))
        resources.append(Resource(gen.id, "cdg", gen.cost, low, high, gen.bus))
    for ess in fleet.dso_storage:
        resources.append(Resource(ess.id, "ess", ess.cost, 0.0,
                                  ess.discharge_limit(soc.get(ess.id, ess.soc_init)), ess.bus))
    hv_cap = fleet.hv_import_cap if fleet.hv_import_cap is not None else math.inf
    resources.append(Resource("hv_import", "hv", prices.hv_price, 0.0, hv_cap, None))
    return resources


@dataclass
class _Pass:
    result: MeritOrderResult
    charge_mw: Dict[str, float]
    export_mw: float
    delivered: Dict[str, float]
    curtailed: Dict[str, float]
    adn_shed_mw: float
    injections: NodalInjection


def _settle(topology: NetworkTopology, fleet: AssetFleet, resources: List[Resource],
            demand: float, adn_load_p: Dict[int, float], adn_load_q: Dict[int, float],
            mg_net_p: Dict[str, float], mg_net_q: Dict[str, float],
            soc: Dict[str, float], allow_curtailment: bool, hour: int) -> _Pass:
    result = merit_order(resources, demand)

    # Surplus charges storage first, the rest is exported upstream
    charge = {ess.id: 0.0 for ess in fleet.dso_storage}
    surplus = result.surplus
    for ess in fleet.dso_storage:
        if surplus <= 0:
            break
        amount = min(surplus, ess.charge_limit(soc.get(ess.id, ess.soc_init)))
        charge[ess.id] = amount
        surplus -= amount
    export = surplus

    deficits = {mg.id: max(0.0, -mg_net_p[mg.id]) for mg in fleet.microgrids}
    delivered = dict(deficits)
    curtailed = {mg_id: 0.0 for mg_id in deficits}
    adn_shed = 0.0
    adn_factor = 1.0

    if result.unserved > BALANCE_TOLERANCE:
        if not allow_curtailment:
            raise DispatchInfeasible("Demand exceeds all DSO resources", dispatch=result,
                                     hour=hour, unserved_mw=result.unserved)
        logger.warning(f"Hour {hour}: curtailing {result.unserved:.4f} MW of unserved demand")
        total_deficit = sum(deficits.values())
        from_mg = min(result.unserved, total_deficit)
        if total_deficit > 0:
            for mg_id, deficit in deficits.items():
                curtailed[mg_id] = deficit * from_mg / total_deficit
                delivered[mg_id] = deficit - curtailed[mg_id]
        adn_shed = result.unserved - from_mg
        adn_total = sum(adn_load_p.values())
        if adn_shed > 0 and adn_total > 0:
            adn_factor = max(0.0, 1.0 - adn_shed / adn_total)

    injections = NodalInjection(
        p_mw={bus: -adn_load_p.get(bus, 0.0) * adn_factor for bus in topology.buses},
        q_mvar={bus: -adn_load_q.get(bus, 0.0) * adn_factor for bus in topology.buses},
    )
    for mg in fleet.microgrids:
        net_p = mg_net_p[mg.id]
        net_q = mg_net_q[mg.id]
        if net_p < 0 and deficits[mg.id] > 0:
            # curtailed MG load is disconnected in proportion
            share = delivered[mg.id] / deficits[mg.id]
            net_q = net_q * share if net_q < 0 else net_q
            net_p = -delivered[mg.id]
        injections.add(mg.bus, net_p, net_q)

    for resource, power in zip(resources, result.dispatch):
        if resource.bus is None:
            continue
        q = 0.0
        if resource.kind == "cdg":
            gen = next(g for g in fleet.dso_generators if g.id == resource.name)
            q = gen.reactive_output(power)
        injections.add(resource.bus, power, q)
    for ess in fleet.dso_storage:
        if charge[ess.id] > 0:
            injections.add(ess.bus, -charge[ess.id], 0.0)

    return _Pass(result=result, charge_mw=charge, export_mw=export, delivered=delivered,
                 curtailed=curtailed, adn_shed_mw=adn_shed, injections=injections)


def dso_merit_order_dispatch(topology: NetworkTopology,
                             fleet: AssetFleet,
                             prices: PriceBook,
                             hour: int,
                             adn_load_p: Dict[int, float],
                             adn_load_q: Dict[int, float],
                             mg_net_p: Dict[str, float],
                             mg_net_q: Dict[str, float],
                             dso_prev: Dict[str, float],
                             soc: Dict[str, float],
                             rdg_available: Dict[str, float],
                             allow_curtailment: bool = True) -> DsoDispatch:
    """
    Settle one hour: merit order, power flow, one loss-correction pass

    Residual demand is the ADN load plus microgrid deficits minus microgrid
    surplus. Resources are DSO renewables (free, capped by realized output),
    DSO generators within their ramp and capacity bands, storage discharge
    within power and SOC bands, and HV import at the regime's balancing price.
    Losses from the first power flow are added to demand and the merit order
    is run once more before the final power flow.

    Args:
        topology: Feeder
        fleet: Scaled asset fleet
        prices: Price book for the active penalty regime
        hour: Hour index (diagnostics only)
        adn_load_p / adn_load_q: Realized ADN loads per bus
        mg_net_p / mg_net_q: Microgrid supply minus local load
        dso_prev: Previous-hour output of DSO generators
        soc: Storage state of charge (MWh)
        rdg_available: Realized output of DSO renewables
        allow_curtailment: Shed load instead of raising DispatchInfeasible

    Returns:
        DsoDispatch
    """
    resources = dso_resources(fleet, prices, dso_prev, soc, rdg_available)
    base_demand = sum(adn_load_p.values()) - sum(mg_net_p.values())

    first = _settle(topology, fleet, resources, base_demand, adn_load_p, adn_load_q,
                    mg_net_p, mg_net_q, soc, allow_curtailment, hour)
    first_solution = solve_power_flow(topology, first.injections)
    corrected_demand = base_demand + first_solution.loss_mw

    final = _settle(topology, fleet, resources, corrected_demand, adn_load_p, adn_load_q,
                    mg_net_p, mg_net_q, soc, allow_curtailment, hour)
    solution = solve_power_flow(topology, final.injections)

    result = final.result
    by_kind = {kind: {} for kind in ("rdg", "cdg", "ess", "hv")}
    for resource, power in zip(resources, result.dispatch):
        by_kind[resource.kind][resource.name] = power

    ess_mw = {ess.id: by_kind["ess"].get(ess.id, 0.0) - final.charge_mw[ess.id]
              for ess in fleet.dso_storage}
    hv_import = by_kind["hv"]["hv_import"] - final.export_mw

    marginal = resources[result.marginal] if result.marginal is not None else None
    marginal_cost = marginal.cost if marginal else 0.0
    balancing_price = marginal_cost * (1.0 + prices.balancing_uplift)

    # Balance of the scheduled quantities against the corrected demand
    supplied = sum(by_kind["rdg"].values()) + sum(by_kind["cdg"].values()) + sum(ess_mw.values()) + hv_import
    served_demand = corrected_demand - result.unserved
    balance_residual = supplied - served_demand

    next_soc = {ess.id: ess.next_soc(soc.get(ess.id, ess.soc_init), ess_mw[ess.id])
                for ess in fleet.dso_storage}

    penalty = voltage_quality_penalty(solution, prices.alpha_v, prices.beta_v)
    report = violation_report(solution, topology)

    generator_cost = sum(gen.cost * by_kind["cdg"][gen.id] for gen in fleet.dso_generators)
    storage_cost = sum(ess.cost * max(0.0, ess_mw[ess.id]) for ess in fleet.dso_storage)
    breakdown = {
        "generation": generator_cost,
        "storage": storage_cost,
        "hv_import": prices.hv_price * max(0.0, hv_import),
        "loss": prices.loss_price * solution.loss_mw,
        "voltage": prices.voltage_penalty * penalty,
    }
    objective = sum(breakdown.values())
    logger.debug(f"Hour {hour}: DSO objective {objective:.2f} RMB, marginal "
                 f"{marginal.name if marginal else '-'} at {marginal_cost:.1f} RMB/MWh")

    return DsoDispatch(
        cdg_mw=by_kind["cdg"],
        ess_mw=ess_mw,
        rdg_mw=by_kind["rdg"],
        hv_import_mw=hv_import,
        marginal_resource=marginal.name if marginal else None,
        marginal_cost=marginal_cost,
        balancing_price=balancing_price,
        solution=solution,
        loss_mw=solution.loss_mw,
        loss_mismatch_mw=solution.loss_mw - first_solution.loss_mw,
        balance_residual_mw=balance_residual,
        unserved_mw=result.unserved,
        mg_delivered_mw=final.delivered,
        mg_curtailed_mw=final.curtailed,
        adn_shed_mw=final.adn_shed_mw,
        next_soc=next_soc,
        voltage_penalty=penalty,
        voltage_max_dev=report.max_deviation,
        objective=objective,
        cost_breakdown=breakdown,
    )
