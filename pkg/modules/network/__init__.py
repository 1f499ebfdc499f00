"""
Network Module
Radial feeder model and DistFlow power flow
"""

from .topology import Line, NetworkTopology, load_network
from .power_flow import (
    NodalInjection,
    PowerFlowSolution,
    solve_power_flow,
    total_loss,
    voltage_quality_penalty,
    violation_report,
)

__all__ = ['Line', 'NetworkTopology', 'load_network', 'NodalInjection', 'PowerFlowSolution',
           'solve_power_flow', 'total_loss', 'voltage_quality_penalty', 'violation_report']
