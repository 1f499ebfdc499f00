"""
Harness Module
Scenario catalog, experiment runs, evaluation and report comparison
"""

from .catalog import SCENARIOS, catalog_entry, resolve_scenario
from .evaluation import EvaluationResult, evaluate_policies, policies_from_checkpoint
from .runner import RunReport, run_experiment, replay_manifest
from .compare import compare_reports, pct_difference, write_comparison

__all__ = ['SCENARIOS', 'catalog_entry', 'resolve_scenario', 'EvaluationResult', 'evaluate_policies',
           'policies_from_checkpoint', 'RunReport', 'run_experiment', 'replay_manifest',
           'compare_reports', 'pct_difference', 'write_comparison']
