#!/usr/bin/env python
"""
MGC Dispatch Lab - Command Line Interface
Train, evaluate, compare and replay microgrid-cluster dispatch runs
"""

import sys
from functools import wraps
from pathlib import Path

import click
import pandas as pd

from modules.core.config import get_settings, resolve_data_file
from modules.core.console import configure_logging, status
from modules.core.errors import MgcError
from modules.environment.mgc_env import MgcEnv
from modules.harness.catalog import resolve_scenario
from modules.harness.compare import compare_reports, render_table, write_comparison
from modules.harness.evaluation import evaluate_policies, policies_from_checkpoint
from modules.harness.runner import replay_manifest, run_experiment
from modules.network.power_flow import NodalInjection, solve_power_flow, total_loss, violation_report
from modules.network.topology import load_network


def handle_errors(command):
    """Print lab errors as one line and exit non-zero"""
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except MgcError as e:
            status(f"❌ {type(e).__name__}: {e}")
            sys.exit(1)
    return wrapper


@click.group()
@click.option('--log-level', default=None, help='DEBUG, INFO, WARNING (default: MGC_LOG_LEVEL)')
def cli(log_level):
    """Microgrid-cluster dispatch lab"""
    configure_logging(log_level)


# ==================== RUN ====================

@cli.command()
@click.option('--scenario', 'scenario_ref', required=True, help='Catalog id or config file')
@click.option('--algorithm', type=click.Choice(['rs-trpo', 'matrpo', 'vpg']), default=None)
@click.option('--seed', 'seeds', type=int, multiple=True, help='Repeatable; overrides the config seeds')
@click.option('--alpha', type=float, default=None, help='CVaR risk tolerance in (0, 1]')
@click.option('--iterations', type=int, default=None)
@click.option('--batch-size', type=int, default=None)
@click.option('--workers', type=int, default=None, help='Threads for episode collection')
@click.option('--regime', type=click.Choice(['A', 'B']), default=None, help='Penalty regime')
@click.option('--out-dir', type=click.Path(path_type=Path), default=None)
@handle_errors
def run(scenario_ref, algorithm, seeds, alpha, iterations, batch_size, workers, regime, out_dir):
    """Train and evaluate one scenario for every seed"""
    scenario, run_config = resolve_scenario(scenario_ref, regime=regime)
    algorithm = algorithm or run_config.algorithm
    out_dir = out_dir or get_settings().out_dir / f"{scenario.scenario_id}_{algorithm}"
    report = run_experiment(
        scenario, run_config, out_dir,
        seeds=list(seeds) or None,
        algorithm=algorithm, alpha=alpha, iterations=iterations,
        batch_size=batch_size, workers=workers,
    )
    status(render_table(pd.DataFrame([report.summary])))
    status(f"📁 Outputs in {report.out_dir}")


@cli.command()
@click.option('--scenario', 'scenario_ref', required=True, help='Catalog id or config file')
@click.option('--checkpoint', type=click.Path(exists=True, path_type=Path), required=True)
@click.option('--seed', type=int, default=0)
@click.option('--episodes', type=int, default=20)
@click.option('--regime', type=click.Choice(['A', 'B']), default=None)
@click.option('--out-dir', type=click.Path(path_type=Path), default=None)
@handle_errors
def evaluate(scenario_ref, checkpoint, seed, episodes, regime, out_dir):
    """Evaluate a checkpoint with deterministic policy means"""
    scenario, run_config = resolve_scenario(scenario_ref, regime=regime)
    env = MgcEnv.from_scenario(scenario)
    agents, _ = policies_from_checkpoint(checkpoint, env)
    result = evaluate_policies(env, agents, seed, episodes, gamma=run_config.gamma)
    status(render_table(pd.DataFrame([result.summary()])))
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.episodes.to_csv(out_dir / "evaluation.csv", index=False)
        result.transitions.to_csv(out_dir / "transitions.csv", index=False)
        status(f"📁 Evaluation written to {out_dir}")


@cli.command()
@click.argument('reports', nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option('--out', type=click.Path(path_type=Path), default=Path('summary.csv'))
@click.option('--xlsx', type=click.Path(path_type=Path), default=None, help='Also write an Excel workbook')
@handle_errors
def compare(reports, out, xlsx):
    """Compare finished runs scenario by scenario"""
    summary, pairwise = compare_reports(list(reports))
    status("📊 Summary")
    status(render_table(summary))
    status("📊 Pairwise differences (%)")
    status(render_table(pairwise, floatfmt=".2f"))
    for path in write_comparison(summary, pairwise, out, xlsx):
        status(f"✅ Wrote {path}")


@cli.command('power-flow-check')
@click.option('--network', default='networks/ieee33.json', help='Network file (data-relative or path)')
@click.option('--load-scale', type=float, default=1.0)
@click.option('--violations-csv', type=click.Path(path_type=Path), default=None)
@handle_errors
def power_flow_check(network, load_scale, violations_csv):
    """Solve the base-load power flow of a feeder and report voltages"""
    topology = load_network(resolve_data_file(network))
    solution = solve_power_flow(topology, NodalInjection.from_loads(topology, load_scale))
    report = violation_report(solution, topology)
    rows = [
        ['network', topology.name],
        ['converged', solution.converged],
        ['sweeps', solution.iterations],
        ['max residual (p.u.)', f"{solution.residual:.3e}"],
        ['loss (MW)', f"{total_loss(solution, topology):.6f}"],
        ['slack import (MW)', f"{solution.slack_p_mw:.6f}"],
        ['min voltage (p.u.)', f"{solution.min_voltage:.6f}"],
        ['max voltage (p.u.)', f"{solution.max_voltage:.6f}"],
        ['buses outside band', len(report.entries)],
        ['max deviation (p.u.)', f"{report.max_deviation:.6f}"],
    ]
    status(render_table(pd.DataFrame(rows, columns=['quantity', 'value'])))
    if violations_csv:
        status(f"✅ Wrote {report.export_csv(violations_csv)}")


@cli.command()
@click.argument('manifest', type=click.Path(exists=True, path_type=Path))
@click.option('--out-dir', type=click.Path(path_type=Path), required=True)
@handle_errors
def replay(manifest, out_dir):
    """Re-run a manifest into a fresh directory"""
    report = replay_manifest(manifest, out_dir)
    status(f"📁 Replayed into {report.out_dir}")


if __name__ == '__main__':
    cli()
