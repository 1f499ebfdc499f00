"""
Report Comparison
Per-scenario summary of finished runs and pairwise percentage differences
"""

from dataclasses import dataclass
from itertools import permutations
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from tabulate import tabulate

from modules.core.config import read_json
from modules.core.errors import HarnessError, MismatchedScenarios
from modules.harness.evaluation import summarize_evaluation
from modules.harness.runner import EVALUATION_FILE, MANIFEST_FILE, TRANSITIONS_FILE

SUMMARY_METRICS = ['mean_return', 'cvar_05_return', 'voltage_max_dev', 'renewable_share']
SUMMARY_COLUMNS = ['scenario_id', 'report', 'algorithm', 'alpha', 'seeds', 'episodes'] + SUMMARY_METRICS


@dataclass
class ReportSummary:
    label: str
    path: Path
    scenario_id: str
    algorithm: str
    alpha: float
    seeds: List[int]
    metrics: Dict

    def row(self) -> Dict:
        return {
            'scenario_id': self.scenario_id,
            'report': self.label,
            'algorithm': self.algorithm,
            'alpha': self.alpha,
            'seeds': " ".join(str(s) for s in self.seeds),
            **self.metrics,
        }


def load_report(path: Path, label: Optional[str] = None) -> ReportSummary:
    """
    Read a finished run directory (or its manifest)

    Metrics are recomputed from evaluation.csv and transitions.csv rather
    than taken from the manifest summary.
    """
    path = Path(path)
    run_dir = path.parent if path.is_file() else path
    manifest = read_json(run_dir / MANIFEST_FILE)
    if manifest.get('status') != 'complete':
        raise HarnessError("Report is not complete", report=str(run_dir), status=manifest.get('status'))
    episodes = pd.read_csv(run_dir / EVALUATION_FILE)
    transitions = pd.read_csv(run_dir / TRANSITIONS_FILE)
    return ReportSummary(
        label=label or run_dir.name,
        path=run_dir,
        scenario_id=manifest['scenario']['scenario_id'],
        algorithm=manifest['run']['algorithm'],
        alpha=float(manifest['run']['alpha']),
        seeds=list(manifest['seeds']),
        metrics=summarize_evaluation(episodes, transitions),
    )


def pct_difference(a: float, b: float) -> float:
    """(a - b) / |b| * 100; zero when both are equal, NaN when only b is zero"""
    if a == b:
        return 0.0
    if b == 0:
        return float('nan')
    return (a - b) / abs(b) * 100.0


def _unique_labels(reports: List[ReportSummary]) -> None:
    seen: Dict[str, int] = {}
    for report in reports:
        count = seen.get(report.label, 0)
        seen[report.label] = count + 1
        if count:
            report.label = f"{report.label}#{count + 1}"


def compare_reports(paths: Sequence[Path]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Compare two or more run reports

    Args:
        paths: Run directories or manifest files

    Returns:
        (summary table, pairwise percentage differences)
    """
    if len(paths) < 2:
        raise HarnessError("Comparison needs at least two reports", given=len(paths))
    reports = [load_report(p) for p in paths]
    _unique_labels(reports)

    by_scenario: Dict[str, List[ReportSummary]] = {}
    for report in reports:
        by_scenario.setdefault(report.scenario_id, []).append(report)
    lonely = sorted(sid for sid, group in by_scenario.items() if len(group) < 2)
    if lonely:
        raise MismatchedScenarios("Every scenario needs at least two reports",
                                  scenarios=lonely, found=sorted(by_scenario))

    summary = pd.DataFrame([r.row() for r in reports], columns=SUMMARY_COLUMNS)
    summary = summary.sort_values(['scenario_id', 'report'], kind='stable').reset_index(drop=True)

    pairs = []
    for scenario_id in sorted(by_scenario):
        for a, b in permutations(by_scenario[scenario_id], 2):
            row = {'scenario_id': scenario_id, 'report_a': a.label, 'report_b': b.label}
            for metric in SUMMARY_METRICS:
                row[f'{metric}_pct'] = pct_difference(a.metrics[metric], b.metrics[metric])
            pairs.append(row)
    pairwise = pd.DataFrame(pairs, columns=['scenario_id', 'report_a', 'report_b']
                            + [f'{m}_pct' for m in SUMMARY_METRICS])
    return summary, pairwise


def algorithm_averages(summary: pd.DataFrame) -> pd.DataFrame:
    """Mean of each summary metric per algorithm across scenarios"""
    return summary.groupby('algorithm', sort=True)[SUMMARY_METRICS].mean().reset_index()


def write_comparison(summary: pd.DataFrame, pairwise: pd.DataFrame, out_path: Path,
                     xlsx_path: Optional[Path] = None) -> List[Path]:
    """
    Write summary.csv and pairwise.csv next to each other, optionally an Excel workbook

    Returns:
        Paths written
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out_path, index=False)
    pairwise_path = out_path.with_name(f"{out_path.stem}_pairwise.csv")
    pairwise.to_csv(pairwise_path, index=False)
    written = [out_path, pairwise_path]

    if xlsx_path:
        with pd.ExcelWriter(xlsx_path, engine='openpyxl') as writer:
            summary.to_excel(writer, sheet_name='Summary', index=False)
            pairwise.to_excel(writer, sheet_name='Pairwise', index=False)
            algorithm_averages(summary).to_excel(writer, sheet_name='Algorithm Averages', index=False)
        written.append(Path(xlsx_path))
    return written


def render_table(frame: pd.DataFrame, floatfmt: str = ".4f") -> str:
    return tabulate(frame, headers='keys', tablefmt='github', showindex=False, floatfmt=floatfmt)
