"""
Experiment Runner
Trains each seed, evaluates it and writes CSVs, checkpoints and a replayable manifest
"""

import hashlib
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from modules.core.config import (
    RunConfig,
    ScenarioConfig,
    dump_config,
    read_json,
    validate_model,
    with_overrides,
    write_json,
)
from modules.core.console import get_logger, status
from modules.core.errors import ConfigValidationError, MgcError
from modules.environment.mgc_env import TRANSITION_COLUMNS, MgcEnv
from modules.harness.evaluation import EVALUATION_COLUMNS, evaluate_policies, summarize_evaluation
from modules.learning.baselines import trainer_for

logger = get_logger(__name__)

CODE_VERSION = "1.0.0"
MANIFEST_VERSION = 1
SOURCE_ROOT = Path(__file__).resolve().parents[1]

METRICS_FILE = "metrics.csv"
EVALUATION_FILE = "evaluation.csv"
TRANSITIONS_FILE = "transitions.csv"
TIMING_FILE = "timing.csv"
MANIFEST_FILE = "manifest.json"
RUN_TIMES_FILE = "run_times.json"


def source_digest() -> str:
    """SHA-256 over the package sources, in path order"""
    digest = hashlib.sha256()
    for path in sorted(SOURCE_ROOT.rglob("*.py")):
        digest.update(str(path.relative_to(SOURCE_ROOT)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


@dataclass
class RunReport:
    """Everything one invocation of run() produced"""

    out_dir: Path
    scenario: ScenarioConfig
    run: RunConfig
    seeds: List[int]
    metrics: pd.DataFrame
    evaluation: pd.DataFrame
    transitions: pd.DataFrame
    summary: Dict = field(default_factory=dict)
    status: str = "complete"

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_FILE


class ExperimentRunner:
    """
    One scenario, one algorithm, a list of seeds

    Output layout under out_dir:
        manifest.json, run_times.json, metrics.csv, evaluation.csv, transitions.csv,
        timing.csv, checkpoints/seed_<n>/*.npz
    """

    def __init__(self, scenario: ScenarioConfig, run: RunConfig, out_dir: Path,
                 data_path: Optional[Path] = None):
        self.scenario = scenario
        self.run = run
        self.out_dir = Path(out_dir)
        self.data_path = data_path
        self.metrics: List[pd.DataFrame] = []
        self.evaluations: List[pd.DataFrame] = []
        self.transitions: List[pd.DataFrame] = []
        self.timings: List[pd.DataFrame] = []
        self.manifest: Dict = {}
        self.run_times: Dict = {}

    # ==================== MANIFEST ====================

    def _start_manifest(self, seeds: Sequence[int]) -> None:
        self.manifest = {
            'manifest_version': MANIFEST_VERSION,
            'status': 'running',
            'code_version': CODE_VERSION,
            'source_digest': source_digest(),
            'seeds': list(seeds),
            'data_path': str(self.data_path) if self.data_path else None,
            **dump_config(self.scenario, self.run),
            'outputs': [],
            'summary': {},
            'error': None,
        }
        self._write_manifest()
        self.run_times = {'started': None, 'finished': None}
        self._stamp('started')

    def _write_manifest(self) -> None:
        write_json(self.out_dir / MANIFEST_FILE, self.manifest)

    def _stamp(self, key: str) -> None:
        """Record a wall-clock stamp in the sidecar; the manifest itself carries none"""
        self.run_times[key] = datetime.now().isoformat(timespec='seconds')
        write_json(self.out_dir / RUN_TIMES_FILE, self.run_times)

    # ==================== SEEDS ====================

    def _run_seed(self, seed: int) -> None:
        env = MgcEnv.from_scenario(self.scenario, self.data_path)
        trainer = trainer_for(self.run.algorithm)(
            env, self.run, seed, checkpoint_dir=self.out_dir / "checkpoints" / f"seed_{seed}")
        status(f"🚀 Training {trainer.algorithm} on {self.scenario.scenario_id} (seed {seed})")
        try:
            result = trainer.train()
        finally:
            frame = pd.DataFrame(trainer.metrics, columns=trainer.metric_columns())
            frame.insert(0, 'seed', seed)
            frame.insert(0, 'algorithm', self.run.algorithm)
            self.metrics.append(frame)
            timing = pd.DataFrame(trainer.timing, columns=['iter', 'wall_ms'])
            timing.insert(0, 'seed', seed)
            self.timings.append(timing)

        evaluation = evaluate_policies(env, result.agents, seed, self.run.eval_episodes,
                                       algorithm=self.run.algorithm, gamma=self.run.gamma)
        self.evaluations.append(evaluation.episodes)
        transitions = evaluation.transitions.copy()
        transitions.insert(0, 'seed', seed)
        self.transitions.append(transitions)
        status(f"📊 Seed {seed}: evaluation mean {evaluation.mean_return:.2f}, "
               f"CVaR(0.5) {evaluation.cvar_return:.2f}, renewable share {evaluation.renewable_share:.3f}")

    def _flush(self) -> List[str]:
        """Write whatever has been produced so far"""
        written = []

        def dump(frames: List[pd.DataFrame], name: str, columns: Optional[List[str]]) -> None:
            frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
            frame.to_csv(self.out_dir / name, index=False)
            written.append(name)

        dump(self.metrics, METRICS_FILE, ['algorithm', 'seed', 'iter'])
        dump(self.evaluations, EVALUATION_FILE, EVALUATION_COLUMNS)
        dump(self.transitions, TRANSITIONS_FILE, ['seed'] + TRANSITION_COLUMNS)
        dump(self.timings, TIMING_FILE, ['seed', 'iter', 'wall_ms'])
        return written

    def _summary(self) -> Dict:
        if not self.evaluations:
            return {}
        return summarize_evaluation(pd.concat(self.evaluations, ignore_index=True),
                                    pd.concat(self.transitions, ignore_index=True))

    # ==================== ENTRY ====================

    def execute(self, seeds: Optional[Sequence[int]] = None) -> RunReport:
        seeds = list(seeds) if seeds is not None else list(self.run.seeds)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._start_manifest(seeds)
        try:
            for seed in seeds:
                self._run_seed(seed)
        except BaseException as e:
            # interrupts and unexpected errors also leave partial outputs behind
            self.manifest['outputs'] = self._flush() + [RUN_TIMES_FILE]
            message = str(e) if isinstance(e, MgcError) else f"{type(e).__name__}: {e}"
            self.manifest.update(status='incomplete', error=message)
            self._write_manifest()
            self._stamp('finished')
            logger.error(f"Run incomplete: {message}")
            raise

        self.manifest['outputs'] = self._flush() + [RUN_TIMES_FILE]
        summary = self._summary()
        self.manifest.update(status='complete', summary=summary)
        self._write_manifest()
        self._stamp('finished')
        status(f"✅ Run complete: {self.out_dir}")

        return RunReport(
            out_dir=self.out_dir,
            scenario=self.scenario,
            run=self.run,
            seeds=seeds,
            metrics=pd.concat(self.metrics, ignore_index=True) if self.metrics else pd.DataFrame(),
            evaluation=pd.concat(self.evaluations, ignore_index=True),
            transitions=pd.concat(self.transitions, ignore_index=True),
            summary=summary,
        )


def run_experiment(scenario: ScenarioConfig, run: RunConfig, out_dir: Path,
                   seeds: Optional[Sequence[int]] = None, data_path: Optional[Path] = None,
                   **overrides) -> RunReport:
    """
    Train and evaluate every seed of one scenario

    Args:
        scenario: Scenario config
        run: Run config
        out_dir: Output directory (created)
        seeds: Seed list override
        data_path: Data directory override
        **overrides: RunConfig field overrides (None ignored)

    Returns:
        RunReport
    """
    run = with_overrides(run, **overrides)
    return ExperimentRunner(scenario, run, out_dir, data_path).execute(seeds)


def replay_manifest(manifest_path: Path, out_dir: Path) -> RunReport:
    """Re-run a manifest into a fresh directory"""
    manifest = read_json(Path(manifest_path))
    if manifest.get('manifest_version') != MANIFEST_VERSION:
        raise ConfigValidationError("Unsupported manifest version", field_path="manifest_version",
                                    reason=str(manifest.get('manifest_version')))
    if manifest.get('source_digest') != source_digest():
        logger.warning("Sources changed since this manifest was written; outputs may differ")
    scenario = validate_model(ScenarioConfig, manifest['scenario'], "scenario")
    run = validate_model(RunConfig, manifest['run'], "run")
    data_path = Path(manifest['data_path']) if manifest.get('data_path') else None
    return ExperimentRunner(scenario, run, out_dir, data_path).execute(manifest['seeds'])
