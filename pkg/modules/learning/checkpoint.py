"""
Checkpoint Module
Versioned .npz archives of parameters, normalizers, optimizer and RNG state
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

from modules.core.errors import ConfigValidationError
from modules.learning.function_approx import MlpSpec, ParamVector
from modules.learning.optim import AdamOptimizer, RunningNormalizer

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: Dict[str, ParamVector]
    normalizers: Dict[str, RunningNormalizer]
    rng_states: Dict[str, dict] = field(default_factory=dict)
    optimizers: Dict[str, AdamOptimizer] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """
    Write a checkpoint

    Arrays are stored losslessly; specs, normalizer counters, optimizer
    hyperparameters, bit-generator states and any extra metadata go into a
    JSON string entry.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    meta = {'version': CHECKPOINT_VERSION, 'specs': {}, 'normalizers': {}, 'optimizers': {},
            'rng_states': checkpoint.rng_states, 'extra': checkpoint.extra}

    for name, params in checkpoint.params.items():
        arrays[f"{name}__params"] = params.values
        meta['specs'][name] = params.spec.to_dict()
    for name, norm in checkpoint.normalizers.items():
        arrays[f"{name}__norm_mean"] = norm.mean
        arrays[f"{name}__norm_m2"] = norm.m2
        meta['normalizers'][name] = norm.state_dict()
    for name, optimizer in checkpoint.optimizers.items():
        for key, value in optimizer.state_arrays().items():
            arrays[f"{name}__{key}"] = value
        meta['optimizers'][name] = optimizer.state_dict()

    arrays['__meta__'] = np.array(json.dumps(meta, default=str))
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint"""
    with np.load(Path(path), allow_pickle=False) as archive:
        meta = json.loads(str(archive['__meta__']))
        if meta.get('version') != CHECKPOINT_VERSION:
            raise ConfigValidationError("Unsupported checkpoint version",
                                        field_path="version", reason=str(meta.get('version')))
        params = {
            name: ParamVector(MlpSpec.from_dict(spec), archive[f"{name}__params"].copy())
            for name, spec in meta['specs'].items()
        }
        normalizers = {}
        for name, state in meta['normalizers'].items():
            normalizers[name] = RunningNormalizer(
                dim=state['dim'],
                count=state['count'],
                mean=archive[f"{name}__norm_mean"].copy(),
                m2=archive[f"{name}__norm_m2"].copy(),
                frozen=state['frozen'],
            )
        optimizers = {}
        for name, state in meta.get('optimizers', {}).items():
            arrays = {key: archive[f"{name}__{key}"] for key in ('adam_m', 'adam_v')
                      if f"{name}__{key}" in archive.files}
            optimizers[name] = AdamOptimizer.from_state(state, arrays)
    return Checkpoint(params=params, normalizers=normalizers,
                      rng_states=meta.get('rng_states', {}), optimizers=optimizers,
                      extra=meta.get('extra', {}))
