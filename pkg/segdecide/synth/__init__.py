"""Synthetic benchmark: scene generator, posterior oracle, experiment and scenario."""

from .experiment import ExperimentConfig, ExperimentReport, run_experiment
from .scenario import ScenarioConfig, ScenarioResult, global_vs_local_scenario
from .scene import (
    ClassSpec,
    Scene,
    SynthConfig,
    dropout_samples,
    generate_scene,
    oracle_posteriors,
    write_scene,
)

__all__ = [
    "ClassSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "Scene",
    "ScenarioConfig",
    "ScenarioResult",
    "SynthConfig",
    "dropout_samples",
    "generate_scene",
    "global_vs_local_scenario",
    "oracle_posteriors",
    "run_experiment",
    "write_scene",
]
