"""GRPO training on linear-softmax policies with gradient-aligned data selection."""

from .baselines import SelectorKind
from .grpo import BaselineMode, GRPOConfig, OptimizerKind
from .harness import ExperimentConfig, run_experiment
from .presets import imbalanced_config, low_utility_config, noisy_config
from .policy import Corruption, DomainTag, Problem
from .scenarios import ScenarioKind, ScenarioSpec
from .selector import Metric, SelectionConfig

__version__ = "0.1.0"

__all__ = [
    "BaselineMode",
    "Corruption",
    "DomainTag",
    "ExperimentConfig",
    "GRPOConfig",
    "Metric",
    "OptimizerKind",
    "Problem",
    "ScenarioKind",
    "ScenarioSpec",
    "SelectionConfig",
    "SelectorKind",
    "imbalanced_config",
    "low_utility_config",
    "noisy_config",
    "run_experiment",
]
