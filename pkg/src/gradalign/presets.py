"""Desk-scale configurations for the three data regimes.

Large-scale values (n_train 128, 128 rollouts, M 5120) remain reachable by
overriding fields; these presets keep q, U and the k_v/k_r asymmetry.
"""

from __future__ import annotations

from .baselines import SelectorKind
from .harness import ExperimentConfig
from .scenarios import ScenarioKind, ScenarioSpec
from .selector import SelectionConfig

__all__ = ["noisy_config", "imbalanced_config", "low_utility_config", "PRESETS"]


def noisy_config(seed: int = 0, selector=SelectorKind.GRADALIGN, **overrides) -> ExperimentConfig:
    """Half the pool has coin-flip rewards; per-problem feature scale varies log-normally."""
    cfg = ExperimentConfig(
        scenario=ScenarioSpec(
            kind=ScenarioKind.NOISY_REWARDS, pool_size=128, corrupt_fraction=0.5, scale_spread=1.0
        ),
        selection=SelectionConfig(pool_size=128, selection_ratio=4, k_v=64, k_r=16),
        selector=selector,
        total_steps=50,
        validation_size=64,
        seed=seed,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def imbalanced_config(seed: int = 0, selector=SelectorKind.GRADALIGN, **overrides) -> ExperimentConfig:
    """Ten percent TARGET problems; keeps the top 1/20 of each pool."""
    cfg = ExperimentConfig(
        scenario=ScenarioSpec(kind=ScenarioKind.IMBALANCED, pool_size=128, target_fraction=0.10),
        selection=SelectionConfig(pool_size=128, selection_ratio=20, k_v=64, k_r=16),
        selector=selector,
        total_steps=50,
        validation_size=64,
        seed=seed,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def low_utility_config(seed: int = 0, selector=SelectorKind.GRADALIGN, **overrides) -> ExperimentConfig:
    """Half the pool is already solved by the initial policy."""
    cfg = ExperimentConfig(
        scenario=ScenarioSpec(kind=ScenarioKind.LOW_UTILITY, pool_size=128, easy_fraction=0.5),
        selection=SelectionConfig(pool_size=128, selection_ratio=4, k_v=64, k_r=16),
        selector=selector,
        total_steps=50,
        validation_size=16,
        seed=seed,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


PRESETS = {
    "noisy": noisy_config,
    "imbalanced": imbalanced_config,
    "low-utility": low_utility_config,
}
