"""Ablations: score stability versus rollout count, and cosine versus inner product."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import SelectorKind
from .exceptions import InputError
from .harness import ExperimentConfig, run_experiment
from .metrics import RunMetrics
from .rng import Streams, stream
from .scenarios import ScenarioKind, generate_pool, generate_splits, initial_params
from .selector import Metric, alignment_scores, score_candidates, validation_gradient

__all__ = [
    "pearson",
    "KvCorrelation",
    "ablate_sample_size",
    "MetricAblation",
    "score_separation",
    "ablate_metric",
]


def pearson(a, b) -> float | None:
    """Pearson correlation, or ``None`` when either vector is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise InputError("pearson needs two equal-length vectors with >= 2 entries")
    da, db = a - a.mean(), b - b.mean()
    na, nb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


@dataclass
class KvCorrelation:
    k_v: int
    correlation: float | None

    @property
    def undefined(self) -> bool:
        return self.correlation is None


def _scores_once(cfg, params, pool, oracle, validation, k, seed):
    streams = Streams(seed)
    sel = dataclasses.replace(cfg.selection, k_v=k, k_r=k, pool_size=len(pool))
    G_v = validation_gradient(
        params, validation, k, streams,
        normalize_advantages=sel.normalize_advantages, epsilon_adv=sel.epsilon_adv,
    )
    grads, _ = score_candidates(params, pool, sel, oracle, streams)
    return alignment_scores(grads, G_v, sel.metric)


def ablate_sample_size(cfg: ExperimentConfig, kv_list, seed_pair, params=None) -> list[KvCorrelation]:
    """Correlation between two independent score estimates at each rollout count.

    The candidate pool, validation set and policy are fixed by ``cfg.seed``;
    only the rollout streams differ between the two estimates. Candidates and
    validation problems use the same number of rollouts ``k``.
    """
    kv_list = [int(k) for k in kv_list]
    if len(kv_list) < 2 or any(b <= a for a, b in zip(kv_list, kv_list[1:])):
        raise InputError("kv_list must be strictly ascending with >= 2 entries")
    seed_a, seed_b = seed_pair
    if seed_a == seed_b:
        raise InputError("the two estimates need different seeds")
    spec = cfg.resolved_scenario()
    pool, oracle = generate_pool(spec, stream(cfg.seed, "pool", 0))
    pool = [p.public() for p in pool]
    validation, _ = generate_splits(spec, cfg.validation_size, 1, cfg.seed)
    params = initial_params(spec) if params is None else params
    out = []
    for k in kv_list:
        a = _scores_once(cfg, params, pool, oracle, validation, k, seed_a)
        b = _scores_once(cfg, params, pool, oracle, validation, k, seed_b)
        out.append(KvCorrelation(k, pearson(a, b)))
    return out


def score_separation(scores, corrupted_mask) -> float | None:
    """Median clean score minus median corrupted score, in units of the score spread."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(corrupted_mask, dtype=bool)
    if mask.all() or not mask.any():
        return None
    spread = scores.std()
    if spread == 0.0:
        return 0.0
    return float((np.median(scores[~mask]) - np.median(scores[mask])) / spread)


@dataclass
class MetricAblation:
    runs: dict = field(default_factory=dict)
    clean_scores: dict = field(default_factory=dict)
    corrupted_scores: dict = field(default_factory=dict)
    separation: dict = field(default_factory=dict)

    def corrupted_ratio(self, metric) -> float | None:
        return self.runs[Metric(metric)].mean_corrupted_ratio()


def _split_scores(metrics: RunMetrics):
    clean, bad, seps = [], [], []
    for rnd, truth in zip(metrics.selection_rounds, metrics.round_ground_truth):
        if rnd.scores is None:
            continue
        mask = np.array([int(i) in truth for i in rnd.candidate_ids])
        clean.append(rnd.scores[~mask])
        bad.append(rnd.scores[mask])
        s = score_separation(rnd.scores, mask)
        if s is not None:
            seps.append(s)
    cat = lambda xs: np.concatenate(xs) if xs else np.array([])  # noqa: E731
    return cat(clean), cat(bad), (float(np.mean(seps)) if seps else None)


def ablate_metric(cfg: ExperimentConfig) -> MetricAblation:
    """Two GradAlign runs that differ only in the alignment metric."""
    if cfg.scenario.kind is not ScenarioKind.NOISY_REWARDS:
        raise InputError("the metric ablation runs on the NOISY_REWARDS scenario")
    out = MetricAblation()
    for metric in (Metric.COSINE, Metric.INNER_PRODUCT):
        run_cfg = dataclasses.replace(
            cfg,
            selector=SelectorKind.GRADALIGN,
            selection=dataclasses.replace(cfg.selection, metric=metric),
        )
        m = run_experiment(run_cfg)
        out.runs[metric] = m
        out.clean_scores[metric], out.corrupted_scores[metric], out.separation[metric] = _split_scores(m)
    return out
