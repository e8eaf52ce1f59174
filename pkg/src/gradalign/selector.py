"""Gradient-aligned data selection.

Each round estimates a validation gradient from fresh on-policy rollouts,
estimates one gradient per candidate from ``k_r`` rollouts, and keeps the
``max(1, M // q)`` candidates best aligned with the validation direction.
"""

from __future__ import annotations

import contextvars
import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, InputError
from .grpo import BaselineMode, advantage_estimates, group_gradients
from .policy import Problem, rollout_purpose, sample_answers
from .rng import Streams

logger = logging.getLogger(__name__)

__all__ = [
    "Metric",
    "SelectionConfig",
    "SelectionRound",
    "NEAR_ZERO",
    "selection_size",
    "validation_gradient",
    "candidate_gradient",
    "score_candidates",
    "alignment_score",
    "alignment_scores",
    "select_top_fraction",
    "run_selection_round",
]

NEAR_ZERO = 1e-12


class Metric(str, enum.Enum):
    COSINE = "COSINE"
    INNER_PRODUCT = "INNER_PRODUCT"


@dataclass
class SelectionConfig:
    pool_size: int = 128
    selection_ratio: int = 4
    selection_interval: int = 10
    k_v: int = 16
    k_r: int = 4
    metric: Metric = Metric.COSINE
    normalize_advantages: bool = True
    epsilon_adv: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        self.metric = Metric(self.metric)
        self.validate()

    def validate(self):
        if int(self.selection_ratio) != self.selection_ratio or self.selection_ratio <= 1:
            raise ConfigError(f"selection_ratio must be an integer > 1, got {self.selection_ratio}")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if self.selection_interval < 1:
            raise ConfigError("selection_interval must be >= 1")
        if self.k_r < 2 or self.k_v < 2:
            raise ConfigError("k_r and k_v must be >= 2")
        if self.k_r > self.k_v:
            raise ConfigError(f"k_r={self.k_r} exceeds k_v={self.k_v}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class SelectionRound:
    round_index: int
    candidate_ids: np.ndarray
    selected_ids: np.ndarray
    scores: np.ndarray | None = None
    validation_gradient_norm: float | None = None
    per_candidate_pass_rate: np.ndarray | None = None
    metric: str = ""
    selector: str = "gradalign"
    degenerate: bool = False

    def score_summary(self) -> tuple[float, float, float] | None:
        if self.scores is None or len(self.scores) == 0:
            return None
        s = np.asarray(self.scores)
        return float(s.min()), float(np.median(s)), float(s.max())


def selection_size(pool_size: int, q: int) -> int:
    if int(q) != q or q <= 1:
        raise InputError(f"selection ratio must be an integer > 1, got {q}")
    return max(1, pool_size // int(q))


def _problem_rng(rng, purpose, round_index, pid):
    if isinstance(rng, Streams):
        return rng.get(purpose, round_index, pid)
    return rng


def _clean_rewards(problem: Problem, answers) -> np.ndarray:
    return (np.asarray(answers) == problem.reference_answer).astype(np.float64)


def _group_estimate(params, problem, answers, rewards, normalize, epsilon_adv):
    adv = advantage_estimates(rewards, BaselineMode.GROUP_MEAN, normalize, epsilon_adv)
    return group_gradients(params, problem, answers, adv)


def validation_gradient(
    params: np.ndarray,
    validation_problems: Sequence[Problem],
    k_v: int,
    rng,
    *,
    round_index: int = 0,
    snapshot_tag: int = 0,
    normalize_advantages: bool = True,
    epsilon_adv: float = 1e-8,
) -> np.ndarray:
    """Unweighted mean over validation problems of their GRPO surrogate gradients.

    Rollouts are always drawn fresh under ``params``. ``rng`` is either a
    :class:`Streams` (one derived stream per problem) or a single generator
    consumed in problem order.
    """
    if len(validation_problems) == 0:
        raise InputError("validation set is empty")
    if k_v < 2:
        raise InputError("k_v must be >= 2")
    grads = {}
    with rollout_purpose("validation"):
        for p in validation_problems:
            if p.corruption is None or not p.corruption.is_clean:
                raise InputError(f"validation problem {p.id} is not clean")
            g = sample_answers(params, p, k_v, _problem_rng(rng, "val-rollout", round_index, p.id), snapshot_tag)
            rewards = _clean_rewards(p, g.answers)
            grads[p.id] = _group_estimate(params, p, g.answers, rewards, normalize_advantages, epsilon_adv)
    stacked = np.stack([grads[k] for k in sorted(grads)])
    mean = stacked.mean(axis=0)
    if np.linalg.norm(mean) < NEAR_ZERO:
        logger.warning("validation gradient is zero at round %d", round_index)
    return mean


def candidate_gradient(
    params: np.ndarray,
    problem: Problem,
    k_r: int,
    reward_oracle,
    rng,
    *,
    round_index: int = 0,
    snapshot_tag: int = 0,
    normalize_advantages: bool = True,
    epsilon_adv: float = 1e-8,
) -> tuple[np.ndarray, float]:
    """One candidate's gradient estimate and its empirical pass rate."""
    if k_r < 2:
        raise InputError("k_r must be >= 2")
    prng = _problem_rng(rng, "cand-rollout", round_index, problem.id)
    with rollout_purpose("candidate"):
        g = sample_answers(params, problem, k_r, prng, snapshot_tag)
    rewards = reward_oracle.judge_many(problem, g.answers, prng)
    grad = _group_estimate(params, problem, g.answers, rewards, normalize_advantages, epsilon_adv)
    return grad, float(rewards.mean())


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(contextvars.copy_context().run, fn, x) for x in items]
        return [f.result() for f in futures]


def score_candidates(
    params, pool, cfg: SelectionConfig, reward_oracle, rng, *, round_index=0, snapshot_tag=0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``(M, A*d)`` and pass rates ``(M,)`` for a candidate pool."""
    if not isinstance(rng, Streams) and cfg.workers > 1:
        raise ConfigError("parallel scoring needs per-problem streams")

    def one(p):
        return candidate_gradient(
            params,
            p,
            cfg.k_r,
            reward_oracle,
            rng,
            round_index=round_index,
            snapshot_tag=snapshot_tag,
            normalize_advantages=cfg.normalize_advantages,
            epsilon_adv=cfg.epsilon_adv,
        )

    results = _map(one, pool, cfg.workers)
    grads = np.stack([g for g, _ in results])
    rates = np.array([r for _, r in results])
    return grads, rates


def alignment_score(g, G_v, metric: Metric = Metric.COSINE) -> float:
    g = np.asarray(g, dtype=np.float64)
    G_v = np.asarray(G_v, dtype=np.float64)
    if g.shape != G_v.shape:
        raise ConfigError(f"gradient lengths differ: {g.shape} vs {G_v.shape}")
    return float(alignment_scores(g[None, :], G_v, metric)[0])


def alignment_scores(grads: np.ndarray, G_v: np.ndarray, metric: Metric = Metric.COSINE) -> np.ndarray:
    """Row-wise scores; cosine is 0 whenever either norm is below ``NEAR_ZERO``."""
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    G_v = np.asarray(G_v, dtype=np.float64)
    if grads.shape[1] != G_v.shape[0]:
        raise ConfigError(f"gradient lengths differ: {grads.shape[1]} vs {G_v.shape[0]}")
    dots = grads @ G_v
    if Metric(metric) is Metric.INNER_PRODUCT:
        return dots
    norms = np.linalg.norm(grads, axis=1)
    gnorm = np.linalg.norm(G_v)
    out = np.zeros(len(grads))
    ok = (norms >= NEAR_ZERO) & (gnorm >= NEAR_ZERO)
    out[ok] = dots[ok] / (norms[ok] * gnorm)
    return out


def select_top_fraction(scores, ids, q: int) -> np.ndarray:
    """Highest-scoring ``max(1, M // q)`` ids; ties go to the smaller id."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    if scores.shape != ids.shape:
        raise InputError("scores and ids must have equal length")
    if ids.size == 0:
        raise InputError("empty candidate pool")
    n = selection_size(ids.size, q)
    order = np.lexsort((ids, -scores))
    return ids[order[:n]]


def run_selection_round(
    params: np.ndarray,
    pool: Sequence[Problem],
    validation_problems: Sequence[Problem],
    cfg: SelectionConfig,
    reward_oracle,
    rng,
    *,
    round_index: int = 0,
    snapshot_tag: int = 0,
) -> SelectionRound:
    """One full scoring-and-selection episode.

    A zero validation gradient (every validation group saturated) makes the
    scores meaningless; the round then falls back to a uniform random subset
    and is flagged ``degenerate``.
    """
    if len(pool) != cfg.pool_size:
        raise InputError(f"pool has {len(pool)} problems, config expects {cfg.pool_size}")
    ids = np.array([p.id for p in pool], dtype=np.int64)
    G_v = validation_gradient(
        params,
        validation_problems,
        cfg.k_v,
        rng,
        round_index=round_index,
        snapshot_tag=snapshot_tag,
        normalize_advantages=cfg.normalize_advantages,
        epsilon_adv=cfg.epsilon_adv,
    )
    grads, rates = score_candidates(
        params, pool, cfg, reward_oracle, rng, round_index=round_index, snapshot_tag=snapshot_tag
    )
    gnorm = float(np.linalg.norm(G_v))
    scores = alignment_scores(grads, G_v, cfg.metric)
    degenerate = gnorm < NEAR_ZERO
    if degenerate:
        from .baselines import random_select

        fallback = rng.get("random-select", round_index) if isinstance(rng, Streams) else rng
        selected = random_select(ids, cfg.selection_ratio, fallback)
    else:
        selected = select_top_fraction(scores, ids, cfg.selection_ratio)
    return SelectionRound(
        round_index=round_index,
        candidate_ids=ids,
        selected_ids=selected,
        scores=scores,
        validation_gradient_norm=gnorm,
        per_candidate_pass_rate=rates,
        metric=cfg.metric.value,
        selector="gradalign",
        degenerate=degenerate,
    )
