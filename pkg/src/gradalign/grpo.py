"""GRPO advantages, objectives and optimizer.

Sign convention: every gradient here is an ascent direction on expected
reward, and the optimizer adds it to the parameters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, InputError, NumericError, OnPolicyError
from .policy import Problem, RolloutGroup, _log_softmax, logits, probabilities

__all__ = [
    "BaselineMode",
    "OptimizerKind",
    "GRPOConfig",
    "AdvantageSet",
    "ReferencePolicy",
    "OptimizerState",
    "compute_advantages",
    "advantage_estimates",
    "group_gradients",
    "surrogate_gradient",
    "clipped_loss_and_gradient",
    "kl_divergence",
    "optimizer_step",
    "reduce_gradients",
]


class BaselineMode(str, enum.Enum):
    GROUP_MEAN = "GROUP_MEAN"
    LEAVE_ONE_OUT = "LEAVE_ONE_OUT"
    NONE = "NONE"


class OptimizerKind(str, enum.Enum):
    SGD = "SGD"
    ADAMW = "ADAMW"


@dataclass
class GRPOConfig:
    epsilon_adv: float = 1e-8
    epsilon_clip: float = 0.2
    beta_kl: float = 0.0
    learning_rate: float = 1e-6
    optimizer: OptimizerKind = OptimizerKind.ADAMW
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    baseline_mode: BaselineMode = BaselineMode.GROUP_MEAN
    # only GROUP_MEAN and LEAVE_ONE_OUT advantages are ever divided by (std + eps)
    normalize_advantages: bool = True
    epochs: int = 1

    def __post_init__(self):
        self.optimizer = OptimizerKind(self.optimizer)
        self.baseline_mode = BaselineMode(self.baseline_mode)
        self.validate()

    def validate(self):
        if not self.epsilon_adv > 0:
            raise ConfigError("epsilon_adv must be > 0")
        if not 0 < self.epsilon_clip < 1:
            raise ConfigError("epsilon_clip must lie in (0, 1)")
        if self.beta_kl < 0:
            raise ConfigError("beta_kl must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass(frozen=True)
class AdvantageSet:
    raw_centered: np.ndarray
    normalized: np.ndarray
    group_mean: float
    group_std: float
    epsilon_adv: float
    leave_one_out: np.ndarray


def _check_rewards(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 2:
        raise InputError(f"group statistics need k >= 2 rewards, got {r.shape[-1]}")
    return r


def compute_advantages(rewards, cfg: GRPOConfig | None = None) -> AdvantageSet:
    """Group statistics with population (1/k) variance."""
    cfg = cfg or GRPOConfig()
    r = _check_rewards(rewards)
    if r.ndim != 1:
        raise InputError("compute_advantages takes a single group; use advantage_estimates")
    k = r.shape[0]
    mean = float(r.mean())
    centered = r - mean
    std = math.sqrt(float(np.mean(centered**2)))
    loo = r - (r.sum() - r) / (k - 1)
    return AdvantageSet(
        raw_centered=centered,
        normalized=centered / (std + cfg.epsilon_adv),
        group_mean=mean,
        group_std=std,
        epsilon_adv=cfg.epsilon_adv,
        leave_one_out=loo,
    )


def advantage_estimates(
    rewards,
    mode: BaselineMode = BaselineMode.GROUP_MEAN,
    normalize: bool = True,
    epsilon_adv: float = 1e-8,
) -> np.ndarray:
    """Advantages along the last axis, for one group or a stack of groups.

    ``LEAVE_ONE_OUT`` subtracts the mean of the other rewards in the group; that
    baseline does not depend on the sample it is applied to.
    """
    r = _check_rewards(rewards)
    mode = BaselineMode(mode)
    if mode is BaselineMode.NONE:
        return r.copy()
    k = r.shape[-1]
    if mode is BaselineMode.GROUP_MEAN:
        adv = r - r.mean(axis=-1, keepdims=True)
    else:
        adv = r - (r.sum(axis=-1, keepdims=True) - r) / (k - 1)
    if normalize:
        std = r.std(axis=-1, keepdims=True)
        adv = adv / (std + epsilon_adv)
    return adv


def group_gradients(
    params: np.ndarray, problem: Problem, answers, advantages
) -> np.ndarray:
    """Vectorized ``(1/k) sum_j A_j grad log pi(y_j)`` for one or many groups.

    ``answers`` and ``advantages`` share shape ``(k,)`` or ``(n, k)``; the result
    is ``(A*d,)`` or ``(n, A*d)`` respectively.
    """
    answers = np.asarray(answers, dtype=np.int64)
    adv = np.asarray(advantages, dtype=np.float64)
    if answers.shape != adv.shape:
        raise InputError("answers and advantages must have the same shape")
    single = answers.ndim == 1
    answers = np.atleast_2d(answers)
    adv = np.atleast_2d(adv)
    n, k = answers.shape
    probs = probabilities(params, problem)
    coeff = np.zeros((n, problem.answer_count))
    np.add.at(coeff, (np.repeat(np.arange(n), k), answers.ravel()), adv.ravel())
    coeff /= k
    coeff -= adv.mean(axis=1, keepdims=True) * probs
    grads = (coeff[:, :, None] * problem.features).reshape(n, -1)
    return grads[0] if single else grads


def surrogate_gradient(
    params: np.ndarray,
    problem: Problem,
    group: RolloutGroup,
    advantages,
    snapshot_tag: int | None = None,
) -> np.ndarray:
    """Gradient of the unclipped, KL-free on-policy surrogate for one group.

    If ``snapshot_tag`` is given it must equal the tag the group was sampled
    under; a mismatch means the rollouts are stale.
    """
    if snapshot_tag is not None and group.policy_snapshot_tag != snapshot_tag:
        raise OnPolicyError(
            f"group for problem {group.problem_id} was sampled under snapshot "
            f"{group.policy_snapshot_tag}, current policy is {snapshot_tag}"
        )
    if group.problem_id != problem.id:
        raise InputError(f"group belongs to problem {group.problem_id}, not {problem.id}")
    return group_gradients(params, problem, group.answers, advantages)


class ReferencePolicy:
    """Frozen snapshot of the policy taken at the start of a run."""

    def __init__(self, params: np.ndarray):
        self._params = np.array(params, dtype=np.float64, copy=True)
        self._params.setflags(write=False)

    @property
    def params(self) -> np.ndarray:
        return self._params


def _ref_params(ref) -> np.ndarray:
    return ref.params if isinstance(ref, ReferencePolicy) else np.asarray(ref)


def kl_divergence(params: np.ndarray, ref, problem: Problem) -> float:
    """Exact KL(pi_theta || pi_ref) between two categorical distributions."""
    logp = _log_softmax(logits(params, problem))
    logq = _log_softmax(logits(_ref_params(ref), problem))
    return max(float(np.sum(np.exp(logp) * (logp - logq))), 0.0)


def _kl_gradient(params, ref, problem) -> np.ndarray:
    logp = _log_softmax(logits(params, problem))
    logq = _log_softmax(logits(_ref_params(ref), problem))
    p = np.exp(logp)
    c = logp - logq
    coeff = p * (c - np.dot(p, c))
    return np.outer(coeff, problem.features).ravel()


def clipped_loss_and_gradient(
    params: np.ndarray,
    old_params: np.ndarray,
    ref,
    problem: Problem,
    group: RolloutGroup,
    advantages,
    cfg: GRPOConfig,
) -> tuple[float, np.ndarray]:
    """Clipped GRPO objective for one group and its exact gradient.

    objective = mean_j min(rho_j A_j, clip(rho_j, 1-eps, 1+eps) A_j)
                - beta_kl * KL(pi_theta || pi_ref)
    """
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.shape != group.answers.shape:
        raise InputError("advantages must match the group size")
    logp_new = _log_softmax(logits(params, problem))
    logp_old = _log_softmax(logits(old_params, problem))
    rho = np.exp(logp_new[group.answers] - logp_old[group.answers])
    eps = cfg.epsilon_clip
    unclipped = rho * adv
    clipped = np.clip(rho, 1 - eps, 1 + eps) * adv
    objective = float(np.mean(np.minimum(unclipped, clipped)))
    # the min picks the constant clipped branch only when it is strictly smaller
    active = unclipped <= clipped
    weights = np.where(active, rho * adv, 0.0)
    grad = group_gradients(params, problem, group.answers, weights)
    if cfg.beta_kl > 0:
        objective -= cfg.beta_kl * kl_divergence(params, ref, problem)
        grad = grad - cfg.beta_kl * _kl_gradient(params, ref, problem)
    return objective, grad


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "m": None if self.m is None else self.m.ravel().tolist(),
            "v": None if self.v is None else self.v.ravel().tolist(),
            "shape": None if self.m is None else list(self.m.shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        if d["m"] is None:
            return cls(step=d["step"])
        shape = tuple(d["shape"])
        return cls(
            step=d["step"],
            m=np.array(d["m"], dtype=np.float64).reshape(shape),
            v=np.array(d["v"], dtype=np.float64).reshape(shape),
        )


def optimizer_step(
    state: OptimizerState, params: np.ndarray, gradient: np.ndarray, cfg: GRPOConfig
) -> tuple[np.ndarray, OptimizerState]:
    """Return updated ``(params, state)``; inputs are not modified."""
    g = np.asarray(gradient, dtype=np.float64).reshape(params.shape)
    if not np.all(np.isfinite(g)):
        raise NumericError(
            "non-finite gradient",
            {"step": state.step, "n_bad": int(np.sum(~np.isfinite(g)))},
        )
    lr = cfg.learning_rate
    if cfg.optimizer is OptimizerKind.SGD:
        new = params + lr * g
        new_state = OptimizerState(step=state.step + 1)
    else:
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        m = np.zeros_like(params) if state.m is None else state.m
        v = np.zeros_like(params) if state.v is None else state.v
        t = state.step + 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new = params + lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps) - lr * cfg.weight_decay * params
        new_state = OptimizerState(step=t, m=m, v=v)
    if not np.all(np.isfinite(new)):
        raise NumericError("non-finite parameters after optimizer step", {"step": state.step})
    return new, new_state


def reduce_gradients(grads: dict) -> np.ndarray:
    """Mean of per-problem gradients, summed in ascending key order.

    Keys are problem ids (or ``(id, slot)`` tuples); the fixed order makes the
    floating-point result independent of how the gradients were produced.
    """
    if not grads:
        raise InputError("no gradients to reduce")
    keys = sorted(grads)
    stacked = np.stack([np.asarray(grads[k], dtype=np.float64) for k in keys])
    return _pairwise_sum(stacked) / len(keys)


def _pairwise_sum(rows: np.ndarray) -> np.ndarray:
    n = rows.shape[0]
    if n <= 8:
        out = rows[0].copy()
        for r in rows[1:]:
            out += r
        return out
    half = n // 2
    return _pairwise_sum(rows[:half]) + _pairwise_sum(rows[half:])
