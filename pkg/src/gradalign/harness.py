"""Training loop: periodic data selection followed by GRPO steps on the selection.

Every ``selection_interval`` steps a candidate pool is drawn, the configured
selector picks a subset, and the following steps train on batches cycled from
that subset. Validation and test accuracy come from the closed-form oracle.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import SelectorKind, acc_greedy_select, align_select, direct_val_mode, random_select
from .exceptions import ConfigError, NumericError
from .grpo import (
    GRPOConfig,
    OptimizerKind,
    OptimizerState,
    ReferencePolicy,
    advantage_estimates,
    clipped_loss_and_gradient,
    reduce_gradients,
)
from .metrics import (
    EvalRecord,
    RoundRecord,
    RunMetrics,
    corrupted_selection_ratio,
    domain_selection_ratio,
)
from .policy import (
    AccuracyOracle,
    Corruption,
    CorruptionMode,
    DomainTag,
    Problem,
    rollout_purpose,
    rollout_tally,
    sample_answers,
)
from .rng import Streams
from .scenarios import (
    RewardOracle,
    ScenarioSpec,
    generate_pool,
    generate_splits,
    initial_params,
)
from .selector import (
    Metric,
    SelectionConfig,
    SelectionRound,
    run_selection_round,
    score_candidates,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RunState",
    "run_experiment",
    "expected_budget",
    "save_checkpoint",
    "load_checkpoint",
    "desk_grpo_config",
]


def desk_grpo_config() -> GRPOConfig:
    """Optimizer settings for desk-scale runs; a 1e-6 step suits billion-parameter models, not these."""
    return GRPOConfig(learning_rate=0.02, optimizer=OptimizerKind.ADAMW)


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    selector: SelectorKind = SelectorKind.GRADALIGN
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    grpo: GRPOConfig = field(default_factory=desk_grpo_config)
    n_train: int = 16
    rollouts_per_training_problem: int = 16
    total_steps: int = 50
    eval_every: int = 10
    seed: int = 0
    validation_size: int = 16
    test_size: int = 256
    fixed_pool: bool = False

    def __post_init__(self):
        self.selector = SelectorKind.parse(self.selector)

    def validate(self):
        self.scenario.validate(self.selection.selection_ratio)
        self.selection.validate()
        self.grpo.validate()
        if self.scenario.pool_size != self.selection.pool_size:
            raise ConfigError(
                f"scenario.pool_size={self.scenario.pool_size} differs from "
                f"selection.pool_size={self.selection.pool_size}"
            )
        for name in (
            "n_train",
            "rollouts_per_training_problem",
            "total_steps",
            "eval_every",
            "validation_size",
            "test_size",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.total_steps < self.selection.selection_interval:
            raise ConfigError("total_steps must be >= selection_interval")
        if self.rollouts_per_training_problem < 2:
            raise ConfigError("rollouts_per_training_problem must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def resolved_scenario(self) -> ScenarioSpec:
        if self.scenario.geometry_seed is None:
            return replace(self.scenario, geometry_seed=self.seed)
        return self.scenario


def _round_steps(cfg: ExperimentConfig) -> list[int]:
    u = cfg.selection.selection_interval
    return [min(u, cfg.total_steps - s) for s in range(0, cfg.total_steps, u)]


def expected_budget(cfg: ExperimentConfig) -> list[dict]:
    """Closed-form rollout counts per round, keyed by purpose.

    GradAlign spends ``|P_v| k_v`` on validation and ``M k_r`` on candidates;
    AccGreedy and Align spend only the candidate term; Random and direct-val
    spend nothing on selection. Training always costs ``steps * n_train * R``.
    """
    sel = cfg.selection
    per_step = cfg.n_train * cfg.rollouts_per_training_problem
    kind = cfg.selector
    out = []
    for steps in _round_steps(cfg):
        b = Counter({"train": steps * per_step})
        if kind is SelectorKind.GRADALIGN:
            b["validation"] = cfg.validation_size * sel.k_v
        if kind in (SelectorKind.GRADALIGN, SelectorKind.ACC_GREEDY, SelectorKind.ALIGN):
            b["candidate"] = sel.pool_size * sel.k_r
        out.append(dict(b))
    return out


# -- state ---------------------------------------------------------------------


def _problem_to_dict(p: Problem) -> dict:
    c = p.corruption
    return {
        "id": p.id,
        "features": [float(v) for v in p.features],
        "answer_count": p.answer_count,
        "reference_answer": p.reference_answer,
        "domain_tag": p.domain_tag.value,
        "corruption": None if c is None else [c.mode.value, c.p],
    }


def _problem_from_dict(d: dict) -> Problem:
    c = d["corruption"]
    return Problem(
        id=d["id"],
        features=np.array(d["features"], dtype=np.float64),
        answer_count=d["answer_count"],
        reference_answer=d["reference_answer"],
        domain_tag=DomainTag(d["domain_tag"]),
        corruption=None if c is None else Corruption(CorruptionMode(c[0]), c[1]),
    )


@dataclass
class RunState:
    """Everything needed to resume a run; RNG streams are re-derived from keys."""

    step: int
    params: np.ndarray
    opt_state: OptimizerState
    round_index: int = -1
    selected: list = field(default_factory=list)
    order: list = field(default_factory=list)
    cursor: int = 0
    cycle: int = 0
    rollouts: dict = field(default_factory=dict)
    round_start_rollouts: dict = field(default_factory=dict)
    metrics: RunMetrics = field(default_factory=RunMetrics)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "params": self.params.tolist(),
            "opt_state": self.opt_state.to_dict(),
            "round_index": self.round_index,
            "selected": [_problem_to_dict(p) for p in self.selected],
            "order": list(self.order),
            "cursor": self.cursor,
            "cycle": self.cycle,
            "rollouts": dict(self.rollouts),
            "round_start_rollouts": dict(self.round_start_rollouts),
            "records": [dataclasses.asdict(r) for r in self.metrics.records],
        }

    @classmethod
    def from_dict(cls, d: dict, metrics: RunMetrics) -> "RunState":
        for r in d["records"]:
            r = dict(r)
            kind = r.pop("kind")
            if kind == "EVAL":
                metrics.records.append(EvalRecord(**r))
            else:
                r["selected_ids"] = tuple(r["selected_ids"])
                metrics.records.append(RoundRecord(**r))
        return cls(
            step=d["step"],
            params=np.array(d["params"], dtype=np.float64),
            opt_state=OptimizerState.from_dict(d["opt_state"]),
            round_index=d["round_index"],
            selected=[_problem_from_dict(p) for p in d["selected"]],
            order=list(d["order"]),
            cursor=d["cursor"],
            cycle=d["cycle"],
            rollouts=dict(d["rollouts"]),
            round_start_rollouts=dict(d["round_start_rollouts"]),
            metrics=metrics,
        )


def save_checkpoint(path, cfg: ExperimentConfig, state: RunState):
    from .config import dump_config

    payload = {"config": dump_config(cfg), "state": state.to_dict()}
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[ExperimentConfig, dict]:
    from .config import loads_config

    payload = json.loads(Path(path).read_text())
    return loads_config(payload["config"]), payload["state"]


# -- loop ------------------------------------------------------------------------


class _Run:
    def __init__(self, cfg: ExperimentConfig):
        cfg.validate()
        self.cfg = cfg
        self.spec = cfg.resolved_scenario()
        self.streams = Streams(cfg.seed)
        self.validation, self.test = generate_splits(
            self.spec, cfg.validation_size, cfg.test_size, cfg.seed
        )
        self.val_oracle = AccuracyOracle(self.validation)
        self.test_oracle = AccuracyOracle(self.test)
        self.split_judge = RewardOracle({p.id: p.corruption for p in self.validation})
        self.ref = ReferencePolicy(initial_params(self.spec))
        self.metric_label = {
            SelectorKind.GRADALIGN: cfg.selection.metric.value,
            SelectorKind.ALIGN: Metric.COSINE.value,
        }.get(cfg.selector, "")
        self.round_oracle = self.split_judge if cfg.selector is SelectorKind.DIRECT_VAL else None

    def new_state(self) -> RunState:
        metrics = RunMetrics(selector=self.cfg.selector.value, metric=self.metric_label, seed=self.cfg.seed)
        return RunState(
            step=0,
            params=np.array(self.ref.params, copy=True),
            opt_state=OptimizerState(),
            metrics=metrics,
        )

    # selection ---------------------------------------------------------------

    def draw_pool(self, round_index: int):
        r = 0 if self.cfg.fixed_pool else round_index
        return generate_pool(
            self.spec, self.streams.get("pool", r), id_start=r * self.cfg.selection.pool_size
        )

    def select(self, state: RunState, round_index: int):
        cfg = self.cfg
        pool, oracle = self.draw_pool(round_index)
        public = [p.public() for p in pool]
        ids = np.array([p.id for p in pool], dtype=np.int64)
        sel = cfg.selection
        kind = cfg.selector
        tag = state.step
        if kind is SelectorKind.GRADALIGN:
            rnd = run_selection_round(
                state.params, public, self.validation, sel, oracle, self.streams,
                round_index=round_index, snapshot_tag=tag,
            )
        elif kind is SelectorKind.RANDOM:
            chosen = random_select(ids, sel.selection_ratio, self.streams.get("random-select", round_index))
            rnd = SelectionRound(round_index, ids, chosen, selector=kind.value)
        else:
            grads, rates = score_candidates(
                state.params, public, sel, oracle, self.streams, round_index=round_index, snapshot_tag=tag
            )
            if kind is SelectorKind.ACC_GREEDY:
                chosen = acc_greedy_select(rates, ids, sel.selection_ratio)
                rnd = SelectionRound(
                    round_index, ids, chosen, scores=-np.abs(rates - 0.5),
                    per_candidate_pass_rate=rates, selector=kind.value,
                )
            else:
                chosen, scores, degenerate = align_select(
                    grads, ids, sel.selection_ratio, self.streams.get("random-select", round_index)
                )
                rnd = SelectionRound(
                    round_index, ids, chosen, scores=scores, per_candidate_pass_rate=rates,
                    metric=Metric.COSINE.value, selector=kind.value, degenerate=degenerate,
                )
        by_id = {p.id: p for p in pool}
        truth = oracle.corrupted_ids
        summary = rnd.score_summary()
        state.metrics.records.append(
            RoundRecord(
                step=state.step,
                round_index=round_index,
                corrupted_ratio=corrupted_selection_ratio(rnd.selected_ids, truth),
                target_ratio=domain_selection_ratio(rnd.selected_ids, DomainTag.TARGET, by_id),
                degenerate=rnd.degenerate,
                selected_ids=tuple(int(i) for i in rnd.selected_ids),
                score_min=None if summary is None else summary[0],
                score_median=None if summary is None else summary[1],
                score_max=None if summary is None else summary[2],
            )
        )
        state.metrics.selection_rounds.append(rnd)
        state.metrics.round_ground_truth.append(truth)
        state.round_index = round_index
        state.selected = [by_id[int(i)] for i in rnd.selected_ids]
        self.round_oracle = oracle.restricted([p.id for p in state.selected])
        state.order = []
        state.cursor = 0
        state.cycle = -1

    def next_batch(self, state: RunState) -> list[Problem]:
        if self.cfg.selector is SelectorKind.DIRECT_VAL:
            return direct_val_mode(self.validation, self.cfg.n_train, self.streams.get("direct-val", state.step))
        batch = []
        n_sel = len(state.selected)
        while len(batch) < self.cfg.n_train:
            if state.cursor >= len(state.order):
                state.cycle += 1
                rng = self.streams.get("batch", state.round_index, state.cycle)
                state.order = rng.permutation(n_sel).tolist()
                state.cursor = 0
            batch.append(state.selected[state.order[state.cursor]])
            state.cursor += 1
        return batch

    # training ----------------------------------------------------------------

    def train_step(self, state: RunState):
        cfg = self.cfg
        batch = self.next_batch(state)
        old = state.params
        groups = []
        with rollout_purpose("train"):
            for slot, p in enumerate(batch):
                rng = self.streams.get("train-rollout", state.step, slot)
                g = sample_answers(old, p, cfg.rollouts_per_training_problem, rng, snapshot_tag=state.step)
                g.rewards = self.round_oracle.judge_many(p, g.answers, rng)
                adv = advantage_estimates(
                    g.rewards, cfg.grpo.baseline_mode, cfg.grpo.normalize_advantages, cfg.grpo.epsilon_adv
                )
                groups.append((slot, p, g, adv))
        params, opt = old, state.opt_state
        for _ in range(cfg.grpo.epochs):
            grads = {}
            for slot, p, g, adv in groups:
                _, grads[(p.id, slot)] = clipped_loss_and_gradient(params, old, self.ref, p, g, adv, cfg.grpo)
            grad = reduce_gradients(grads)
            if not np.all(np.isfinite(grad)):
                raise NumericError("non-finite training gradient", {"step": state.step})
            params, opt = optimizer_step_checked(opt, params, grad, cfg.grpo, state.step)
        state.params, state.opt_state = params, opt
        state.step += 1

    def evaluate(self, state: RunState):
        state.metrics.records.append(
            EvalRecord(
                step=state.step,
                val_acc=self.val_oracle.accuracy(state.params),
                test_acc=self.test_oracle.accuracy(state.params),
            )
        )

    def check_budget(self, state: RunState, tally: Counter):
        counts = {k: v for k, v in tally.items() if v}
        spent = Counter(counts)
        spent.subtract(Counter(state.round_start_rollouts))
        spent = {k: v for k, v in spent.items() if v}
        expected = expected_budget(self.cfg)[state.round_index] if state.round_index >= 0 else {}
        if self.cfg.selector is SelectorKind.DIRECT_VAL:
            expected = {"train": expected.get("train", 0)}
        expected = {k: v for k, v in expected.items() if v}
        if spent != expected:
            raise AssertionError(
                f"rollout budget mismatch in round {state.round_index}: spent {spent}, expected {expected}"
            )
        state.round_start_rollouts = dict(counts)


def optimizer_step_checked(opt, params, grad, grpo_cfg, step):
    from .grpo import optimizer_step

    try:
        return optimizer_step(opt, params, grad, grpo_cfg)
    except NumericError as exc:
        exc.diagnostic.setdefault("step", step)
        raise


def run_experiment(
    cfg: ExperimentConfig,
    *,
    checkpoint_path=None,
    checkpoint_at: int | None = None,
    stop_at: int | None = None,
    resume_state: dict | None = None,
) -> RunMetrics:
    """Run the full select-then-train loop and return its metrics.

    ``checkpoint_at`` writes a checkpoint to ``checkpoint_path`` once ``step``
    reaches that value; ``stop_at`` returns early at that step (used with
    checkpoints to emulate an interrupted run). ``resume_state`` is the state
    dict returned by :func:`load_checkpoint`.
    """
    run = _Run(cfg)
    u = cfg.selection.selection_interval
    if resume_state is not None:
        metrics = RunMetrics(selector=cfg.selector.value, metric=run.metric_label, seed=cfg.seed)
        state = RunState.from_dict(resume_state, metrics)
        if cfg.selector is not SelectorKind.DIRECT_VAL and state.round_index >= 0:
            _, oracle = run.draw_pool(state.round_index)
            run.round_oracle = oracle.restricted([p.id for p in state.selected])
    else:
        state = run.new_state()
    with rollout_tally() as tally:
        tally.update(state.rollouts)
        try:
            if resume_state is None:
                run.evaluate(state)
            while state.step < cfg.total_steps:
                if checkpoint_path is not None and checkpoint_at == state.step:
                    state.rollouts = dict(tally)
                    save_checkpoint(checkpoint_path, cfg, state)
                if stop_at is not None and state.step >= stop_at:
                    break
                if state.step % u == 0:
                    if state.step > 0 or state.round_index >= 0:
                        run.check_budget(state, tally)
                    if cfg.selector is SelectorKind.DIRECT_VAL:
                        state.round_index = state.step // u
                    else:
                        with rollout_purpose("selection"):
                            run.select(state, state.step // u)
                run.train_step(state)
                if state.step % cfg.eval_every == 0 or state.step == cfg.total_steps:
                    run.evaluate(state)
            else:
                run.check_budget(state, tally)
        except NumericError as exc:
            exc.diagnostic["metrics"] = state.metrics
            raise
        state.rollouts = dict(tally)
    state.metrics.rollouts = dict(state.rollouts)
    return state.metrics
