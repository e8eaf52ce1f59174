"""Synthetic problems and the linear-softmax policy.

A policy is a weight matrix ``W`` of shape ``(A, d)``; the logits for a problem
with features ``x`` are ``W @ x``. Gradients are always returned flattened in
row-major order (answer index, then feature index), which is the same order
``W.ravel()`` produces.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import enum
import math
import threading
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigError, InputError

__all__ = [
    "DomainTag",
    "CorruptionMode",
    "Corruption",
    "CLEAN",
    "Problem",
    "RolloutGroup",
    "AccuracyOracle",
    "zero_params",
    "logits",
    "probabilities",
    "log_prob",
    "grad_log_prob",
    "sample_answers",
    "sample_answer_matrix",
    "expected_accuracy",
    "expected_accuracy_gradient",
    "problem_accuracy_gradient",
    "rollout_tally",
    "rollout_purpose",
    "write_pool",
    "read_pool",
    "write_ground_truth",
    "read_ground_truth",
]


class DomainTag(str, enum.Enum):
    TARGET = "TARGET"
    OFFTOPIC = "OFFTOPIC"
    EASY = "EASY"


class CorruptionMode(str, enum.Enum):
    CLEAN = "CLEAN"
    BERNOULLI = "BERNOULLI"


@dataclass(frozen=True)
class Corruption:
    mode: CorruptionMode = CorruptionMode.CLEAN
    p: float | None = None

    def __post_init__(self):
        if self.mode is CorruptionMode.BERNOULLI:
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise InputError(f"Bernoulli corruption needs p in [0, 1], got {self.p}")
        elif self.p is not None:
            raise InputError("clean problems carry no corruption probability")

    @property
    def is_clean(self) -> bool:
        return self.mode is CorruptionMode.CLEAN

    @classmethod
    def bernoulli(cls, p: float) -> "Corruption":
        return cls(CorruptionMode.BERNOULLI, float(p))


CLEAN = Corruption()


@dataclass(frozen=True, eq=False)
class Problem:
    """One task instance.

    ``corruption`` is ``None`` on the public view of a problem (what selectors
    see); the ground truth lives in the reward oracle and the harness sidecar.
    """

    id: int
    features: np.ndarray
    answer_count: int
    reference_answer: int
    domain_tag: DomainTag = DomainTag.TARGET
    corruption: Corruption | None = CLEAN

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 1:
            raise InputError("features must be a 1-D vector")
        if not np.all(np.isfinite(x)):
            raise InputError(f"problem {self.id}: non-finite features")
        if self.answer_count < 2:
            raise InputError(f"problem {self.id}: answer_count must be >= 2")
        if not 0 <= self.reference_answer < self.answer_count:
            raise InputError(
                f"problem {self.id}: reference_answer {self.reference_answer} "
                f"outside [0, {self.answer_count})"
            )
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "domain_tag", DomainTag(self.domain_tag))

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def public(self) -> "Problem":
        """Copy with the corruption ground truth removed."""
        return replace(self, corruption=None)

    def __eq__(self, other):
        if not isinstance(other, Problem):
            return NotImplemented
        return (
            self.id == other.id
            and self.answer_count == other.answer_count
            and self.reference_answer == other.reference_answer
            and self.domain_tag == other.domain_tag
            and self.corruption == other.corruption
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash((self.id, self.reference_answer))


@dataclass
class RolloutGroup:
    problem_id: int
    answers: np.ndarray
    rewards: np.ndarray | None = None
    policy_snapshot_tag: int = 0

    def __post_init__(self):
        self.answers = np.asarray(self.answers, dtype=np.int64)
        if self.rewards is not None:
            self.rewards = np.asarray(self.rewards, dtype=np.float64)
            if self.rewards.shape != self.answers.shape:
                raise InputError("answers and rewards must have equal length")

    @property
    def k(self) -> int:
        return self.answers.shape[0]

    @property
    def pass_rate(self) -> float:
        if self.rewards is None:
            raise InputError("group has not been judged")
        return float(self.rewards.mean())


# -- rollout accounting ------------------------------------------------------

_tally: contextvars.ContextVar = contextvars.ContextVar("rollout_tally", default=None)
_purpose: contextvars.ContextVar = contextvars.ContextVar("rollout_purpose", default="other")


class _Tally(Counter):
    def __init__(self):
        super().__init__()
        self._lock = threading.Lock()

    def add(self, purpose, n):
        with self._lock:
            self[purpose] += n


@contextlib.contextmanager
def rollout_tally():
    """Count every sampled answer inside the block, keyed by purpose label."""
    tally = _Tally()
    token = _tally.set(tally)
    try:
        yield tally
    finally:
        _tally.reset(token)


@contextlib.contextmanager
def rollout_purpose(label: str):
    token = _purpose.set(label)
    try:
        yield
    finally:
        _purpose.reset(token)


def _record_rollouts(n: int):
    tally = _tally.get()
    if tally is not None:
        tally.add(_purpose.get(), int(n))


# -- policy ------------------------------------------------------------------


def zero_params(answer_count: int, dim: int) -> np.ndarray:
    return np.zeros((answer_count, dim))


def _check(params: np.ndarray, problem: Problem):
    if params.ndim != 2:
        raise ConfigError(f"params must be a 2-D (A, d) matrix, got shape {params.shape}")
    if params.shape != (problem.answer_count, problem.dim):
        raise ConfigError(
            f"params shape {params.shape} does not match problem {problem.id} "
            f"(A={problem.answer_count}, d={problem.dim})"
        )


def logits(params: np.ndarray, problem: Problem) -> np.ndarray:
    _check(params, problem)
    return params @ problem.features


def _log_softmax(z: np.ndarray) -> np.ndarray:
    # a shifted logit that overflows to -inf is an exact zero probability
    with np.errstate(over="ignore"):
        shifted = z - z.max()
    return shifted - math.log(np.exp(shifted).sum())


def probabilities(params: np.ndarray, problem: Problem) -> np.ndarray:
    return np.exp(_log_softmax(logits(params, problem)))


def log_prob(params: np.ndarray, problem: Problem, answer: int) -> float:
    if not 0 <= answer < problem.answer_count:
        raise InputError(f"answer {answer} outside [0, {problem.answer_count})")
    return float(_log_softmax(logits(params, problem))[answer])


def grad_log_prob(params: np.ndarray, problem: Problem, answer: int) -> np.ndarray:
    """Score function: block ``a`` is ``(1[a == answer] - p_a) * x``."""
    if not 0 <= answer < problem.answer_count:
        raise InputError(f"answer {answer} outside [0, {problem.answer_count})")
    coeff = -probabilities(params, problem)
    coeff[answer] += 1.0
    return np.outer(coeff, problem.features).ravel()


def _draw(probs: np.ndarray, size, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    u = rng.random(size)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def sample_answers(
    params: np.ndarray,
    problem: Problem,
    k: int,
    rng: np.random.Generator,
    snapshot_tag: int = 0,
) -> RolloutGroup:
    """Draw ``k`` i.i.d. answers from the policy (rewards left unset)."""
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    answers = _draw(probabilities(params, problem), k, rng)
    _record_rollouts(k)
    return RolloutGroup(problem.id, answers, None, snapshot_tag)


def sample_answer_matrix(
    params: np.ndarray, problem: Problem, n_groups: int, k: int, rng: np.random.Generator
) -> np.ndarray:
    """``(n_groups, k)`` answers in one draw; used by Monte Carlo checks."""
    answers = _draw(probabilities(params, problem), (n_groups, k), rng)
    _record_rollouts(n_groups * k)
    return answers


# -- closed-form accuracy oracle ---------------------------------------------


def _require_clean(problems: Sequence[Problem]):
    if len(problems) == 0:
        raise InputError("problem set is empty")
    for p in problems:
        if p.corruption is None or not p.corruption.is_clean:
            raise InputError(
                f"problem {p.id} is not known to be clean; expected accuracy is "
                "defined for clean rewards only"
            )


def problem_accuracy_gradient(params: np.ndarray, problem: Problem) -> np.ndarray:
    """Gradient of the reference-answer probability for one problem."""
    probs = probabilities(params, problem)
    ref = problem.reference_answer
    coeff = -probs[ref] * probs
    coeff[ref] += probs[ref]
    return np.outer(coeff, problem.features).ravel()


def expected_accuracy(params: np.ndarray, problems: Sequence[Problem]) -> float:
    _require_clean(problems)
    return float(np.mean([probabilities(params, p)[p.reference_answer] for p in problems]))


def expected_accuracy_gradient(params: np.ndarray, problems: Sequence[Problem]) -> np.ndarray:
    _require_clean(problems)
    return np.mean([problem_accuracy_gradient(params, p) for p in problems], axis=0)


@dataclass(frozen=True)
class AccuracyOracle:
    """Closed-form expected accuracy over a fixed set of clean problems."""

    problems: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "problems", tuple(self.problems))
        _require_clean(self.problems)

    def accuracy(self, params: np.ndarray) -> float:
        return expected_accuracy(params, self.problems)

    def gradient(self, params: np.ndarray) -> np.ndarray:
        return expected_accuracy_gradient(params, self.problems)


# -- problem-pool files --------------------------------------------------------

POOL_FIELDS = (
    "id",
    "features",
    "answer_count",
    "reference_answer",
    "domain_tag",
    "corruption",
    "corruption_p",
)
GROUND_TRUTH_FIELDS = ("id", "corruption", "corruption_p")


def _fmt_corruption(c: Corruption | None) -> tuple[str, str]:
    if c is None:
        return "", ""
    return c.mode.value, "" if c.p is None else repr(c.p)


def _parse_corruption(mode: str, p: str) -> Corruption | None:
    if mode == "":
        return None
    return Corruption(CorruptionMode(mode), float(p) if p != "" else None)


def write_pool(path, problems: Iterable[Problem], include_corruption: bool = False):
    """Write one tab-separated record per problem.

    Corruption columns are left empty unless ``include_corruption`` is set;
    generated pools keep the ground truth in a separate sidecar.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(POOL_FIELDS)
            for p in problems:
                mode, prob = _fmt_corruption(p.corruption if include_corruption else None)
                w.writerow(
                    [
                        p.id,
                        ",".join(repr(float(v)) for v in p.features),
                        p.answer_count,
                        p.reference_answer,
                        p.domain_tag.value,
                        mode,
                        prob,
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write problem pool {path}: {exc}") from exc


def read_pool(path) -> list[Problem]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != POOL_FIELDS:
            raise InputError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            Problem(
                id=int(row["id"]),
                features=np.array([float(v) for v in row["features"].split(",")]),
                answer_count=int(row["answer_count"]),
                reference_answer=int(row["reference_answer"]),
                domain_tag=DomainTag(row["domain_tag"]),
                corruption=_parse_corruption(row["corruption"], row["corruption_p"]),
            )
            for row in reader
        ]


def write_ground_truth(path, corruption_map: dict):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(GROUND_TRUTH_FIELDS)
        for pid in sorted(corruption_map):
            w.writerow([pid, *_fmt_corruption(corruption_map[pid])])


def read_ground_truth(path) -> dict:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return {
            int(r["id"]): _parse_corruption(r["corruption"], r["corruption_p"]) for r in reader
        }
