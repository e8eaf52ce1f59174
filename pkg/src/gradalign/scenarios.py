"""Synthetic problem pools for the three data regimes.

All regimes share one task: a class-conditional mixture where the reference
answer ``y`` is drawn uniformly and the features are ``s * (mu_y + sigma * xi)``
on a coordinate support that depends on the problem's domain. The class means
``mu`` are fixed per scenario (derived from ``geometry_seed``), so every pool,
validation split and test split drawn from the same spec describes the same
task.

Domain supports use disjoint coordinates: TARGET occupies the first half of
the feature vector and OFFTOPIC/EASY the second half (NOISY_REWARDS has a
single domain and uses all coordinates).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InputError
from .policy import (
    CLEAN,
    Corruption,
    DomainTag,
    Problem,
    probabilities,
    zero_params,
)
from .rng import stream

__all__ = [
    "ScenarioKind",
    "ScenarioSpec",
    "Geometry",
    "RewardOracle",
    "build_geometry",
    "initial_params",
    "generate_noisy_pool",
    "generate_imbalanced_pool",
    "generate_low_utility_pool",
    "generate_pool",
    "generate_splits",
    "judge",
    "VALIDATION_ID_START",
    "TEST_ID_START",
]

VALIDATION_ID_START = 10_000_000
TEST_ID_START = 20_000_000
MAX_ATTEMPTS = 100
MID_PASS_RANGE = (0.2, 0.8)
EASY_PASS_MIN = 0.95


class ScenarioKind(str, enum.Enum):
    NOISY_REWARDS = "NOISY_REWARDS"
    IMBALANCED = "IMBALANCED"
    LOW_UTILITY = "LOW_UTILITY"


@dataclass
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.NOISY_REWARDS
    pool_size: int = 128
    corrupt_fraction: float = 0.5
    bernoulli_p: float = 0.5
    target_fraction: float = 0.10
    easy_fraction: float = 0.5
    answer_count: int = 4
    dim: int = 8
    # feature geometry
    geometry_seed: int | None = None
    class_separation: float = 2.0
    noise_scale: float = 1.0
    scale_spread: float = 0.0
    easy_noise_scale: float = 0.2
    easy_weight_scale: float = 4.0
    initial_skill: float = 0.0

    def __post_init__(self):
        self.kind = ScenarioKind(self.kind)
        self.validate()

    def validate(self, q: int | None = None):
        for name in ("corrupt_fraction", "target_fraction", "easy_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.bernoulli_p < 1.0:
            raise ConfigError("bernoulli_p must lie in (0, 1)")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if q is not None and self.pool_size < q:
            raise ConfigError(f"pool_size {self.pool_size} is smaller than q={q}")
        if self.answer_count < 2:
            raise ConfigError("answer_count must be >= 2")
        split = self.kind is not ScenarioKind.NOISY_REWARDS
        if self.dim < (2 if split else 1):
            raise ConfigError("dim too small for the domain supports")
        if self.noise_scale < 0 or self.scale_spread < 0 or self.easy_noise_scale < 0:
            raise ConfigError("noise and spread parameters must be >= 0")


@dataclass(frozen=True)
class Geometry:
    """Per-domain class means, each ``(A, d)`` and zero off its support."""

    means: dict
    supports: dict


def build_geometry(spec: ScenarioSpec) -> Geometry:
    rng = stream(spec.geometry_seed or 0, "geometry", list(ScenarioKind).index(spec.kind))
    d, a = spec.dim, spec.answer_count
    if spec.kind is ScenarioKind.NOISY_REWARDS:
        supports = {DomainTag.TARGET: np.arange(d)}
    else:
        half = d // 2
        other = DomainTag.OFFTOPIC if spec.kind is ScenarioKind.IMBALANCED else DomainTag.EASY
        supports = {DomainTag.TARGET: np.arange(half), other: np.arange(half, d)}
    means = {}
    for tag, support in supports.items():
        mu = np.zeros((a, d))
        raw = rng.standard_normal((a, support.size))
        raw -= raw.mean(axis=0)  # equal-norm, zero-mean class means
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        mu[:, support] = spec.class_separation * raw
        means[tag] = mu
    return Geometry(means=means, supports=supports)


def initial_params(spec: ScenarioSpec, geometry: Geometry | None = None) -> np.ndarray:
    """Starting policy.

    Uniform by default. ``initial_skill`` > 0 points the TARGET rows toward the
    class means, which keeps problems mid-difficulty when the answer space is
    large. LOW_UTILITY additionally solves the EASY domain outright.
    """
    params = zero_params(spec.answer_count, spec.dim)
    if spec.initial_skill == 0 and spec.kind is not ScenarioKind.LOW_UTILITY:
        return params
    geometry = geometry or build_geometry(spec)
    if spec.initial_skill:
        params += spec.initial_skill * geometry.means[DomainTag.TARGET] / spec.class_separation
    if spec.kind is ScenarioKind.LOW_UTILITY:
        params += spec.easy_weight_scale * geometry.means[DomainTag.EASY] / spec.class_separation
    return params


@dataclass
class RewardOracle:
    """Binary judge holding the corruption ground truth.

    CLEAN problems score ``1[answer == reference]``. BERNOULLI(p) problems score
    an independent coin flip and ignore the answer.
    """

    corruption_map: dict = field(default_factory=dict)
    rng_stream: np.random.Generator | None = None

    def __post_init__(self):
        if self.rng_stream is None:
            self.rng_stream = stream(0, "reward-oracle")

    @property
    def corrupted_ids(self) -> frozenset:
        return frozenset(
            pid for pid, c in self.corruption_map.items() if c is not None and not c.is_clean
        )

    def corruption_of(self, problem: Problem) -> Corruption:
        try:
            return self.corruption_map[problem.id]
        except KeyError:
            raise InputError(f"reward oracle has no record of problem {problem.id}") from None

    def judge_many(self, problem: Problem, answers, rng=None) -> np.ndarray:
        answers = np.asarray(answers, dtype=np.int64)
        c = self.corruption_of(problem)
        if c.is_clean:
            return (answers == problem.reference_answer).astype(np.float64)
        rng = self.rng_stream if rng is None else rng
        return (rng.random(answers.shape) < c.p).astype(np.float64)

    def merged(self, other: "RewardOracle") -> "RewardOracle":
        return RewardOracle({**self.corruption_map, **other.corruption_map}, self.rng_stream)

    def restricted(self, ids) -> "RewardOracle":
        return RewardOracle({i: self.corruption_map[i] for i in ids}, self.rng_stream)


def judge(oracle: RewardOracle, problem: Problem, answer: int, rng=None) -> int:
    return int(oracle.judge_many(problem, np.array([answer]), rng)[0])


def _draw_features(spec, geometry, tag, label, rng, noise_scale):
    mu = geometry.means[tag]
    support = geometry.supports[tag]
    x = np.zeros(spec.dim)
    x[support] = mu[label, support] + noise_scale * rng.standard_normal(support.size)
    if spec.scale_spread > 0:
        x *= rng.lognormal(0.0, spec.scale_spread)
    return x


def _mid_problem(spec, geometry, tag, pid, rng, init):
    """Problem whose pass probability under ``init`` lies in MID_PASS_RANGE."""
    lo, hi = MID_PASS_RANGE
    for _ in range(MAX_ATTEMPTS):
        label = int(rng.integers(spec.answer_count))
        x = _draw_features(spec, geometry, tag, label, rng, spec.noise_scale)
        p = Problem(pid, x, spec.answer_count, label, tag, CLEAN)
        if lo <= probabilities(init, p)[label] <= hi:
            return p
    raise ConfigError(
        f"could not construct a mid-difficulty problem in {MAX_ATTEMPTS} attempts "
        f"(A={spec.answer_count} puts the uniform pass rate outside {MID_PASS_RANGE})"
    )


def _easy_problem(spec, geometry, pid, rng, init):
    for _ in range(MAX_ATTEMPTS):
        label = int(rng.integers(spec.answer_count))
        x = _draw_features(spec, geometry, DomainTag.EASY, label, rng, spec.easy_noise_scale)
        p = Problem(pid, x, spec.answer_count, label, DomainTag.EASY, CLEAN)
        if probabilities(init, p)[label] > EASY_PASS_MIN:
            return p
    raise ConfigError(
        f"could not construct an easy problem in {MAX_ATTEMPTS} attempts; "
        "raise easy_weight_scale or lower easy_noise_scale"
    )


def _oracle_for(problems, rng) -> RewardOracle:
    return RewardOracle({p.id: p.corruption for p in problems}, rng)


def generate_noisy_pool(spec: ScenarioSpec, rng: np.random.Generator, id_start: int = 0):
    """Target-distribution pool with an exact ``corrupt_fraction`` of Bernoulli rewards."""
    if spec.kind is not ScenarioKind.NOISY_REWARDS:
        raise InputError("generate_noisy_pool needs a NOISY_REWARDS spec")
    geometry = build_geometry(spec)
    init = initial_params(spec, geometry)
    m = spec.pool_size
    n_bad = int(round(spec.corrupt_fraction * m))
    bad = set(rng.permutation(m)[:n_bad].tolist())
    noisy = Corruption.bernoulli(spec.bernoulli_p)
    problems = []
    for i in range(m):
        p = _mid_problem(spec, geometry, DomainTag.TARGET, id_start + i, rng, init)
        if i in bad:
            p = Problem(p.id, p.features, p.answer_count, p.reference_answer, p.domain_tag, noisy)
        problems.append(p)
    return problems, _oracle_for(problems, stream(spec.geometry_seed or 0, "judge", id_start))


def generate_imbalanced_pool(spec: ScenarioSpec, rng: np.random.Generator, id_start: int = 0):
    """Mixture with an exact ``target_fraction`` of TARGET problems, rest OFFTOPIC."""
    if spec.kind is not ScenarioKind.IMBALANCED:
        raise InputError("generate_imbalanced_pool needs an IMBALANCED spec")
    geometry = build_geometry(spec)
    init = initial_params(spec, geometry)
    m = spec.pool_size
    n_target = int(round(spec.target_fraction * m))
    target = set(rng.permutation(m)[:n_target].tolist())
    problems = [
        _mid_problem(
            spec,
            geometry,
            DomainTag.TARGET if i in target else DomainTag.OFFTOPIC,
            id_start + i,
            rng,
            init,
        )
        for i in range(m)
    ]
    return problems, _oracle_for(problems, stream(spec.geometry_seed or 0, "judge", id_start))


def generate_low_utility_pool(spec: ScenarioSpec, rng: np.random.Generator, id_start: int = 0):
    """Pool where ``easy_fraction`` of problems are already solved by the initial policy."""
    if spec.kind is not ScenarioKind.LOW_UTILITY:
        raise InputError("generate_low_utility_pool needs a LOW_UTILITY spec")
    geometry = build_geometry(spec)
    init = initial_params(spec, geometry)
    m = spec.pool_size
    n_easy = int(round(spec.easy_fraction * m))
    easy = set(rng.permutation(m)[:n_easy].tolist())
    problems = []
    for i in range(m):
        if i in easy:
            problems.append(_easy_problem(spec, geometry, id_start + i, rng, init))
        else:
            problems.append(_mid_problem(spec, geometry, DomainTag.TARGET, id_start + i, rng, init))
    return problems, _oracle_for(problems, stream(spec.geometry_seed or 0, "judge", id_start))


_GENERATORS = {
    ScenarioKind.NOISY_REWARDS: generate_noisy_pool,
    ScenarioKind.IMBALANCED: generate_imbalanced_pool,
    ScenarioKind.LOW_UTILITY: generate_low_utility_pool,
}


def generate_pool(spec: ScenarioSpec, rng: np.random.Generator, id_start: int = 0):
    return _GENERATORS[spec.kind](spec, rng, id_start)


def generate_splits(spec: ScenarioSpec, validation_size: int, test_size: int, seed: int):
    """Clean TARGET-domain validation and test sets with disjoint id ranges."""
    geometry = build_geometry(spec)
    init = initial_params(spec, geometry)
    splits = []
    for purpose, start, n in (
        ("validation-split", VALIDATION_ID_START, validation_size),
        ("test-split", TEST_ID_START, test_size),
    ):
        rng = stream(seed, purpose)
        splits.append(
            [_mid_problem(spec, geometry, DomainTag.TARGET, start + i, rng, init) for i in range(n)]
        )
    return splits[0], splits[1]
