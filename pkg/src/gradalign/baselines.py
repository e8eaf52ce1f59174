"""Comparison selectors sharing GradAlign's selection interface."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .exceptions import InputError
from .selector import NEAR_ZERO, Metric, alignment_scores, select_top_fraction, selection_size

__all__ = [
    "SelectorKind",
    "random_select",
    "acc_greedy_select",
    "align_select",
    "direct_val_mode",
]


class SelectorKind(str, enum.Enum):
    GRADALIGN = "gradalign"
    RANDOM = "random"
    ACC_GREEDY = "accgreedy"
    ALIGN = "align"
    DIRECT_VAL = "direct-val"

    @classmethod
    def parse(cls, value) -> "SelectorKind":
        if isinstance(value, cls):
            return value
        v = str(value).strip()
        for kind in cls:
            if v.lower() == kind.value or v.upper() == kind.name:
                return kind
        raise ValueError(f"unknown selector {value!r}; choose from {[k.value for k in cls]}")


def random_select(ids, q: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subset of size ``max(1, M // q)`` without replacement."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise InputError("empty candidate pool")
    n = selection_size(ids.size, q)
    return ids[rng.permutation(ids.size)[:n]]


def acc_greedy_select(pass_rates, ids, q: int) -> np.ndarray:
    """Pass rates closest to 0.5 first; ties go to the smaller id."""
    rates = np.asarray(pass_rates, dtype=np.float64)
    if np.any((rates < 0) | (rates > 1)):
        raise InputError("pass rates must lie in [0, 1]")
    return select_top_fraction(-np.abs(rates - 0.5), ids, q)


def align_select(candidate_gradients, ids, q: int, rng: np.random.Generator):
    """Cosine to the pool's own mean gradient; no validation input.

    Returns ``(selected_ids, scores, degenerate)``. A zero mean gradient falls
    back to :func:`random_select` and reports ``degenerate=True``.
    """
    grads = np.atleast_2d(np.asarray(candidate_gradients, dtype=np.float64))
    ids = np.asarray(ids, dtype=np.int64)
    if grads.shape[0] == 0:
        raise InputError("align_select needs at least one candidate gradient")
    if grads.shape[0] != ids.size:
        raise InputError("one gradient per candidate id is required")
    target = grads.mean(axis=0)
    scores = alignment_scores(grads, target, Metric.COSINE)
    if np.linalg.norm(target) < NEAR_ZERO:
        return random_select(ids, q, rng), scores, True
    return select_top_fraction(scores, ids, q), scores, False


def direct_val_mode(validation_problems: Sequence, n_train: int, rng: np.random.Generator) -> list:
    """One training batch drawn from the validation set itself.

    Without replacement when the validation set is large enough, with
    replacement otherwise.
    """
    n_val = len(validation_problems)
    if n_val == 0:
        raise InputError("validation set is empty")
    if n_train < 1:
        raise InputError("n_train must be >= 1")
    if n_val >= n_train:
        idx = rng.permutation(n_val)[:n_train]
    else:
        idx = rng.integers(0, n_val, size=n_train)
    return [validation_problems[i] for i in idx]
