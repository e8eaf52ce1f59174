import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_problem, random_instance
from gradalign.exceptions import ConfigError, InputError
from gradalign.grpo import advantage_estimates, group_gradients
from gradalign.policy import Corruption, problem_accuracy_gradient, sample_answers, zero_params
from gradalign.rng import Streams, stream
from gradalign.scenarios import RewardOracle, ScenarioKind, ScenarioSpec, generate_pool, generate_splits, initial_params
from gradalign.selector import (
    Metric,
    SelectionConfig,
    alignment_score,
    alignment_scores,
    candidate_gradient,
    run_selection_round,
    score_candidates,
    select_top_fraction,
    selection_size,
    validation_gradient,
)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def clean_oracle(problems):
    return RewardOracle({p.id: Corruption() for p in problems})


# -- config ------------------------------------------------------------------------


def test_config_invariants():
    with pytest.raises(ConfigError):
        SelectionConfig(selection_ratio=1)
    with pytest.raises(ConfigError):
        SelectionConfig(k_r=8, k_v=4)
    with pytest.raises(ConfigError):
        SelectionConfig(k_r=1)
    assert selection_size(10, 4) == 2
    assert selection_size(3, 4) == 1


# -- validation gradient ---------------------------------------------------------------


def test_validation_gradient_single_problem(rng):
    params, (p,) = random_instance(rng)
    G = validation_gradient(params, [p], 16, Streams(3))
    g = sample_answers(params, p, 16, Streams(3).get("val-rollout", 0, p.id))
    rewards = (g.answers == p.reference_answer).astype(float)
    expected = group_gradients(params, p, g.answers, advantage_estimates(rewards))
    np.testing.assert_array_equal(G, expected)


def test_validation_gradient_zero_when_saturated(caplog):
    problems = [make_problem([1.0, 0.0], 2, reference=0, pid=i) for i in range(3)]
    params = np.array([[60.0, 0.0], [-60.0, 0.0]])
    with caplog.at_level(logging.WARNING, logger="gradalign.selector"):
        G = validation_gradient(params, problems, 8, Streams(0))
    assert np.all(G == 0.0)
    assert "zero" in caplog.text


def test_validation_gradient_opposite_problems_cancel():
    # same rollouts, features x and -x: per-problem gradients are g and -g
    a = make_problem([1.0, 2.0], 3, reference=1, pid=0)
    b = make_problem([-1.0, -2.0], 3, reference=1, pid=1)
    params = zero_params(3, 2)
    from gradalign import selector

    orig = selector._problem_rng
    try:
        selector._problem_rng = lambda rng, purpose, r, pid: stream(9, purpose, r)
        G = validation_gradient(params, [a, b], 8, Streams(0))
    finally:
        selector._problem_rng = orig
    np.testing.assert_allclose(G, 0.0, atol=1e-15)


def test_validation_gradient_rejects_corrupted():
    bad = make_problem([1.0], 2, corruption=Corruption.bernoulli(0.5))
    with pytest.raises(InputError):
        validation_gradient(zero_params(2, 1), [bad], 4, Streams(0))
    with pytest.raises(InputError):
        validation_gradient(zero_params(2, 1), [bad.public()], 4, Streams(0))


def test_validation_gradient_is_resampled_per_round(rng):
    params, problems = random_instance(rng, n=3)
    a = validation_gradient(params, problems, 8, Streams(1), round_index=0)
    b = validation_gradient(params, problems, 8, Streams(1), round_index=1)
    c = validation_gradient(params, problems, 8, Streams(1), round_index=0)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)


# -- candidate gradient ---------------------------------------------------------------


def test_candidate_all_correct_rollouts():
    p = make_problem([1.0], 2, reference=0)
    params = np.array([[60.0], [-60.0]])
    g, rate = candidate_gradient(params, p, 8, clean_oracle([p]), Streams(0))
    assert rate == 1.0
    assert np.all(g == 0.0)


def test_candidate_clean_aligns_with_accuracy_gradient():
    cos = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = make_problem(rng.normal(size=8), 4, reference=int(rng.integers(4)), pid=seed)
        params = zero_params(4, 8)
        g, _ = candidate_gradient(params, p, 128, clean_oracle([p]), Streams(seed))
        cos.append(cosine(g, problem_accuracy_gradient(params, p)))
    assert np.mean(cos) > 0.9


def test_candidate_uses_oracle_rewards():
    p = make_problem([1.0, -1.0], 2, reference=0)
    oracle = RewardOracle({p.id: Corruption.bernoulli(1.0)})
    _, rate = candidate_gradient(zero_params(2, 2), p, 16, oracle, Streams(0))
    assert rate == 1.0


# -- scoring -----------------------------------------------------------------------------


def test_alignment_identity_and_orthogonal():
    v = np.array([1.0, -2.0, 0.5])
    assert alignment_score(v, v) == pytest.approx(1.0, abs=1e-15)
    e0, e1 = np.eye(2)
    for m in Metric:
        assert alignment_score(e0, e1, m) == 0.0


def test_alignment_metrics_diverge_on_magnitude():
    G = np.array([0.6, 0.8])
    assert alignment_score(2 * G, G, Metric.COSINE) == pytest.approx(1.0, abs=1e-15)
    assert alignment_score(2 * G, G, Metric.INNER_PRODUCT) == pytest.approx(2.0, abs=1e-15)


def test_alignment_near_zero_norm_is_zero():
    G = np.array([1.0, 0.0])
    assert alignment_score(np.array([1e-13, 0.0]), G) == 0.0
    assert alignment_score(G, np.zeros(2)) == 0.0


def test_alignment_length_mismatch():
    with pytest.raises(ConfigError):
        alignment_score(np.ones(3), np.ones(2))


@given(
    g=arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)),
    G=arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False)),
)
@settings(max_examples=200, deadline=None)
def test_cosine_scale_invariance(g, G):
    base = alignment_score(g, G)
    for c in (1e-3, 1.0, 1e3):
        scaled = alignment_score(c * g, G)
        if np.linalg.norm(c * g) >= 1e-12 and np.linalg.norm(g) >= 1e-12:
            assert abs(scaled - base) <= 1e-12


def test_selection_invariant_to_common_gradient_scale(rng):
    grads = rng.normal(size=(20, 6))
    G = rng.normal(size=6)
    ids = np.arange(100, 120)
    for metric in Metric:
        base = select_top_fraction(alignment_scores(grads, G, metric), ids, 4)
        for c in (1e-3, 7.0, 1e3):
            np.testing.assert_array_equal(select_top_fraction(alignment_scores(c * grads, G, metric), ids, 4), base)
    cos = alignment_scores(grads, G)
    # powers of two scale exactly, so cosine scores are bit-identical
    np.testing.assert_array_equal(alignment_scores(4.0 * grads, G), cos)


# -- top fraction ------------------------------------------------------------------------


def test_top_fraction_examples():
    np.testing.assert_array_equal(select_top_fraction([0.9, 0.1, 0.5, 0.3], [0, 1, 2, 3], 4), [0])
    np.testing.assert_array_equal(select_top_fraction([1.0, 1.0, 1.0, 1.0], [7, 3, 5, 9], 2), [3, 5])
    np.testing.assert_array_equal(select_top_fraction([0.2, 0.8, 0.8], [10, 12, 11], 3), [11])


def test_top_fraction_errors():
    with pytest.raises(InputError):
        select_top_fraction([], [], 2)
    with pytest.raises(InputError):
        select_top_fraction([1.0], [1, 2], 2)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=40), st.integers(2, 10))
@settings(max_examples=100, deadline=None)
def test_top_fraction_properties(scores, q):
    ids = np.arange(len(scores))[::-1] * 3
    sel = select_top_fraction(scores, ids, q)
    assert len(sel) == max(1, len(scores) // q)
    assert len(set(sel.tolist())) == len(sel)
    chosen = {int(i) for i in sel}
    s = dict(zip(ids.tolist(), scores))
    worst_in = min(s[i] for i in chosen)
    assert all(s[i] <= worst_in for i in s if i not in chosen)


# -- selection rounds ------------------------------------------------------------------------


def _noisy(seed, pool_size=16, corrupt_fraction=0.5, **kw):
    spec = ScenarioSpec(kind=ScenarioKind.NOISY_REWARDS, pool_size=pool_size, corrupt_fraction=corrupt_fraction, geometry_seed=seed, **kw)
    pool, oracle = generate_pool(spec, stream(seed, "pool", 0))
    val, _ = generate_splits(spec, 8, 1, seed)
    return spec, [p.public() for p in pool], oracle, val


def test_selection_prefers_clean_candidates():
    fractions = []
    for seed in range(50):
        spec, pool, oracle, val = _noisy(seed)
        cfg = SelectionConfig(pool_size=16, selection_ratio=4, k_v=64, k_r=64)
        rnd = run_selection_round(initial_params(spec), pool, val, cfg, oracle, Streams(seed))
        bad = oracle.corrupted_ids
        fractions.append(np.mean([i in bad for i in rnd.selected_ids]))
    assert np.mean(fractions) < 0.5


def test_duplicate_of_validation_problem_ranks_high():
    hits = 0
    for seed in range(50):
        spec, pool, oracle, val = _noisy(seed, corrupt_fraction=0.0)
        target = val[0]
        dup = type(target)(999_999, target.features, target.answer_count, target.reference_answer, target.domain_tag, None)
        pool = pool[:-1] + [dup]
        oracle = oracle.merged(RewardOracle({dup.id: Corruption()}))
        cfg = SelectionConfig(pool_size=16, selection_ratio=4, k_v=64, k_r=64)
        rnd = run_selection_round(initial_params(spec), pool, [target], cfg, oracle, Streams(seed))
        hits += dup.id in set(rnd.selected_ids.tolist())
    assert hits / 50 > 0.9


def test_selection_boundary_q_equals_m():
    spec, pool, oracle, val = _noisy(0)
    cfg = SelectionConfig(pool_size=16, selection_ratio=16, k_v=8, k_r=4)
    rnd = run_selection_round(initial_params(spec), pool, val, cfg, oracle, Streams(0))
    assert len(rnd.selected_ids) == 1


def test_selection_round_deterministic_across_workers():
    spec, pool, oracle, val = _noisy(4, pool_size=32)
    params = initial_params(spec)
    rounds = [
        run_selection_round(params, pool, val, SelectionConfig(pool_size=32, k_v=16, k_r=4, workers=w), oracle, Streams(4))
        for w in (1, 4, 1)
    ]
    for r in rounds[1:]:
        np.testing.assert_array_equal(r.selected_ids, rounds[0].selected_ids)
        assert r.scores.tobytes() == rounds[0].scores.tobytes()
        assert r.per_candidate_pass_rate.tobytes() == rounds[0].per_candidate_pass_rate.tobytes()


def test_degenerate_round_falls_back_to_random():
    spec, pool, oracle, _ = _noisy(1)
    d = pool[0].dim
    params = initial_params(spec)
    # a validation problem the policy can never miss has a zero gradient
    x = np.zeros(d)
    x[0] = 1.0
    hard = params.copy()
    hard[0, 0] += 200.0
    val = [make_problem(x, spec.answer_count, reference=0, pid=5_000)]
    cfg = SelectionConfig(pool_size=16, selection_ratio=4, k_v=8, k_r=4)
    rnd = run_selection_round(hard, pool, val, cfg, oracle, Streams(1))
    assert rnd.degenerate
    assert rnd.validation_gradient_norm == 0.0
    assert len(rnd.selected_ids) == 4
    assert set(rnd.selected_ids.tolist()) <= {p.id for p in pool}


def test_selection_round_pool_size_checked():
    spec, pool, oracle, val = _noisy(0)
    with pytest.raises(InputError):
        run_selection_round(initial_params(spec), pool[:-1], val, SelectionConfig(pool_size=16), oracle, Streams(0))


def test_score_candidates_shapes():
    spec, pool, oracle, _ = _noisy(2)
    grads, rates = score_candidates(initial_params(spec), pool, SelectionConfig(pool_size=16), oracle, Streams(2))
    assert grads.shape == (16, spec.answer_count * spec.dim)
    assert rates.shape == (16,)
    assert np.all((rates >= 0) & (rates <= 1))
