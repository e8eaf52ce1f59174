import sys

import numpy as np
import pytest

from gradalign.policy import Corruption, Problem


def make_problem(features, answer_count=None, reference=0, pid=0, corruption=None, **kw):
    features = np.asarray(features, dtype=np.float64)
    return Problem(
        id=pid,
        features=features,
        answer_count=answer_count or 2,
        reference_answer=reference,
        corruption=corruption if corruption is not None else Corruption(),
        **kw,
    )


def random_instance(rng, A=4, d=4, n=1, scale=1.0):
    params = rng.normal(scale=scale, size=(A, d))
    problems = [
        make_problem(rng.normal(size=d), A, int(rng.integers(A)), pid=i) for i in range(n)
    ]
    return params, problems


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        g[i] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        passed, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
