"""Shared random-instance generators for property and acceptance tests."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from optqueue.process import PrimitiveProcess


def random_regular_process(rng: np.random.Generator, k_max: int) -> PrimitiveProcess:
    """Process-regular instance: nonincreasing service increments and
    arrival increments bounded by them."""
    inc = np.sort(rng.uniform(0.0, 2.0, k_max))[::-1]
    inc[0] = max(inc[0], 0.05)
    if rng.random() < 0.3:
        # Saturating service: flat after a random number of servers.
        c = rng.integers(1, k_max + 1)
        inc[c:] = 0.0
    mu = np.concatenate([[0.0], np.cumsum(inc)])
    lam = np.empty(k_max + 1)
    lam[0] = rng.uniform(0.1, 3.0)
    for k in range(1, k_max + 1):
        step = inc[k - 1] - rng.uniform(0.0, 1.5) if k >= 2 else rng.uniform(-1.0, 1.0)
        lam[k] = max(0.0, lam[k - 1] + step)
    return PrimitiveProcess(lam, mu)


def random_mu(rng: np.random.Generator, k_max: int) -> list[float]:
    """Nondecreasing bounded sequence with mu[0] = 0; regular about half the time."""
    if rng.random() < 0.5:
        inc = np.sort(rng.integers(0, 5, k_max))[::-1].astype(float)
        inc[0] = max(inc[0], 1.0)
    else:
        inc = rng.integers(0, 5, k_max).astype(float)
        inc[0] = max(inc[0], 1.0)
    return [0.0, *np.cumsum(inc).tolist()]


@st.composite
def regular_processes(draw, max_k: int = 8, min_k: int = 1) -> PrimitiveProcess:
    k_max = draw(st.integers(min_k, max_k))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_regular_process(np.random.default_rng(seed), k_max)


@pytest.fixture
def mm1():
    from optqueue.process import make_mmc

    return make_mmc(1.0, 1.0, 1, 2)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
