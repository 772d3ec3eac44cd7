from functools import lru_cache

import numpy as np
import pytest

from tensorvi import generate_instance


@lru_cache(maxsize=None)
def instance(family: str, seed: int, n: int, mu: float = 1.0, p: int = 2):
    return generate_instance(family, seed, n, n, mu, p=p)


def smooth_set(p=2):
    return [instance("smooth", s, 10, 1.0, p) for s in range(5)]


def quadratic_set(p=2):
    return [instance("quadratic", s, 20, 1.0, p) for s in range(5)]


def brute_gap(q, z):
    """Duality gap of a quadratic from explicit best responses (independent of the library)."""
    n = q.A.shape[0]
    x, y = z[:n], z[n:]
    # g = x'Ax/2 + x'By - y'Cy/2 + a'x - c'y
    y_best = np.linalg.solve(q.C, q.B.T @ x - q.c)
    x_best = np.linalg.solve(q.A, -(q.B @ y + q.a))
    return q.value(np.concatenate([x, y_best])) - q.value(np.concatenate([x_best, y]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
