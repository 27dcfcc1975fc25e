import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def unit_circle(m=10_000):
    t = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def unit_sphere(m=200_000, seed=0):
    g = np.random.default_rng(seed).normal(size=(m, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
