import numpy as np
import pytest
from hypothesis import settings

from modeltransfer.models import LQRModel, SourceSet, TabularMDP

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def random_tabular(rng, S, A, discount=0.9):
    T = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(0.0, 1.0, size=(S, A))
    return TabularMDP(T, R, discount)


def random_sources(rng, S, A, m, discount=0.9):
    R = rng.uniform(0.0, 1.0, size=(S, A))
    return SourceSet(tuple(TabularMDP(rng.dirichlet(np.ones(S), size=(S, A)), R, discount) for _ in range(m)))


def scalar_lqr(mean, noise=1.0):
    return LQRModel(np.array([[0.0, mean]]), [[noise]], [[1.0]], [[1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
