"""Shared small models for the unit tests."""
import numpy as np
import pytest

from distinfer.gauss import GaussianFactor
from distinfer.model import Measurement, ProbModel


def pairwise_model(n_vars, edges, seed=0, loading=1.5, prefix="T", noise_var=0.5):
    """Random pairwise Gaussian MRF over T1..Tn with one measurement per variable.

    Measurement ``M{i}`` observes ``T{i}`` and is owned by node i, which
    queries ``T{i}``.
    """
    rng = np.random.default_rng(seed)
    names = [f"{prefix}{i}" for i in range(1, n_vars + 1)]
    factors = []
    for a, b in edges:
        c = rng.uniform(-0.6, 0.6)
        factors.append(GaussianFactor((names[a - 1], names[b - 1]), [[1.0, c], [c, 1.0]], [0.0, 0.0]))
    for i, v in enumerate(names):
        factors.append(GaussianFactor((v,), [[loading]], [rng.normal()]))
    meas = [Measurement(f"M{i}", (v,), (1.0,), 0.0, noise_var) for i, v in enumerate(names, 1)]
    obs = {m.name: float(rng.normal(scale=2.0)) for m in meas}
    owners = {m.name: i for i, m in enumerate(meas, 1)}
    queries = {i: (v,) for i, v in enumerate(names, 1)}
    return ProbModel(tuple(names), factors, meas, obs, owners, queries)


# the graphical model behind the robust message passing walk-through:
# cliques {T1,T2,T4}, {T2,T4,T5}, {T2,T3,T5}, {T3,T5,T6}
FIG4_EDGES = [(1, 2), (1, 4), (2, 4), (2, 5), (4, 5), (2, 3), (3, 5), (3, 6), (5, 6)]


@pytest.fixture
def chain_model():
    # T1-T3, T1-T2, T2-T4
    return pairwise_model(4, [(1, 3), (1, 2), (2, 4)], seed=11)


@pytest.fixture
def fig4_model():
    return pairwise_model(6, FIG4_EDGES, seed=5, loading=2.0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record ``criterion N: PASS|FAIL detail`` for the summary section."""
    def _report(number, ok, detail):
        request.config.stash[ACCEPTANCE_LINES].append(
            f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report
