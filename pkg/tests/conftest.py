import numpy as np
import pytest

from ddnm_avs.data import SeriesPanel
from ddnm_avs.models import CandidatePool


def regression_data(T=100, p=3, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(T), rng.normal(size=(T, p - 1))])
    beta = rng.normal(size=p)
    y = X @ beta + noise * rng.normal(size=T)
    return X, y


def exog_panel(T=80, n_exog=2, seed=0, noise=0.4):
    """One series driven by ``n_exog`` exogenous columns named ``x1, x2, ...``."""
    rng = np.random.default_rng(seed)
    xs = {f"x{i + 1}": rng.normal(size=T) for i in range(n_exog)}
    coefs = np.linspace(1.0, 0.0, n_exog, endpoint=False)
    y = 0.3 + sum(c * x for c, x in zip(coefs, xs.values())) + noise * rng.normal(size=T)
    return SeriesPanel(("y",), tuple(range(T)), y[:, None], xs)


def triangle_panel(T=90, m=3, seed=0):
    """``m`` series with lag-1 dynamics and contemporaneous links to later series."""
    rng = np.random.default_rng(seed)
    y = np.zeros((T, m))
    for t in range(1, T):
        for j in reversed(range(m)):
            y[t, j] = 0.5 * y[t - 1, j] + 0.2 + rng.normal(scale=0.5)
            if j + 1 < m:
                y[t, j] += 0.6 * y[t, j + 1]
    return SeriesPanel(tuple(f"s{j}" for j in range(m)), tuple(range(T)), y)


@pytest.fixture
def small_exog_panel():
    return exog_panel()


@pytest.fixture
def tri_panel():
    return triangle_panel()


@pytest.fixture
def tri_pools():
    return [CandidatePool.build(j, 3, lags=[1]) for j in range(3)]


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
