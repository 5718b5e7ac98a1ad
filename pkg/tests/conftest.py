import numpy as np
import pytest
from hypothesis import settings

from optsub.dataset import Dataset

# fixed example sequences keep every run of the suite identical
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def make_data(family: str, n: int, d: int, rng: np.random.Generator, scale: float = 0.5) -> tuple[Dataset, np.ndarray]:
    """Random data from ``family`` with an intercept column; returns (data, theta_true)."""
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, d - 1))])
    theta = rng.uniform(-scale, scale, d)
    eta = X @ theta
    k = None
    if family == "ols":
        y = eta + rng.standard_normal(n)
    elif family == "logistic":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    elif family == "binomial":
        k = rng.integers(1, 6, n).astype(float)
        y = rng.binomial(k.astype(int), 1 / (1 + np.exp(-eta))).astype(float)
    elif family == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    elif family == "gamma":
        # canonical eta = -1/mu must be negative: shift the intercept
        theta[0] = -2.0
        theta[1:] *= 0.2
        eta = X @ theta
        y = rng.gamma(5.0, (-1.0 / eta) / 5.0)
    else:
        raise ValueError(family)
    return Dataset(X, y, k), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
