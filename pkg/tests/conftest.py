import numpy as np
import pytest

from ppci.estimators import LabeledSample, UnlabeledSample


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_samples(rng, n=40, N=60, d=2, noise=0.5):
    x = rng.uniform(size=(n, d))
    y = np.sin(3 * x[:, 0]) + noise * rng.standard_normal(n)
    f = y + 0.3 * rng.standard_normal(n)
    xt = rng.uniform(size=(N, d))
    ft = np.sin(3 * xt[:, 0]) + 0.3 * rng.standard_normal(N)
    return LabeledSample(x, y, f), UnlabeledSample(xt, ft)


@pytest.fixture(name="make_samples")
def make_samples_fixture(rng):
    def build(**kw):
        return make_samples(rng, **kw)

    return build


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
