import numpy as np
import pytest

from rtesnn.data import synth_blobs
from rtesnn.snn import LifConfig, SnnModel
from rtesnn.training import TrainConfig, train

ACCEPTANCE_RESULTS = []


@pytest.fixture
def small_model():
    return SnnModel.init([2, 8, 8, 3], LifConfig(0.5, 0.5, 4), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    return synth_blobs(600, n_classes=2, dim=2, spread=0.08, seed=0)


@pytest.fixture(scope="session")
def trained_model(blobs):
    """A briefly RTE-trained 2-32-32-2 net; attacks on it have a usable gradient signal."""
    model = SnnModel.init([2, 32, 32, 2], LifConfig(0.5, 0.5, 4), seed=0)
    train(model, blobs, TrainConfig(epochs=10, seed=0, method="rte"))
    return model


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
