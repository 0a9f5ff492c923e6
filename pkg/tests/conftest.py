import pytest

from udlflow.classifiers import fit_classifier
from udlflow.datasets import synth
from udlflow.flows import build_flow
from udlflow.training import TrainConfig, train


@pytest.fixture(scope="session")
def moons():
    return synth("two-moons", 2000, seed=0)


@pytest.fixture(scope="session")
def trained_moons_flow(moons):
    """One short training run shared by everything downstream."""
    flow = build_flow((2,), n_blocks=5, base_kind="gamma-mixture", seed=1)
    train(flow, moons.samples, TrainConfig(max_epochs=40, batch_size=256, seed=0))
    return flow


@pytest.fixture(scope="session")
def moons_classifier(moons):
    return fit_classifier(moons.samples, moons.labels, hidden=(8, 8),
                          epochs=60, seed=0)
