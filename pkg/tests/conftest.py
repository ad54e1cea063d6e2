import numpy as np
import pytest

from slamp import numerics
from slamp.dynamics import DenseLayer, Network, NeuronConfig

ACCEPTANCE_LINES = []


@pytest.fixture(params=numerics.available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return numerics.make_rng(1234)


@pytest.fixture
def cfg():
    return NeuronConfig(threshold=1.0, reset=0.0, timesteps=3)


def dense_net(rng, sizes, scale=1.0, dtype=np.float32):
    """Dense IF stack with a non-spiking output layer; ``sizes`` = [in, h1, ..., out]."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.uniform(-scale, scale, size=(a, b)).astype(dtype)
        layers.append(DenseLayer(w, spiking=i < len(sizes) - 2))
    return Network(layers)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
