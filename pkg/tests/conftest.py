import numpy as np
import pytest

from mbreact.pes import PesModel, muller_brown


class HarmonicWell:
    """Isotropic V = k r^2 / 2 about ``center``; quacks like a PesModel."""

    def __init__(self, k, center=(0.0, 0.0)):
        self.k = k
        self.center = center

    def energy(self, x, y):
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        return 0.5 * self.k * (dx * dx + dy * dy)

    def gradient(self, x, y):
        return self.k * (np.asarray(x) - self.center[0]), self.k * (np.asarray(y) - self.center[1])


@pytest.fixture(scope="session")
def mb():
    return muller_brown()


@pytest.fixture(scope="session")
def free():
    return PesModel(terms=())


@pytest.fixture
def harmonic():
    return HarmonicWell
