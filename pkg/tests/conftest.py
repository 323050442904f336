from fractions import Fraction

import numpy as np
import pytest

from bellbounds.lmo import BellFunctional
from bellbounds.quantum import (
    QuantumSetup,
    auto_scenario,
    chsh_bloch_vectors,
    ghz,
    polygon_bloch_vectors,
    quantum_tensor,
    setup_from_vectors,
    singlet,
)
from bellbounds.tensor import Scenario


@pytest.fixture(autouse=True)
def app_home(tmp_path, monkeypatch):
    """Keep config and log files out of the real home directory."""
    home = tmp_path / "home"
    monkeypatch.setenv("BELLBOUNDS_HOME", str(home))
    monkeypatch.delenv("BELLBOUNDS_THREADS", raising=False)
    return home


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def chsh_setup():
    alice, bob = chsh_bloch_vectors()
    return QuantumSetup(singlet(), (tuple(alice), tuple(bob)))


@pytest.fixture
def chsh_tensor(chsh_setup):
    return quantum_tensor(chsh_setup, auto_scenario(chsh_setup), exact=True)


@pytest.fixture
def chsh_functional():
    """Integer CHSH functional matching the sign pattern of the singlet settings."""
    sc = Scenario(2, 2, marginals=False)
    return BellFunctional(sc, -np.array([[1, 1], [1, -1]], dtype=np.int64))


@pytest.fixture
def mermin_setup():
    return setup_from_vectors(ghz(3), polygon_bloch_vectors(2, tol=1e-9))


@pytest.fixture
def mermin_tensor(mermin_setup):
    return quantum_tensor(mermin_setup, auto_scenario(mermin_setup), exact=True)


@pytest.fixture
def mermin_functional():
    sc = Scenario(3, 2, marginals=False)
    entries = np.zeros(sc.shape, dtype=np.int64)
    entries[0, 0, 0] = 1
    entries[0, 1, 1] = entries[1, 0, 1] = entries[1, 1, 0] = -1
    return BellFunctional(sc, entries)


@pytest.fixture
def rational_vector(rng):
    """Factory for random exact vectors with entries k / denominator in [-1, 1]."""

    def make(size, denominator=64):
        out = np.empty(size, dtype=object)
        out[:] = [Fraction(int(k), denominator) for k in rng.integers(-denominator, denominator + 1, size=size)]
        return out

    return make
