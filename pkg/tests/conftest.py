import numpy as np
import pytest

from causalfuzz.capabilities import capset
from causalfuzz.miniswat import load_miniswat
from causalfuzz.plant import make_control_state, make_physical_state


@pytest.fixture(scope="session")
def model():
    return load_miniswat()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def nominal(model):
    """Control and physical state with every tank at 600 mm."""
    return make_control_state(model), make_physical_state(model, [600.0, 600.0, 600.0])


# abstract capabilities used by the language-level tests
P1, P2, P3 = capset(("p1", "on")), capset(("p2", "on")), capset(("p3", "on"))
P12 = P1 | P2
