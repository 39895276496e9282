import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cav_energy.corridor import SafetyParams, build_corridor  # noqa: E402
from cav_energy.vd import Limits  # noqa: E402


@pytest.fixture
def corridor():
    return build_corridor()


@pytest.fixture
def safety():
    return SafetyParams(gamma=2.0, rho=1.2)


@pytest.fixture
def limits():
    return Limits(u_min=-3.0, u_max=1.5, v_min=1.0, v_max=17.8816)
