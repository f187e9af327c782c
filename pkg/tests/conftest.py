import math

import pytest
from hypothesis import HealthCheck, settings

from vpdroop.droop import DroopParams
from vpdroop.net_model import InverterElectrical, LoadModel, MicrogridConfig

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

E0 = 120 * math.sqrt(2)
W0 = 2 * math.pi * 60


@pytest.fixture
def table_pair():
    """Two prototype inverters on the mismatched-line R-L load."""
    return MicrogridConfig((InverterElectrical(), InverterElectrical()),
                           LoadModel("series-rl", 11.52, 0.02293), E0,
                           droop=(DroopParams(2e-4, 600, E0),) * 2)


@pytest.fixture
def resistive_pair():
    return MicrogridConfig((InverterElectrical(), InverterElectrical()), LoadModel("resistive", 24.0), E0,
                           droop=(DroopParams(2e-4, 560, E0), DroopParams(2e-4, 310, E0)))
