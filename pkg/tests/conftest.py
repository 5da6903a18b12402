import numpy as np
import pytest

from wsgp.panel import forward_returns
from wsgp.synth import PlantSpec, synth_panel

PLANT = "rank(ts_corr(close,volume,10))"


@pytest.fixture(scope="session")
def planted_panel():
    rng = np.random.default_rng(11)
    return synth_panel(rng, 250, 100, PlantSpec(PLANT, 0.3))


@pytest.fixture(scope="session")
def planted_fwd(planted_panel):
    return forward_returns(planted_panel, 5)


@pytest.fixture(scope="session")
def small_panel():
    return synth_panel(np.random.default_rng(5), 60, 30)
