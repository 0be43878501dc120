import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from btsot.bt.core import ACTION, FALLBACK, PARALLEL, SEQUENCE, BTNode  # noqa: E402
from btsot.robot import load_default_model  # noqa: E402

KIND = {"seq": SEQUENCE, "fallback": FALLBACK, "parallel": PARALLEL}


def to_btnode(spec, path=()):
    """Oracle tuple tree -> engine tree; leaves become scripted actions."""
    nid = "n" + "".join(f".{i}" for i in path)
    if spec[0] == "leaf":
        return BTNode(spec[1], ACTION, [], spec[1])
    kids = [to_btnode(c, path + (i,)) for i, c in enumerate(spec[-1])]
    m = spec[1] if spec[0] == "parallel" else None
    return BTNode(nid, KIND[spec[0]], kids, None, m)


@pytest.fixture(scope="session")
def model():
    return load_default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_scenario():
    from btsot.scenario import load_scenario
    return load_scenario()


@pytest.fixture(scope="session")
def default_run(default_scenario):
    """One full run of the shipped scenario, shared by the slow tests."""
    import time

    from btsot.sim import Simulation
    t0 = time.perf_counter()
    sim = Simulation(default_scenario)
    result = sim.run(120.0)
    result.wall_time = time.perf_counter() - t0
    return sim, result
