import numpy as np
import pytest

from headwayctl.config import desk_scenario, single_lane_scenario


@pytest.fixture
def cfg_single():
    return single_lane_scenario()


@pytest.fixture
def cfg_desk():
    return desk_scenario()


def records_equal(a, b) -> bool:
    """Bitwise equality of two episode records."""
    if a.fingerprint() != b.fingerprint():
        return False
    arrays = ("rewards", "mean_speed", "density", "commands", "queue_len",
              "active_count", "exited_cum", "min_gap", "merges")
    return all(np.array_equal(getattr(a, n), getattr(b, n)) for n in arrays)
