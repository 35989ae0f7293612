import numpy as np
import pytest

from deephybrid.records import Archetype, ImageTile, RegionRecord, TripRecord
from deephybrid.rng import substream, subseed


def test_substream_is_reproducible_and_name_dependent():
    a = substream(5, "world").random(4)
    b = substream(5, "world").random(4)
    c = substream(5, "init").random(4)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert subseed(1, "x") == subseed(1, "x") != subseed(1, "y")


def test_archetype_validation():
    Archetype(0, 0.0, 1.0, 0.5, 0.2)
    with pytest.raises(ValueError):
        Archetype(5, 0.1, 0.1, 0.1, 0.1)
    with pytest.raises(ValueError):
        Archetype(1, 1.2, 0.1, 0.1, 0.1)


def test_region_record_shares_must_be_simplex():
    RegionRecord("r", np.zeros(3), [0.25] * 4, [0])
    with pytest.raises(ValueError):
        RegionRecord("r", np.zeros(3), [0.3] * 4, [0])
    with pytest.raises(ValueError):
        RegionRecord("r", [np.nan, 0, 0], [0.25] * 4, [0])


def test_trip_and_tile_validation():
    with pytest.raises(ValueError):
        TripRecord("t", "a", "b", np.zeros(2), np.zeros((4, 2)), 4)
    with pytest.raises(ValueError):
        ImageTile(np.full((2, 2, 3), 1.5))
