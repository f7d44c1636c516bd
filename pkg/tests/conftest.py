import numpy as np
import pytest

from ckmap.scene import BuildingBox, Scene, default_band_plan


@pytest.fixture
def wall_scene():
    # one tall slab whose west facade is the plane x = 10
    wall = BuildingBox.from_footprint((10.0, -50.0), (20.0, 50.0), 100.0)
    return Scene(buildings=(wall,), bounds=(-60.0, -60.0, 60.0, 60.0), carrier_hz=28e9)


@pytest.fixture
def block_scene():
    box = BuildingBox.from_footprint((40.0, 40.0), (60.0, 60.0), 30.0)
    return Scene(buildings=(box,), bounds=(0.0, 0.0, 100.0, 100.0), carrier_hz=2.4e9,
                 band_plan=default_band_plan(2.4e9, 4), bs_location=(50.0, 5.0, 10.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
