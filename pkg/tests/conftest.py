import numpy as np
import pytest

from paleowind import windsim
from paleowind.terrain import ObstacleField


@pytest.fixture
def grid():
    return windsim.GridSpec()


@pytest.fixture
def small_grid():
    return windsim.GridSpec(nx=48, ny=32)


@pytest.fixture
def empty_obs(grid):
    return ObstacleField.empty(grid.nx, grid.ny)


def make_block_obstacles(grid, x0, x1, y0, y1, drag=None):
    """Rectangular solid block; optionally a drag patch instead."""
    blockage = np.zeros((grid.ny, grid.nx))
    drag_arr = np.zeros((grid.ny, grid.nx))
    if drag is None:
        blockage[y0:y1, x0:x1] = 1.0
    else:
        drag_arr[y0:y1, x0:x1] = drag
    return ObstacleField(blockage, drag_arr)
