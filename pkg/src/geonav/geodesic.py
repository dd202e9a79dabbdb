"""Geodesic distance fields over binary obstacle grids."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from geonav import _backend
from geonav.geometry import Pose2
from geonav.worldmodel import GridMap2D, world_to_cell


class InfeasibleGoalError(ValueError):
    """The goal lies outside the map or on an obstacle cell."""


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-cell shortest free-space distance (metres) to ``goal_cell``; +inf where unreachable."""

    grid: GridMap2D
    goal_cell: tuple[int, int]  # (col, row)

    @property
    def values(self) -> np.ndarray:
        return self.grid.values

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.grid.values)


def free_mask(obstacles: GridMap2D) -> np.ndarray:
    return obstacles.values == 0


def field_to_cell(obstacles: GridMap2D, col: int, row: int) -> DistanceField:
    free = free_mask(obstacles)
    if not free[row, col]:
        raise InfeasibleGoalError(f"goal cell ({col}, {row}) is an obstacle")
    dist = _backend.geodesic_field(free, row, col, obstacles.resolution)
    return DistanceField(obstacles.like(dist.astype(np.float64), np.ones(obstacles.shape, bool)), (col, row))


def compute_gdf(obstacles: GridMap2D, goal: Pose2) -> DistanceField:
    """Exact shortest-path distances on the 8-connected free-cell graph.

    Edge weights are resolution and resolution * sqrt(2); diagonal moves are
    forbidden when both orthogonal cells they pass are obstacles.
    """
    cell = world_to_cell(obstacles, goal)
    if cell is None:
        raise InfeasibleGoalError(f"goal ({goal.x:.3f}, {goal.y:.3f}) is outside the map")
    return field_to_cell(obstacles, *cell)


def query_distance(field: DistanceField, p: Pose2) -> float:
    cell = world_to_cell(field.grid, p)
    if cell is None:
        return math.inf
    return float(field.grid.values[cell[1], cell[0]])


def query_distances(field: DistanceField, poses: np.ndarray) -> np.ndarray:
    """Vectorised :func:`query_distance` over (..., 3) poses."""
    col, row, inside = field.grid.cells_of(poses)
    h, w = field.grid.shape
    d = field.grid.values[np.clip(row, 0, h - 1), np.clip(col, 0, w - 1)]
    return np.where(inside, d, np.inf)


def nearest_free_cell(obstacles: GridMap2D, target: Pose2, allowed: np.ndarray | None = None):
    """Cell (col, row) closest in Euclidean distance to ``target`` among free (and allowed) cells.

    Returns None when no candidate exists. Ties resolve to the lowest row-major index.
    """
    cand = free_mask(obstacles)
    if allowed is not None:
        cand = cand & allowed
    if not cand.any():
        return None
    wx, wy = obstacles.cell_centers()
    d2 = np.where(cand, (wx - target.x) ** 2 + (wy - target.y) ** 2, np.inf)
    k = int(np.argmin(d2))
    row, col = divmod(k, obstacles.width_cells)
    return col, row
