"""ASCII rendering of obstacle grids with paths, for terminal summaries."""
from __future__ import annotations

import numpy as np

from geonav.geometry import Pose2
from geonav.worldmodel import GridMap2D


def render_ascii(obstacles: GridMap2D, paths=(), start: Pose2 | None = None, goal: Pose2 | None = None,
                 columns: int = 80) -> str:
    """Downsampled top-down view: '#' obstacle, '.'/'o'/'+' paths, 'S' start, 'G' goal. +y is up."""
    h, w = obstacles.shape
    step = max(1, int(np.ceil(w / columns)))
    rows, cols = int(np.ceil(h / step)), int(np.ceil(w / step))
    canvas = np.full((rows, cols), " ", dtype="<U1")
    occ = obstacles.values > 0
    for r in range(rows):
        for c in range(cols):
            if occ[r * step:(r + 1) * step, c * step:(c + 1) * step].any():
                canvas[r, c] = "#"
    marks = ".o+*"

    def put(poses, ch):
        col, row, inside = obstacles.cells_of(np.atleast_2d(poses))
        for cc, rr, ok in zip(col.ravel(), row.ravel(), inside.ravel()):
            if ok:
                canvas[rr // step, cc // step] = ch

    for i, p in enumerate(paths):
        poses = p.poses if hasattr(p, "poses") else np.asarray(p)
        put(poses, marks[i % len(marks)])
    if start is not None:
        put(start.as_array(), "S")
    if goal is not None:
        put(goal.as_array(), "G")
    return "\n".join("".join(line) for line in canvas[::-1])
