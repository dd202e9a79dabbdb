"""Grid maps, the elevation -> traversability -> cost/obstacle chain, and procedural worlds."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Any

import numpy as np

from geonav.geometry import Pose2, relative_to

SAFE_BELOW = 0.3
RAMP_END = 0.8
RISKY_COST = 2.0
OBSTACLE_ABOVE = 0.9
OBSTACLE_COST = 1e5

DEFAULT_SIZE_CELLS = 200
DEFAULT_RESOLUTION = 0.04

GM2D_MAGIC = b"GM2D"
GM2D_VERSION = 1
_HEADER = struct.Struct("<4sIIIdddd")


class GridFormatError(ValueError):
    """Raised when a GM2D file is malformed."""


@dataclass(frozen=True, eq=False)
class GridMap2D:
    """Scalar field on a regular grid. ``values[row, col]``, row = y index, col = x index.

    ``origin`` is the world pose of the lower-left corner of cell (0, 0).
    """

    values: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: Pose2 = field(default_factory=lambda: Pose2(-4.0, -4.0, 0.0))
    valid: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float32)
        v = np.array(v, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"grid values must be a non-empty 2-D array, got shape {v.shape}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.valid is None:
            m = np.ones(v.shape, dtype=bool)
        else:
            m = np.array(self.valid, dtype=bool, copy=True)
            if m.shape != v.shape:
                raise ValueError("validity mask and values must have identical dimensions")
        v.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid", m)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def height_cells(self) -> int:
        return self.values.shape[0]

    @property
    def width_cells(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def like(self, values, valid=None) -> "GridMap2D":
        return GridMap2D(values, self.resolution, self.origin, self.valid if valid is None else valid)

    def same_geometry(self, other: "GridMap2D") -> bool:
        return (
            self.shape == other.shape
            and self.resolution == other.resolution
            and self.origin == other.origin
        )

    def to_local(self, poses: np.ndarray) -> np.ndarray:
        """World (..., 3) poses -> grid-local coordinates (origin corner at 0, axis aligned)."""
        o = self.origin
        c, s = math.cos(o.theta), math.sin(o.theta)
        dx = poses[..., 0] - o.x
        dy = poses[..., 1] - o.y
        out = np.empty(np.shape(poses), dtype=float)
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        out[..., 2] = poses[..., 2] - o.theta
        return out

    def cells_of(self, poses: np.ndarray):
        """Vectorised cell lookup: returns (col, row, inside) arrays."""
        local = self.to_local(np.asarray(poses, dtype=float))
        col = np.floor(local[..., 0] / self.resolution)
        row = np.floor(local[..., 1] / self.resolution)
        inside = (col >= 0) & (col < self.width_cells) & (row >= 0) & (row < self.height_cells)
        return col.astype(np.int64), row.astype(np.int64), inside

    def cell_center(self, col: int, row: int) -> Pose2:
        from geonav.geometry import compose

        return compose(self.origin, Pose2((col + 0.5) * self.resolution, (row + 0.5) * self.resolution, 0.0))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x, y of every cell centre, each shaped like ``values``."""
        cols = (np.arange(self.width_cells) + 0.5) * self.resolution
        rows = (np.arange(self.height_cells) + 0.5) * self.resolution
        lx, ly = np.meshgrid(cols, rows)
        o = self.origin
        c, s = math.cos(o.theta), math.sin(o.theta)
        return o.x + c * lx - s * ly, o.y + s * lx + c * ly


def world_to_cell(grid: GridMap2D, p: Pose2) -> tuple[int, int] | None:
    """(col, row) of the cell containing ``p``; None when outside the half-open extent."""
    local = relative_to(grid.origin, p)
    col = math.floor(local.x / grid.resolution)
    row = math.floor(local.y / grid.resolution)
    if 0 <= col < grid.width_cells and 0 <= row < grid.height_cells:
        return col, row
    return None


def valid_fraction(grid: GridMap2D) -> float:
    return float(np.count_nonzero(grid.valid)) / grid.valid.size


def empty_grid(size: int = DEFAULT_SIZE_CELLS, resolution: float = DEFAULT_RESOLUTION,
               fill: float = 0.0) -> GridMap2D:
    """Robot-centred square grid (robot at the centre of the map)."""
    half = size * resolution / 2.0
    return GridMap2D(np.full((size, size), fill, dtype=np.float32), resolution, Pose2(-half, -half, 0.0))


# -- traversability chain -----------------------------------------------------

@dataclass(frozen=True)
class TraversabilityParams:
    slope_max: float = 0.6  # rise / run
    step_max: float = 0.25  # metres


def elevation_to_traversability(elevation: GridMap2D,
                                params: TraversabilityParams = TraversabilityParams()) -> GridMap2D:
    """Analytic traversability: t = clamp(max(slope/slope_max, step/step_max), 0, 1).

    slope is the central-difference gradient magnitude (one-sided where a
    neighbour is missing or invalid); step is the largest absolute height
    difference to any valid 8-neighbour. Invalid cells get t = 1 and stay invalid.
    """
    h, w = elevation.shape
    if h <= 2 or w <= 2:
        raise ValueError(f"grid too small for traversability estimation: {h}x{w}")
    res = elevation.resolution
    e = elevation.values.astype(np.float64)
    ok = elevation.valid
    pe = np.pad(np.where(ok, e, 0.0), 1)
    pok = np.pad(ok, 1)

    def nb(dr, dc):
        return pe[1 + dr:1 + dr + h, 1 + dc:1 + dc + w], pok[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    def axis_grad(plus, minus):
        (ep, okp), (em, okm) = plus, minus
        hi = np.where(okp, ep, e)
        lo = np.where(okm, em, e)
        span = (okp.astype(np.float64) + okm.astype(np.float64)) * res
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(span > 0, (hi - lo) / span, 0.0)

    gx = axis_grad(nb(0, 1), nb(0, -1))
    gy = axis_grad(nb(1, 0), nb(-1, 0))
    slope = np.hypot(gx, gy)

    step = np.zeros_like(e)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            en, okn = nb(dr, dc)
            step = np.maximum(step, np.where(okn, np.abs(en - e), 0.0))

    t = np.clip(np.maximum(slope / params.slope_max, step / params.step_max), 0.0, 1.0)
    t = np.where(ok, t, 1.0)
    return elevation.like(t.astype(np.float32), ok)


def _check_unit_range(trav: GridMap2D):
    v = trav.values[trav.valid]
    if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0):
        raise ValueError("traversability values must lie in [0, 1]")


def cost_of_traversability(t):
    """Piecewise cost: 0 below 0.3, linear 0 -> 2.0 on [0.3, 0.8], 2.0 up to 0.9, 1e5 above."""
    t = np.asarray(t, dtype=np.float64)
    ramp = (t - SAFE_BELOW) / (RAMP_END - SAFE_BELOW) * RISKY_COST
    return np.where(
        t < SAFE_BELOW, 0.0,
        np.where(t <= RAMP_END, ramp, np.where(t <= OBSTACLE_ABOVE, RISKY_COST, OBSTACLE_COST)),
    )


def traversability_to_cost(trav: GridMap2D) -> GridMap2D:
    """Map traversability to traversal cost; invalid cells cost as obstacles."""
    _check_unit_range(trav)
    cost = cost_of_traversability(trav.values)
    cost = np.where(trav.valid, cost, OBSTACLE_COST)
    return trav.like(cost.astype(trav.values.dtype))


def threshold_obstacles(trav: GridMap2D) -> GridMap2D:
    """Binary obstacle grid: 1 where t > 0.9 or the cell is invalid."""
    _check_unit_range(trav)
    obst = (trav.values.astype(np.float64) > OBSTACLE_ABOVE) | ~trav.valid
    return trav.like(obst.astype(trav.values.dtype))


@dataclass(frozen=True)
class Footprint:
    """Planar robot rectangle, dilated by ``safety_margin`` for cost and collision queries."""

    half_length: float = 0.40
    half_width: float = 0.25
    safety_margin: float = 0.05

    def __post_init__(self):
        if min(self.half_length, self.half_width) <= 0:
            raise ValueError("footprint dimensions must be positive")
        if self.safety_margin < 0:
            raise ValueError("safety_margin must be >= 0")

    @property
    def extents(self) -> tuple[float, float]:
        return self.half_length + self.safety_margin, self.half_width + self.safety_margin

    @property
    def body(self) -> "Footprint":
        """The bare rectangle, without the safety margin."""
        return replace(self, safety_margin=0.0)


# -- scenes ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WorldScene:
    elevation: GridMap2D
    traversability: GridMap2D
    cost: GridMap2D
    obstacles: GridMap2D
    generator_seed: int = 0
    spec_name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        e = self.elevation
        for g in (self.traversability, self.cost, self.obstacles):
            if not e.same_geometry(g):
                raise ValueError("all scene layers must share geometry")

    @classmethod
    def from_elevation(cls, elevation: GridMap2D, trav_params: TraversabilityParams = TraversabilityParams(),
                       seed: int = 0, spec_name: str = "custom", params: dict | None = None) -> "WorldScene":
        trav = elevation_to_traversability(elevation, trav_params)
        return cls(elevation, trav, traversability_to_cost(trav), threshold_obstacles(trav),
                   seed, spec_name, dict(params or {}))

    @classmethod
    def from_traversability(cls, trav: GridMap2D, seed: int = 0, spec_name: str = "custom") -> "WorldScene":
        """Build a scene from a precomputed traversability grid (e.g. a learned estimator)."""
        elev = trav.like(np.zeros(trav.shape, dtype=np.float32))
        return cls(elev, trav, traversability_to_cost(trav), threshold_obstacles(trav), seed, spec_name, {})

    def with_region(self, region, action: str, height: float | None = None,
                    trav_params: TraversabilityParams = TraversabilityParams()) -> "WorldScene":
        """Copy of the scene with an axis-aligned world region raised ("add") or flattened ("remove")."""
        if action not in ("add", "remove"):
            raise ValueError(f"unknown region action {action!r}")
        xmin, ymin, xmax, ymax = region
        wx, wy = self.elevation.cell_centers()
        inside = (wx >= xmin) & (wx <= xmax) & (wy >= ymin) & (wy <= ymax)
        elev = self.elevation.values.astype(np.float64).copy()
        if action == "add":
            h = 4.0 * trav_params.step_max if height is None else height
            elev[inside] = np.maximum(elev[inside], h)
        else:
            elev[inside] = 0.0 if height is None else height
        grid = self.elevation.like(elev.astype(np.float32))
        return WorldScene.from_elevation(grid, trav_params, self.generator_seed, self.spec_name, self.params)


# -- procedural worlds ------------------------------------------------------------

WORLD_SPECS = ("empty", "corridor", "random_obstacles", "box_room", "stairs")

_SPEC_DEFAULTS: dict[str, dict[str, Any]] = {
    "empty": {},
    "corridor": {"width": 1.2, "x_min": None, "x_max": None, "wall_thickness": 0.2},
    "random_obstacles": {"count": 10, "radius_range": (0.2, 0.5), "keepout": 1.0},
    "box_room": {"door_width": 1.0, "size": 3.0, "center_x": 0.0, "center_y": 0.0, "wall_thickness": 0.2},
    "stairs": {"step_height": 0.15, "step_depth": 0.4, "start_x": 1.0, "n_steps": 5},
}
_COMMON_DEFAULTS: dict[str, Any] = {
    "size_cells": DEFAULT_SIZE_CELLS,
    "resolution": DEFAULT_RESOLUTION,
    "obstacle_height": None,  # None -> 4 * step_max
    "invalid_fraction": 0.0,
}


@dataclass(frozen=True)
class WorldSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _SPEC_DEFAULTS:
            raise ValueError(f"unknown world spec {self.name!r}; valid specs: {', '.join(WORLD_SPECS)}")
        allowed = set(_SPEC_DEFAULTS[self.name]) | set(_COMMON_DEFAULTS)
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.name}: {sorted(unknown)}")

    def resolved(self) -> dict:
        out = dict(_COMMON_DEFAULTS)
        out.update(_SPEC_DEFAULTS[self.name])
        out.update(self.params)
        return out


def _inside_box(wx, wy, xmin, ymin, xmax, ymax):
    return (wx >= xmin) & (wx < xmax) & (wy >= ymin) & (wy < ymax)


def generate_world(spec: WorldSpec, seed: int = 0,
                   trav_params: TraversabilityParams = TraversabilityParams()) -> WorldScene:
    """Deterministic procedural scene. Obstacles are tall elevation features."""
    if isinstance(spec, str):
        spec = WorldSpec(spec)
    p = spec.resolved()
    rng = np.random.default_rng(seed)
    grid = empty_grid(int(p["size_cells"]), float(p["resolution"]))
    wx, wy = grid.cell_centers()
    half = grid.width_cells * grid.resolution / 2.0
    tall = 4.0 * trav_params.step_max if p["obstacle_height"] is None else float(p["obstacle_height"])
    elev = np.zeros(grid.shape)

    if spec.name == "corridor":
        w2 = p["width"] / 2.0
        th = p["wall_thickness"]
        x0 = -half if p["x_min"] is None else p["x_min"]
        x1 = half if p["x_max"] is None else p["x_max"]
        along = (wx >= x0) & (wx < x1)
        walls = along & (((wy >= w2) & (wy < w2 + th)) | ((wy < -w2) & (wy >= -w2 - th)))
        elev[walls] = tall
    elif spec.name == "random_obstacles":
        rmin, rmax = p["radius_range"]
        placed = 0
        attempts = 0
        while placed < int(p["count"]) and attempts < 1000 * max(1, int(p["count"])):
            attempts += 1
            r = rng.uniform(rmin, rmax)
            cx, cy = rng.uniform(-half, half, size=2)
            if math.hypot(cx, cy) < p["keepout"] + r:
                continue
            elev[(wx - cx) ** 2 + (wy - cy) ** 2 <= r * r] = tall
            placed += 1
    elif spec.name == "box_room":
        s2 = p["size"] / 2.0
        th = p["wall_thickness"]
        cx, cy = p["center_x"], p["center_y"]
        outer = _inside_box(wx, wy, cx - s2 - th, cy - s2 - th, cx + s2 + th, cy + s2 + th)
        inner = _inside_box(wx, wy, cx - s2, cy - s2, cx + s2, cy + s2)
        wall = outer & ~inner
        dw = p["door_width"] / 2.0
        if dw > 0:
            door = (wx >= cx + s2) & (np.abs(wy - cy) < dw)
            wall &= ~door
        elev[wall] = tall
    elif spec.name == "stairs":
        for k in range(int(p["n_steps"])):
            x_k = p["start_x"] + k * p["step_depth"]
            elev[wx >= x_k] = (k + 1) * p["step_height"]

    valid = np.ones(grid.shape, dtype=bool)
    if p["invalid_fraction"] > 0:
        valid = rng.random(grid.shape) >= p["invalid_fraction"]
    elevation = grid.like(elev.astype(np.float32), valid)
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in p.items()}
    return WorldScene.from_elevation(elevation, trav_params, seed, spec.name, params)


# -- GM2D serialisation ---------------------------------------------------------

def grid_to_bytes(grid: GridMap2D) -> bytes:
    o = grid.origin
    head = _HEADER.pack(GM2D_MAGIC, GM2D_VERSION, grid.width_cells, grid.height_cells,
                        grid.resolution, o.x, o.y, o.theta)
    vals = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    flags = np.ascontiguousarray(grid.valid, dtype=np.uint8).tobytes()
    return head + vals + flags


def grid_from_bytes(data: bytes) -> GridMap2D:
    if len(data) < _HEADER.size:
        raise GridFormatError("truncated GM2D header")
    magic, version, w, h, res, ox, oy, oth = _HEADER.unpack_from(data, 0)
    if magic != GM2D_MAGIC:
        raise GridFormatError(f"bad magic {magic!r}")
    if version != GM2D_VERSION:
        raise GridFormatError(f"unsupported GM2D version {version}")
    n = w * h
    expected = _HEADER.size + 4 * n + n
    if len(data) != expected or n == 0:
        raise GridFormatError(f"GM2D size mismatch: expected {expected} bytes, got {len(data)}")
    off = _HEADER.size
    vals = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(h, w).astype(np.float32)
    flags = np.frombuffer(data, dtype=np.uint8, count=n, offset=off + 4 * n).reshape(h, w)
    if np.any(flags > 1):
        raise GridFormatError("validity flags must be 0 or 1")
    return GridMap2D(vals, res, Pose2(ox, oy, oth), flags.astype(bool))


def write_grid(path, grid: GridMap2D) -> None:
    FsPath(path).write_bytes(grid_to_bytes(grid))


def read_grid(path) -> GridMap2D:
    path = FsPath(path)
    try:
        return grid_from_bytes(path.read_bytes())
    except GridFormatError as exc:
        raise GridFormatError(f"{path}: {exc}") from None


SCENE_LAYERS = ("elevation", "traversability", "cost", "obstacles")


def save_scene(scene: WorldScene, directory) -> FsPath:
    import tomli_w

    d = FsPath(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in SCENE_LAYERS:
        write_grid(d / f"{name}.gm2d", getattr(scene, name))
    meta = {"spec_name": scene.spec_name, "seed": int(scene.generator_seed),
            "params": {k: v for k, v in scene.params.items() if v is not None}}
    (d / "meta.toml").write_text(tomli_w.dumps(meta))
    return d


def load_scene(directory) -> WorldScene:
    from geonav._toml import loads as toml_loads

    d = FsPath(directory)
    layers = {name: read_grid(d / f"{name}.gm2d") for name in SCENE_LAYERS}
    meta_path = d / "meta.toml"
    meta = toml_loads(meta_path.read_text()) if meta_path.exists() else {}
    return WorldScene(**layers, generator_seed=int(meta.get("seed", 0)),
                      spec_name=meta.get("spec_name", "custom"), params=meta.get("params", {}))
