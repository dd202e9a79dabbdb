"""MPPI over SE(2) velocity command sequences on traversability grid maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from geonav import _backend
from geonav.geodesic import (
    DistanceField,
    InfeasibleGoalError,
    compute_gdf,
    field_to_cell,
    nearest_free_cell,
    query_distance,
    query_distances,
)
from geonav.geometry import (
    CommandSequence,
    Path,
    Pose2,
    VelocityLimits,
    rollout,
    rollout_batch,
    wrap_angle,
)
from geonav.worldmodel import OBSTACLE_COST, Footprint, GridMap2D, WorldScene, world_to_cell



@dataclass(frozen=True)
class MppiConfig:
    horizon_steps: int = 50
    dt: float = 0.1
    population_size: int = 1024
    iterations: int = 24
    temperature: float = 3.0
    noise_std: tuple[float, float, float] = (0.4, 0.25, 0.5)
    w_trav: float = 1.0
    w_goal: float = 1.0
    w_effort: float = 0.05
    w_lin: float = 1.0
    w_lat: float = 2.0
    w_ang: float = 0.5
    goal_align_radius: float = 0.5
    # AR(1) coefficient of the sampling noise along the horizon
    noise_correlation: float = 0.9
    # per-iteration multiplier on noise_std
    noise_decay: float = 1.0
    # after the last iteration, also try halting the best sequence at every step
    stop_search: bool = True
    limits: VelocityLimits = field(default_factory=VelocityLimits)
    seed: int = 0

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        weights = (self.w_trav, self.w_goal, self.w_effort, self.w_lin, self.w_lat, self.w_ang)
        if min(weights) < 0:
            raise ValueError("cost weights must be non-negative")
        if not 0.0 <= self.noise_correlation < 1.0:
            raise ValueError("noise_correlation must be in [0, 1)")
        if not self.noise_decay > 0:
            raise ValueError("noise_decay must be > 0")
        if self.goal_align_radius < 0:
            raise ValueError("goal_align_radius must be >= 0")
        if len(self.noise_std) != 3 or min(self.noise_std) < 0:
            raise ValueError("noise_std needs three non-negative entries")
        object.__setattr__(self, "noise_std", tuple(float(s) for s in self.noise_std))


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    trav: float
    goal: float
    effort: float


@dataclass(frozen=True, eq=False)
class PlanResult:
    path: Path
    commands: CommandSequence
    cost: CostBreakdown
    collided: bool
    final_geodesic_distance: float
    iterations_run: int
    best_effort: bool = False
    target: Pose2 | None = None
    cost_history: tuple[float, ...] = ()

    @property
    def cost_total(self) -> float:
        return self.cost.total


# -- cost terms -------------------------------------------------------------------

def _footprint_sums(poses: np.ndarray, grid: GridMap2D, prefix: np.ndarray, footprint: Footprint,
                    out_value: float) -> np.ndarray:
    local = grid.to_local(poses)
    hx, hy = footprint.extents
    sums = _backend.footprint_sum(local[..., 0], local[..., 1], local[..., 2], prefix,
                                  grid.resolution, hx, hy, out_value)
    return sums.reshape(poses.shape[:-1])


def _trav_costs(poses, cost_map, prefix, footprint) -> np.ndarray:
    return _footprint_sums(poses, cost_map, prefix, footprint, OBSTACLE_COST).sum(axis=-1)


def _goal_costs(poses, dist_field, goal, align_radius) -> np.ndarray:
    d = query_distances(dist_field, poses)
    heading = np.abs(wrap_angle(goal.theta - poses[..., 2]))
    near = np.where(d <= align_radius, heading, 0.0)
    return d.sum(axis=-1) + near.sum(axis=-1)


def _effort_costs(cmds, w_lin, w_lat, w_ang) -> np.ndarray:
    a = np.abs(cmds)
    return (w_lin * a[..., 0] + w_lat * a[..., 1] + w_ang * a[..., 2]).sum(axis=-1)


def cost_traversability(path: Path, cost_map: GridMap2D, footprint: Footprint = Footprint()) -> float:
    """Sum over waypoints of the cost cells covered by the dilated footprint.

    Footprint cells outside the map count as obstacles.
    """
    prefix = _backend.row_prefix(cost_map.values)
    return float(_trav_costs(path.poses[None], cost_map, prefix, footprint)[0])


def cost_goal(path: Path, dist_field: DistanceField, goal: Pose2, align_radius: float = 0.5) -> float:
    """Sum of waypoint geodesic distances plus heading error for waypoints within ``align_radius``."""
    return float(_goal_costs(path.poses[None], dist_field, goal, align_radius)[0])


def cost_effort(cmds: CommandSequence, w_lin: float = 1.0, w_lat: float = 2.0, w_ang: float = 0.5) -> float:
    return float(_effort_costs(cmds.commands[None], w_lin, w_lat, w_ang)[0])


def _weighted(w: float, term):
    # a zero weight silences the term even when it is infinite
    if w == 0:
        return np.zeros_like(term) if isinstance(term, np.ndarray) else 0.0
    return w * term


class _Evaluator:
    """Batch cost evaluation against a fixed scene and distance field."""

    def __init__(self, scene: WorldScene, dist_field: DistanceField, goal: Pose2,
                 config: MppiConfig, footprint: Footprint):
        self.scene = scene
        self.field = dist_field
        self.goal = goal
        self.cfg = config
        self.footprint = footprint
        self.prefix = _backend.row_prefix(scene.cost.values)

    def __call__(self, start: Pose2, cmds: np.ndarray):
        cfg = self.cfg
        poses = rollout_batch(start, cmds, cfg.dt)
        trav = _trav_costs(poses, self.scene.cost, self.prefix, self.footprint)
        goal = _goal_costs(poses, self.field, self.goal, cfg.goal_align_radius)
        effort = _effort_costs(cmds, cfg.w_lin, cfg.w_lat, cfg.w_ang)
        total = _weighted(cfg.w_trav, trav) + _weighted(cfg.w_goal, goal) + _weighted(cfg.w_effort, effort)
        return total, trav, goal, effort


def total_cost(start: Pose2, cmds: CommandSequence, scene: WorldScene, dist_field: DistanceField,
               goal: Pose2, config: MppiConfig = MppiConfig(), footprint: Footprint = Footprint()) -> CostBreakdown:
    """Weighted sum w_trav*C_trav + w_goal*C_goal + w_effort*C_effort of one command sequence."""
    if cmds.dt != config.dt:
        config = replace(config, dt=cmds.dt)
    total, trav, goal_c, effort = _Evaluator(scene, dist_field, goal, config, footprint)(start, cmds.commands[None])
    return CostBreakdown(float(total[0]), float(trav[0]), float(goal_c[0]), float(effort[0]))


def mppi_update(costs, cmds, temperature: float, prev_mean=None) -> np.ndarray:
    """Importance-weighted mean w_k = exp(-(J_k - min J) / lambda), normalised.

    Returns ``prev_mean`` unchanged when no population member has a finite cost.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    costs = np.asarray(costs, dtype=float)
    cmds = np.asarray(cmds, dtype=float)
    if costs.shape[0] != cmds.shape[0]:
        raise ValueError("population costs and commands differ in length")
    finite = np.isfinite(costs)
    if not finite.any():
        return np.zeros(cmds.shape[1:]) if prev_mean is None else np.asarray(prev_mean, dtype=float)
    j = np.where(finite, costs, np.inf)
    w = np.exp(-(j - j.min()) / temperature)
    w /= w.sum()
    return np.tensordot(w, cmds, axes=1)


def check_collision(path: Path, obstacles: GridMap2D, footprint: Footprint = Footprint()) -> bool:
    """True iff any waypoint footprint covers an obstacle cell or leaves the map."""
    if len(path) == 0:
        return False
    prefix = _backend.row_prefix(obstacles.values)
    hits = _footprint_sums(path.poses, obstacles, prefix, footprint, 1.0)
    return bool(np.any(hits > 0))


def collision_mask(poses: np.ndarray, obstacles: GridMap2D, footprint: Footprint = Footprint(),
                   prefix: np.ndarray | None = None) -> np.ndarray:
    """Per-pose collision flags for an (..., 3) array."""
    if prefix is None:
        prefix = _backend.row_prefix(obstacles.values)
    return _footprint_sums(np.asarray(poses, dtype=float), obstacles, prefix, footprint, 1.0) > 0


def _sample_noise(rng, p, n, rho):
    """(p, n, 3) unit-variance Gaussian noise, AR(1)-correlated along the horizon."""
    w = rng.standard_normal((p, n, 3))
    if rho == 0.0:
        return w
    k = math.sqrt(1.0 - rho * rho)
    for i in range(1, n):
        w[:, i] = rho * w[:, i - 1] + k * w[:, i]
    return w


# -- planner ----------------------------------------------------------------------

def goal_field(scene: WorldScene, start: Pose2, goal: Pose2):
    """Distance field for planning toward ``goal`` from ``start``.

    Falls back to the free cell nearest the goal that is connected to the start
    when the goal is off-map, on an obstacle, or disconnected. Returns
    ``(field, best_effort, target_pose)``.
    """
    obst = scene.obstacles
    start_cell = world_to_cell(obst, start)
    if start_cell is None:
        raise ValueError(f"start ({start.x:.3f}, {start.y:.3f}) is outside the map")
    try:
        f = compute_gdf(obst, goal)
        if math.isfinite(f.values[start_cell[1], start_cell[0]]):
            return f, False, goal
    except InfeasibleGoalError:
        pass
    allowed = None
    if obst.values[start_cell[1], start_cell[0]] == 0:
        allowed = field_to_cell(obst, *start_cell).finite_mask()
    cell = nearest_free_cell(obst, goal, allowed)
    if cell is None:
        raise InfeasibleGoalError("no free cell available to retarget the goal")
    f = field_to_cell(obst, *cell)
    c = obst.cell_center(*cell)
    return f, True, Pose2(c.x, c.y, goal.theta)


def plan(scene: WorldScene, start: Pose2, goal: Pose2, config: MppiConfig = MppiConfig(),
         footprint: Footprint = Footprint(), init_commands: np.ndarray | None = None,
         dist_field: DistanceField | None = None) -> PlanResult:
    """Sample -> evaluate -> update for ``config.iterations`` rounds; return the best rollout seen.

    The sampling mean starts at zero commands unless ``init_commands`` is given
    (used for warm-started replanning). Samples are Gaussian perturbations of
    the mean clamped to the velocity limits; member 0 of every population is the
    unperturbed mean. With ``config.stop_search`` the best sequence is finally
    re-scored halted at each step, and the cheapest variant kept.
    """
    if dist_field is None:
        dist_field, best_effort, target = goal_field(scene, start, goal)
    else:
        best_effort, target = False, goal
    cfg = config
    n, p = cfg.horizon_steps, cfg.population_size
    rng = np.random.default_rng(cfg.seed)
    std = np.asarray(cfg.noise_std)
    evaluate = _Evaluator(scene, dist_field, goal, cfg, footprint)

    mean = np.zeros((n, 3)) if init_commands is None else cfg.limits.clamp(np.asarray(init_commands, float))
    if mean.shape != (n, 3):
        raise ValueError(f"init_commands must have shape ({n}, 3)")
    best_cost = float(evaluate(start, mean[None])[0][0])
    best_cmds = mean.copy()
    history = [best_cost]
    for it in range(cfg.iterations):
        noise = _sample_noise(rng, p, n, cfg.noise_correlation) * (std * cfg.noise_decay ** it)
        noise[0] = 0.0
        samples = cfg.limits.clamp(mean + noise)
        total = evaluate(start, samples)[0]
        k = int(np.argmin(np.where(np.isnan(total), np.inf, total)))
        if total[k] < best_cost:
            best_cost = float(total[k])
            best_cmds = samples[k].copy()
        history.append(best_cost)
        mean = mppi_update(total, samples, cfg.temperature, mean)
    final = float(evaluate(start, mean[None])[0][0])
    if final < best_cost:
        best_cost, best_cmds = final, mean.copy()
    if cfg.stop_search:
        # candidate k halts the best sequence from step k on
        keep = np.arange(n)[None, :] < np.arange(n + 1)[:, None]
        stops = best_cmds[None] * keep[..., None]
        total = evaluate(start, stops)[0]
        k = int(np.argmin(np.where(np.isnan(total), np.inf, total)))
        if total[k] < best_cost:
            best_cost, best_cmds = float(total[k]), stops[k]
    history[-1] = best_cost

    cmds = CommandSequence(best_cmds, cfg.dt)
    path = rollout(start, cmds)
    cost = total_cost(start, cmds, scene, dist_field, goal, cfg, footprint)
    return PlanResult(
        path=path,
        commands=cmds,
        cost=cost,
        collided=check_collision(path, scene.obstacles, footprint),
        final_geodesic_distance=query_distance(dist_field, path.final),
        iterations_run=cfg.iterations,
        best_effort=best_effort,
        target=target,
        cost_history=tuple(history),
    )
