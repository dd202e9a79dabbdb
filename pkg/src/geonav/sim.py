"""Closed-loop simulation: lookahead follower, periodic replanning, scheduled obstacles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from geonav.evaluation import SUCCESS_RADIUS, EvalCase, EvalOutcome
from geonav.geodesic import DistanceField, compute_gdf, query_distance
from geonav.geometry import (
    Path,
    Pose2,
    Twist2,
    VelocityLimits,
    angle_diff,
    path_length,
    relative_to,
)
from geonav.mppi import MppiConfig, PlanResult, collision_mask, plan
from geonav.worldmodel import Footprint, WorldScene, WorldSpec, generate_world

REACHED, COLLIDED, TIMEOUT = "reached", "collided", "timeout"


@dataclass(frozen=True)
class FollowerConfig:
    lookahead: float = 0.3
    control_dt: float = 1.0 / 30.0
    replan_period: float = 1.0 / 6.0
    max_sim_time: float = 30.0
    limits: VelocityLimits = field(default_factory=VelocityLimits)
    actuation_noise: float = 0.0  # std of multiplicative twist noise, off by default
    seed: int = 0
    timed: bool = True  # pace the follower by the plan's own timing

    def __post_init__(self):
        if min(self.lookahead, self.control_dt, self.replan_period, self.max_sim_time) <= 0:
            raise ValueError("follower parameters must be positive")
        if self.actuation_noise < 0:
            raise ValueError("actuation_noise must be >= 0")

    @property
    def steps_per_replan(self) -> int:
        return max(1, int(round(self.replan_period / self.control_dt)))


def follower_step(robot: Pose2, path: Path, cfg: FollowerConfig = FollowerConfig(),
                  path_dt: float | None = None, elapsed: float = 0.0) -> Twist2:
    """Drive toward the first waypoint at least ``lookahead`` metres along the path (else the last).

    The twist is the body-frame offset divided by the time left to reach it:
    control_dt by default, or the plan's own arrival time for that waypoint
    when ``path_dt`` and ``elapsed`` (time since the plan was made) are given.
    Translation is scaled down uniformly when it exceeds the limits, so the
    robot still heads straight at the target; omega is clamped on its own.
    """
    if len(path) == 0:
        raise ValueError("follower needs a non-empty path")
    pts = path.poses
    steps = np.diff(np.vstack([[robot.x, robot.y], pts[:, :2]]), axis=0)
    arc = np.cumsum(np.hypot(steps[:, 0], steps[:, 1]))
    ahead = np.nonzero(arc >= cfg.lookahead)[0]
    j = int(ahead[0]) if len(ahead) else len(pts) - 1
    target = Pose2(*pts[j])
    rel = relative_to(robot, target)
    lim = cfg.limits
    tau = cfg.control_dt
    if path_dt is not None:
        tau = max(tau, (j + 1) * path_dt - elapsed)
    vx, vy = rel.x / tau, rel.y / tau
    scale = max(1.0, abs(vx) / lim.vx_max, abs(vy) / lim.vy_max)
    om = float(np.clip(rel.theta / tau, -lim.omega_max, lim.omega_max))
    return Twist2(vx / scale, vy / scale, om)


def integrate(robot: Pose2, twist: Twist2, dt: float) -> Pose2:
    """One step of the planning kinematics (translation in the pre-step heading)."""
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    return Pose2(robot.x + (c * twist.vx - s * twist.vy) * dt,
                 robot.y + (s * twist.vx + c * twist.vy) * dt,
                 robot.theta + twist.omega * dt)


# -- obstacle schedules -----------------------------------------------------------

@dataclass(frozen=True)
class ObstacleEvent:
    time: float
    region: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax (world)
    action: str  # "add" | "remove"

    def __post_init__(self):
        if self.action not in ("add", "remove"):
            raise ValueError(f"unknown obstacle action {self.action!r}")
        xmin, ymin, xmax, ymax = self.region
        if not (xmin <= xmax and ymin <= ymax):
            raise ValueError("region must be (xmin, ymin, xmax, ymax) with min <= max")
        object.__setattr__(self, "region", tuple(float(v) for v in self.region))


@dataclass(frozen=True)
class ObstacleSchedule:
    events: tuple[ObstacleEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.time)))

    def validate(self, horizon: float) -> None:
        for e in self.events:
            if not 0.0 <= e.time <= horizon:
                raise ValueError(f"event at t={e.time} lies outside the sim horizon [0, {horizon}]")


SCHEDULE_HEADER = ["time", "action", "xmin", "ymin", "xmax", "ymax"]


def read_schedule(path) -> ObstacleSchedule:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCHEDULE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SCHEDULE_HEADER)}")
        events = [ObstacleEvent(float(r["time"]), (float(r["xmin"]), float(r["ymin"]), float(r["xmax"]),
                                                   float(r["ymax"])), r["action"]) for r in reader]
    return ObstacleSchedule(tuple(events))


def write_schedule(path, schedule: ObstacleSchedule) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEDULE_HEADER)
        for e in schedule.events:
            w.writerow([repr(e.time), e.action, *(repr(v) for v in e.region)])


# -- planners for the loop --------------------------------------------------------

class MppiReplanner:
    """MPPI warm-started from the previous plan shifted by the elapsed time.

    Every call uses a fresh seed derived from the base seed and call count, so
    runs are reproducible. Each plan's cost history is checked for monotonicity.
    """

    def __init__(self, config: MppiConfig = MppiConfig(population_size=256, iterations=8),
                 footprint: Footprint = Footprint(), warm_start: bool = True):
        self.config = config
        self.footprint = footprint
        self.warm_start = warm_start
        self.calls = 0
        self.monotone_violations = 0
        self._prev: PlanResult | None = None
        self._prev_time: float | None = None

    def __call__(self, scene: WorldScene, start: Pose2, goal: Pose2, t: float = 0.0) -> PlanResult:
        cfg = replace(self.config, seed=self.config.seed + self.calls)
        init = None
        if self.warm_start and self._prev is not None:
            shift = int(round((t - self._prev_time) / cfg.dt))
            prev = self._prev.commands.commands
            init = np.zeros_like(prev)
            if shift < len(prev):
                init[:len(prev) - shift] = prev[shift:]
        res = plan(scene, start, goal, cfg, self.footprint, init_commands=init)
        h = res.cost_history
        if any(b > a for a, b in zip(h, h[1:])):
            self.monotone_violations += 1
        self.calls += 1
        self._prev, self._prev_time = res, t
        return res


# -- closed loop ------------------------------------------------------------------

@dataclass
class SimState:
    time: float
    robot: Pose2
    active_path: Path | None
    scene: WorldScene
    trace: list = field(default_factory=list)  # (time, Pose2)
    status: str = ""
    replans: int = 0
    planner_failures: int = 0
    events_applied: list = field(default_factory=list)  # (time, event)
    plan_times: list = field(default_factory=list)

    def trace_array(self) -> np.ndarray:
        return np.array([[t, p.x, p.y, p.theta] for t, p in self.trace])


PlannerFn = Callable[..., object]


def _as_path(result) -> Path:
    return result if isinstance(result, Path) else result.path


def run_closed_loop(scene: WorldScene, start: Pose2, goal: Pose2, planner_fn: PlannerFn,
                    cfg: FollowerConfig = FollowerConfig(), schedule: ObstacleSchedule = ObstacleSchedule(),
                    footprint: Footprint = Footprint(), geodesic_start_distance: float | None = None):
    """Follow replanned paths until the goal (geodesic <= 1 m), a collision, or timeout.

    ``planner_fn(scene, robot, goal, t)`` is called every replan period on the
    scene as of that moment; events mutate the true scene at their own time.
    Returns ``(state, outcome)``; the outcome is judged on the driven trace.
    Plans use the dilated footprint; the driven robot collides with its bare body.
    """
    if cfg.lookahead < 2 * scene.obstacles.resolution:
        raise ValueError("lookahead must be at least two grid cells")
    schedule.validate(cfg.max_sim_time)
    rng = np.random.default_rng(cfg.seed)
    true_scene = scene
    fields: dict[int, DistanceField | None] = {}

    def goal_distance(sc: WorldScene, p: Pose2) -> float:
        key = id(sc)
        if key not in fields:
            try:
                fields[key] = compute_gdf(sc.obstacles, goal)
            except ValueError:
                fields[key] = None
        f = fields[key]
        return math.inf if f is None else query_distance(f, p)

    if geodesic_start_distance is None:
        geodesic_start_distance = goal_distance(scene, start)
    state = SimState(0.0, start, None, true_scene, [(0.0, start)])
    pending = list(schedule.events)
    n_steps = int(math.ceil(cfg.max_sim_time / cfg.control_dt - 1e-9))
    collided = False
    plan_dt = None
    for k in range(n_steps):
        t = k * cfg.control_dt
        while pending and pending[0].time <= t:
            e = pending.pop(0)
            true_scene = true_scene.with_region(e.region, e.action)
            state.events_applied.append((t, e))
        if k % cfg.steps_per_replan == 0:
            try:
                result = planner_fn(true_scene, state.robot, goal, t)
                state.active_path = _as_path(result)
                plan_dt = getattr(getattr(result, "commands", None), "dt", None)
                state.plan_times.append(t)
            except Exception:  # noqa: BLE001 - hold position until the next replan
                state.active_path = None
                state.planner_failures += 1
            state.replans += 1
        if state.active_path is None:
            twist = Twist2()
        else:
            timing = (plan_dt, t - state.plan_times[-1]) if (cfg.timed and plan_dt) else (None, 0.0)
            twist = follower_step(state.robot, state.active_path, cfg, *timing)
        if cfg.actuation_noise > 0:
            a = twist.as_array() * (1.0 + cfg.actuation_noise * rng.standard_normal(3))
            a = cfg.limits.clamp(a)
            twist = Twist2(*a)
        state.robot = integrate(state.robot, twist, cfg.control_dt)
        state.time = (k + 1) * cfg.control_dt
        state.trace.append((state.time, state.robot))
        state.scene = true_scene
        if collision_mask(state.robot.as_array(), true_scene.obstacles, footprint.body):
            collided = True
            state.status = COLLIDED
            break
        if goal_distance(true_scene, state.robot) <= SUCCESS_RADIUS:
            state.status = REACHED
            break
    else:
        state.status = TIMEOUT

    driven = Path(np.array([p.as_array() for _, p in state.trace[1:]]))
    final_gd = goal_distance(true_scene, state.robot)
    outcome = EvalOutcome(
        case=EvalCase(true_scene.spec_name, start, goal, geodesic_start_distance),
        path=driven,
        executed_length=path_length(start, driven),
        collided=collided,
        final_gd=final_gd,
        success=bool(final_gd <= SUCCESS_RADIUS and not collided),
        heading_error=angle_diff(goal.theta, state.robot.theta),
    )
    return state, outcome


# -- traces -----------------------------------------------------------------------

TRACE_HEADER = ["time", "x", "y", "theta"]


def write_trace(path, state: SimState) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, p in state.trace:
            w.writerow([repr(float(t)), repr(p.x), repr(p.y), repr(p.theta)])


def read_trace(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        return np.array([[float(v) for v in row] for row in reader if row], dtype=float).reshape(-1, 4)


def min_clearance(trace_xy: np.ndarray, obstacles) -> float:
    """Smallest distance from any trace point to an obstacle cell centre."""
    wx, wy = obstacles.cell_centers()
    occ = obstacles.values > 0
    if not occ.any():
        return math.inf
    ox, oy = wx[occ], wy[occ]
    best = math.inf
    for x, y in np.asarray(trace_xy)[:, :2]:
        best = min(best, float(np.min(np.hypot(ox - x, oy - y))))
    return best


# -- scenarios --------------------------------------------------------------------

def corridor_scenario(width: float = 1.2):
    """Straight corridor along x; start and goal 5.5 m apart on the centre line."""
    scene = generate_world(WorldSpec("corridor", {"width": width}), 0)
    return scene, Pose2(-2.75, 0.0, 0.0), Pose2(2.75, 0.0, 0.0), ObstacleSchedule()


def dynamic_wall_scenario(seed: int, event_time: float = 3.0, gap: float = 1.4, wall_x: float = 1.0):
    """Open world; at ``event_time`` a wall with one gap appears across the straight route."""
    rng = np.random.default_rng([seed, 7])
    scene = generate_world(WorldSpec("empty"), seed)
    y_gap = float(rng.uniform(-2.0, 2.0))
    x0, x1 = wall_x - 0.1, wall_x + 0.1
    events = (
        ObstacleEvent(event_time, (x0, -4.0, x1, y_gap - gap / 2), "add"),
        ObstacleEvent(event_time, (x0, y_gap + gap / 2, x1, 4.0), "add"),
    )
    return scene, Pose2(-3.0, 0.0, 0.0), Pose2(3.0, 0.0, 0.0), ObstacleSchedule(events)


def route_crosses(trace_xy: np.ndarray, region) -> bool:
    xmin, ymin, xmax, ymax = region
    p = np.asarray(trace_xy)[:, :2]
    return bool(np.any((p[:, 0] >= xmin) & (p[:, 0] <= xmax) & (p[:, 1] >= ymin) & (p[:, 1] <= ymax)))

