"""Success / collision / SPL evaluation of planners on seeded worlds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Callable, Mapping, Sequence

import numpy as np

from geonav.geodesic import DistanceField, InfeasibleGoalError, compute_gdf, query_distance
from geonav.geometry import Path, Pose2, angle_diff, path_length
from geonav.mppi import MppiConfig, check_collision, plan
from geonav.worldmodel import Footprint, WorldScene, WorldSpec, generate_world

SUCCESS_RADIUS = 1.0  # metres of geodesic distance
STRAIGHT_LINE_CAP = 5.0


@dataclass(frozen=True)
class EvalCase:
    scene_ref: str
    start: Pose2
    goal: Pose2
    geodesic_start_distance: float = math.nan
    case_id: str = ""


@dataclass(frozen=True, eq=False)
class EvalOutcome:
    case: EvalCase
    path: Path
    executed_length: float
    collided: bool
    final_gd: float
    success: bool
    heading_error: float = math.nan  # diagnostic only, not part of success
    error: str | None = None

    @property
    def spl_term(self) -> float:
        return _spl_term(self.success, self.case.geodesic_start_distance, self.executed_length)


@dataclass(frozen=True, eq=False)
class EvalReport:
    collision_pct: float
    success_pct: float
    spl_pct: float
    n_cases: int
    outcomes: tuple[EvalOutcome, ...] = ()
    planner: str = ""

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[EvalOutcome], planner: str = "") -> "EvalReport":
        outcomes = tuple(outcomes)
        if not outcomes:
            raise ValueError("cannot build a report from zero outcomes")
        n = len(outcomes)
        return cls(
            collision_pct=100.0 * sum(o.collided for o in outcomes) / n,
            success_pct=100.0 * sum(o.success for o in outcomes) / n,
            spl_pct=100.0 * spl(outcomes),
            n_cases=n,
            outcomes=outcomes,
            planner=planner,
        )


@dataclass(frozen=True)
class FilterResult:
    kept: list
    discarded: int


def _spl_term(success: bool, ell: float, p: float) -> float:
    if not success:
        return 0.0
    denom = max(p, ell)
    return 1.0 if denom == 0 else ell / denom


def spl(outcomes: Sequence[EvalOutcome]) -> float:
    """(1/N) sum S_i * l_i / max(p_i, l_i). A case with p = l = 0 scores S_i."""
    if len(outcomes) == 0:
        raise ValueError("spl of an empty outcome list")
    for o in outcomes:
        if not math.isfinite(o.case.geodesic_start_distance):
            raise ValueError(f"case {o.case.case_id!r} has a non-finite start distance")
    return math.fsum(o.spl_term for o in outcomes) / len(outcomes)


def _case_field(case: EvalCase, scene: WorldScene) -> DistanceField:
    try:
        return compute_gdf(scene.obstacles, case.goal)
    except InfeasibleGoalError as exc:
        raise ValueError(f"case {case.case_id!r} was not reachability-filtered: {exc}") from exc


def judge(case: EvalCase, path: Path, scene: WorldScene, dist_field: DistanceField | None = None,
          footprint: Footprint = Footprint()) -> EvalOutcome:
    """Score one path: success iff final geodesic distance <= 1 m and no collision."""
    if not math.isfinite(case.geodesic_start_distance):
        raise ValueError(f"case {case.case_id!r} was not reachability-filtered (no finite start distance)")
    if dist_field is None:
        dist_field = _case_field(case, scene)
    if len(path) == 0:
        raise ValueError("cannot judge an empty path")
    final = path.final
    gd = query_distance(dist_field, final)
    collided = check_collision(path, scene.obstacles, footprint)
    return EvalOutcome(
        case=case,
        path=path,
        executed_length=path_length(case.start, path),
        collided=collided,
        final_gd=gd,
        success=bool(gd <= SUCCESS_RADIUS and not collided),
        heading_error=angle_diff(case.goal.theta, final.theta),
    )


def _failure(case: EvalCase, dist_field: DistanceField, message: str) -> EvalOutcome:
    return EvalOutcome(
        case=case,
        path=Path(case.start.as_array()[None]),
        executed_length=0.0,
        collided=False,
        final_gd=query_distance(dist_field, case.start),
        success=False,
        error=message,
    )


def straight_line_baseline(start: Pose2, goal: Pose2, n: int = 50, cap: float = STRAIGHT_LINE_CAP) -> Path:
    """N evenly spaced waypoints toward the goal, truncated at ``cap`` metres.

    Headings face the goal; the last heading is the goal heading when the goal is reached.
    """
    d = start.distance_to(goal)
    length = min(d, cap)
    bearing = math.atan2(goal.y - start.y, goal.x - start.x) if d > 0 else start.theta
    s = length * np.arange(1, n + 1) / n
    poses = np.column_stack([start.x + s * math.cos(bearing), start.y + s * math.sin(bearing),
                             np.full(n, bearing)])
    if length == d:
        poses[-1] = goal.as_array()
    return Path(poses)


def reachability_filter(cases: Sequence[EvalCase], scenes: Mapping[str, WorldScene]) -> FilterResult:
    """Keep cases whose goal has a finite geodesic distance from the start cell.

    Kept cases carry the start-cell distance as ``geodesic_start_distance``.
    """
    kept = []
    for case in cases:
        scene = scenes[case.scene_ref]
        try:
            f = compute_gdf(scene.obstacles, case.goal)
        except InfeasibleGoalError:
            continue
        ell = query_distance(f, case.start)
        if math.isfinite(ell):
            kept.append(EvalCase(case.scene_ref, case.start, case.goal, ell, case.case_id))
    return FilterResult(kept, len(cases) - len(kept))


PlannerFn = Callable[[WorldScene, Pose2, Pose2], object]


def evaluate(planner_fn: PlannerFn, cases: Sequence[EvalCase], scenes: Mapping[str, WorldScene],
             name: str = "", footprint: Footprint = Footprint()) -> EvalReport:
    """Run ``planner_fn(scene, start, goal)`` on every case and aggregate.

    The planner may return a Path or anything with a ``.path`` attribute.
    Exceptions count as failures and are recorded on the outcome.
    """
    outcomes = []
    for case in cases:
        scene = scenes[case.scene_ref]
        f = _case_field(case, scene)
        try:
            result = planner_fn(scene, case.start, case.goal)
            path = result if isinstance(result, Path) else result.path
            outcomes.append(judge(case, path, scene, f, footprint))
        except Exception as exc:  # noqa: BLE001 - a planner failure must not abort the batch
            outcomes.append(_failure(case, f, f"{type(exc).__name__}: {exc}"))
    return EvalReport.from_outcomes(outcomes, name)


def mppi_planner(config: MppiConfig = MppiConfig(), footprint: Footprint = Footprint()) -> PlannerFn:
    def run(scene, start, goal):
        return plan(scene, start, goal, config, footprint)

    return run


def straight_planner(n: int = 50) -> PlannerFn:
    def run(scene, start, goal):
        return straight_line_baseline(start, goal, n)

    return run


PLANNERS = {"mppi": mppi_planner, "straight": straight_planner}


# -- case generation ----------------------------------------------------------------

@dataclass(frozen=True)
class CaseGenConfig:
    spec: str = "random_obstacles"
    params: dict = field(default_factory=lambda: {"count": 14, "radius_range": (0.25, 0.6)})
    first_seed: int = 1000
    goal_margin: float = 0.5  # goals kept this far inside the map edge
    draws_per_world: int = 200


def generate_cases(n: int, config: CaseGenConfig = CaseGenConfig()):
    """One case per world: start at the origin, goal from the goal-sampling Gaussian.

    Goals are redrawn until one lies inside the map margin and passes the
    reachability filter. Returns ``(cases, scenes, discarded)``.
    """
    from geonav.datasetgen import sample_goals

    cases, scenes, discarded = [], {}, 0
    seed = config.first_seed
    start = Pose2()
    while len(cases) < n:
        scene = generate_world(WorldSpec(config.spec, config.params), seed)
        ref = f"{config.spec}-{seed}"
        rng = np.random.default_rng([seed, 1])
        g = scene.obstacles
        lo_x = g.origin.x + config.goal_margin
        lo_y = g.origin.y + config.goal_margin
        hi_x = g.origin.x + g.width_cells * g.resolution - config.goal_margin
        hi_y = g.origin.y + g.height_cells * g.resolution - config.goal_margin
        for goal in sample_goals(config.draws_per_world, rng):
            if not (lo_x <= goal.x <= hi_x and lo_y <= goal.y <= hi_y):
                continue
            res = reachability_filter([EvalCase(ref, start, goal, case_id=ref)], {ref: scene})
            discarded += res.discarded
            if res.kept:
                cases.append(res.kept[0])
                scenes[ref] = scene
                break
        seed += 1
    return cases, scenes, discarded


# -- output -----------------------------------------------------------------------

TABLE_COLUMNS = ("Planner", "Col. (%)", "Succ. (%)", "SPL (%)")


def report_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table, rows sorted by SPL (worst first, best last)."""
    rows = [TABLE_COLUMNS]
    for r in sorted(reports, key=lambda r: r.spl_pct):
        rows.append((r.planner or "-", f"{r.collision_pct:.1f}", f"{r.success_pct:.1f}", f"{r.spl_pct:.1f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in rows]
    return "\n".join(lines)


def report_summary(report: EvalReport) -> dict:
    return {
        "planner": report.planner,
        "n_cases": report.n_cases,
        "collision_pct": report.collision_pct,
        "success_pct": report.success_pct,
        "spl_pct": report.spl_pct,
    }


def outcome_to_record(o: EvalOutcome) -> dict:
    c = o.case
    return {
        "case_id": c.case_id,
        "scene_ref": c.scene_ref,
        "start": c.start.as_list(),
        "goal": c.goal.as_list(),
        "geodesic_start_distance": c.geodesic_start_distance,
        "executed_length": o.executed_length,
        "collided": o.collided,
        "final_gd": o.final_gd,
        "success": o.success,
        "heading_error": o.heading_error,
        "error": o.error,
        "path": o.path.poses.tolist(),
    }


def outcome_from_record(rec: dict) -> EvalOutcome:
    case = EvalCase(rec["scene_ref"], Pose2(*rec["start"]), Pose2(*rec["goal"]),
                    float(rec["geodesic_start_distance"]), rec["case_id"])
    return EvalOutcome(
        case=case,
        path=Path(np.asarray(rec["path"], dtype=float).reshape(-1, 3)),
        executed_length=float(rec["executed_length"]),
        collided=bool(rec["collided"]),
        final_gd=float(rec["final_gd"]),
        success=bool(rec["success"]),
        heading_error=float(rec["heading_error"]),
        error=rec["error"],
    )


def write_outcomes(path, outcomes: Sequence[EvalOutcome]) -> None:
    """JSON Lines, floats at full round-trip precision (non-finite as Infinity/NaN)."""
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(outcome_to_record(o)) + "\n")


def read_outcomes(path) -> list[EvalOutcome]:
    with open(path, encoding="utf-8") as fh:
        return [outcome_from_record(json.loads(line)) for line in fh if line.strip()]


def write_report(out_dir, report: EvalReport) -> None:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_outcomes(out / f"outcomes_{report.planner or 'planner'}.jsonl", report.outcomes)
    with open(out / f"report_{report.planner or 'planner'}.json", "w", encoding="utf-8") as fh:
        json.dump(report_summary(report), fh, indent=2)
        fh.write("\n")
