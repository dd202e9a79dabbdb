"""Teleop and planner-labelled goal-conditioned trajectory datasets.

Records are JSON Lines with floats rounded to 9 significant digits, so a
rebuild with the same inputs and seed is byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

from geonav.geometry import Path, Pose2, compose, path_length, relative_to, wrap_angle
from geonav.mppi import MppiConfig, plan
from geonav.worldmodel import WorldScene, valid_fraction

log = logging.getLogger(__name__)

GOAL_MEAN = (5.0, 0.0, 0.0)
GOAL_STD = (2.5, 2.0, math.pi / 4)
TELEOP = "teleop"
GEOMETRIC = "geometric"
SOURCES = (TELEOP, GEOMETRIC)
CSV_HEADER = ["timestamp", "x", "y", "theta", "frame_ref", "scene_ref"]
RECORD_DIGITS = 9


def sample_goals(k: int, rng: np.random.Generator) -> list[Pose2]:
    """K robot-centric goals from N(GOAL_MEAN, diag(GOAL_STD^2))."""
    if k < 1:
        raise ValueError("K must be >= 1")
    draws = rng.normal(GOAL_MEAN, GOAL_STD, size=(k, 3))
    return [Pose2(*d) for d in draws]


# -- teleop logs ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TeleopLog:
    """Time-ordered world-frame poses with frame and scene ids."""

    timestamps: np.ndarray
    poses: np.ndarray
    frame_refs: tuple[str, ...]
    scene_refs: tuple[str, ...]

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        if len(t) < 2:
            raise ValueError("a teleop log needs at least 2 entries")
        if len(p) != len(t) or len(self.frame_refs) != len(t) or len(self.scene_refs) != len(t):
            raise ValueError("teleop log columns differ in length")
        if not np.all(np.diff(t) > 0):
            raise ValueError("teleop timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ValueError("teleop log contains non-finite values")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "poses", p)
        object.__setattr__(self, "frame_refs", tuple(self.frame_refs))
        object.__setattr__(self, "scene_refs", tuple(self.scene_refs))

    def __len__(self):
        return len(self.timestamps)

    @property
    def t_start(self) -> float:
        return float(self.timestamps[0])

    @property
    def t_end(self) -> float:
        return float(self.timestamps[-1])

    def index_at(self, t: float) -> int:
        """Index of the last entry with timestamp <= t."""
        return int(np.searchsorted(self.timestamps, t, side="right")) - 1

    def pose_at(self, t: float) -> Pose2:
        """Linear position, shortest-arc heading interpolation."""
        if not self.t_start <= t <= self.t_end:
            raise ValueError(f"time {t} outside log range [{self.t_start}, {self.t_end}]")
        i = min(self.index_at(t), len(self) - 2)
        t0, t1 = self.timestamps[i], self.timestamps[i + 1]
        a, b = self.poses[i], self.poses[i + 1]
        u = (t - t0) / (t1 - t0)
        if u == 0.0:
            return Pose2(*a)
        if u == 1.0:
            return Pose2(*b)
        dth = wrap_angle(b[2] - a[2])
        return Pose2(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * dth)


def read_teleop_csv(path) -> TeleopLog:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
            rows = [r for r in reader if r]
        t = [float(r[0]) for r in rows]
        poses = [[float(r[1]), float(r[2]), float(r[3])] for r in rows]
        return TeleopLog(np.array(t), np.array(poses), tuple(r[4] for r in rows), tuple(r[5] for r in rows))
    except (OSError, IndexError, ValueError) as exc:
        raise ValueError(f"{path}: unreadable teleop log ({exc})") from exc


def write_teleop_csv(path, log_: TeleopLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, p, f, s in zip(log_.timestamps, log_.poses, log_.frame_refs, log_.scene_refs):
            w.writerow([repr(float(t)), repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), f, s])


def straight_log(speed: float = 1.0, duration: float = 20.0, rate: float = 10.0, start: Pose2 = Pose2(),
                 scene_ref: str = "empty-0") -> TeleopLog:
    """Constant-velocity drive along the start heading."""
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    poses = np.column_stack([start.x + speed * t * math.cos(start.theta),
                             start.y + speed * t * math.sin(start.theta),
                             np.full(n, start.theta)])
    return TeleopLog(t, poses, tuple(f"{scene_ref}/{i:06d}" for i in range(n)), (scene_ref,) * n)


def random_log(rng: np.random.Generator, duration: float = 30.0, rate: float = 10.0,
               scene_ref: str = "scene", start: Pose2 = Pose2(), bounds: float = 3.5,
               stop_probability: float = 0.1) -> TeleopLog:
    """Smooth random drive: piecewise-constant twists held for 1-3 s, with occasional stops.

    Heading turns back toward the origin when the robot nears ``bounds``.
    """
    n = int(round(duration * rate)) + 1
    dt = 1.0 / rate
    poses = np.zeros((n, 3))
    poses[0] = start.as_array()
    hold = 0
    vx = om = 0.0
    for i in range(1, n):
        x, y, th = poses[i - 1]
        if hold <= 0:
            hold = int(rng.integers(int(rate), int(3 * rate) + 1))
            stopped = rng.random() < stop_probability
            vx = 0.0 if stopped else float(rng.uniform(0.3, 1.0))
            om = float(rng.uniform(-0.5, 0.5))
        if max(abs(x), abs(y)) > bounds:
            home = math.atan2(-y, -x)
            om = float(np.clip(wrap_angle(home - th) / 0.5, -1.0, 1.0))
        hold -= 1
        poses[i] = (x + math.cos(th) * vx * dt, y + math.sin(th) * vx * dt, wrap_angle(th + om * dt))
    t = np.arange(n) * dt
    return TeleopLog(t, poses, tuple(f"{scene_ref}/{i:06d}" for i in range(n)), (scene_ref,) * n)


# -- samples ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sample:
    frame_ref: str
    scene_ref: str
    goal: Pose2  # robot-centric
    waypoints: Path  # robot-centric, N poses
    source: str
    displacement: float = math.nan

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown sample source {self.source!r}")
        if math.isnan(self.displacement):
            final = self.waypoints.final
            object.__setattr__(self, "displacement", math.hypot(final.x, final.y))


def extract_teleop_segment(log_: TeleopLog, t0: float, tg: float, n: int = 50, horizon: float = 5.0) -> Sample:
    """Goal at ``tg`` and N waypoints over [t0, t0 + min(T, tg - t0)], all in the t0 frame.

    When tg - t0 <= T the waypoint times are warped to end exactly at tg, so the
    final waypoint is the goal.
    """
    if not tg > t0:
        raise ValueError("tg must be later than t0")
    for t in (t0, tg):
        if not log_.t_start <= t <= log_.t_end:
            raise ValueError(f"time {t} outside log range [{log_.t_start}, {log_.t_end}]")
    ref = log_.pose_at(t0)
    goal = relative_to(ref, log_.pose_at(tg))
    t_end = tg if tg - t0 <= horizon else t0 + horizon
    times = np.linspace(t0, t_end, n + 1)[1:]
    poses = [goal if t == tg else relative_to(ref, log_.pose_at(float(t))) for t in times]
    i = log_.index_at(t0)
    return Sample(log_.frame_refs[i], log_.scene_refs[i], goal, Path.from_poses(poses), TELEOP)


@dataclass(frozen=True)
class FilterParams:
    min_displacement: float = 0.25
    min_valid_fraction: float = 0.25


def filter_sample(sample: Sample, scene: WorldScene | None = None, params: FilterParams = FilterParams()):
    """Returns ``(keep, reason)``; reason is None for kept samples."""
    if not (np.all(np.isfinite(sample.waypoints.poses)) and np.all(np.isfinite(sample.goal.as_array()))):
        return False, "non_finite"
    if sample.source == TELEOP:
        if sample.displacement < params.min_displacement:
            return False, "stationary"
    elif scene is not None and valid_fraction(scene.elevation) < params.min_valid_fraction:
        return False, "invalid_elevation"
    return True, None


def frame_seed(global_seed: int, *parts: str) -> int:
    """Stable per-frame seed, independent of processing order."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(global_seed).encode())
    for p in parts:
        h.update(b"\x00" + p.encode())
    return int.from_bytes(h.digest(), "little")


def generate_geo_samples(scene: WorldScene, frame_ref: str, robot_pose: Pose2, k: int = 10,
                         planner: MppiConfig = MppiConfig(), rng: np.random.Generator | None = None,
                         scene_ref: str = "", filters: FilterParams = FilterParams()):
    """Plan toward K sampled goals; returns ``(samples, rejects)`` with a reason Counter.

    Colliding plans are dropped. Goals that cannot be reached are planned
    best-effort and kept if collision free.
    """
    rejects = Counter()
    if valid_fraction(scene.elevation) < filters.min_valid_fraction:
        rejects["invalid_elevation"] += k
        return [], rejects
    if rng is None:
        rng = np.random.default_rng(frame_seed(planner.seed, frame_ref))
    goals = sample_goals(k, rng)
    seeds = rng.integers(0, 2**63 - 1, size=k)
    out = []
    for goal, seed in zip(goals, seeds):
        try:
            res = plan(scene, robot_pose, compose(robot_pose, goal), replace(planner, seed=int(seed)))
        except Exception as exc:  # noqa: BLE001 - one bad goal must not abort the frame
            log.warning("planner failed on %s: %s", frame_ref, exc)
            rejects["planner_error"] += 1
            continue
        if res.collided:
            rejects["collision"] += 1
            continue
        sample = Sample(frame_ref, scene_ref, goal, res.path.to_frame(robot_pose), GEOMETRIC)
        keep, reason = filter_sample(sample, scene, filters)
        if keep:
            out.append(sample)
        else:
            rejects[reason] += 1
    return out, rejects


# -- records ----------------------------------------------------------------------

def _round(v: float) -> float:
    return float(f"{v:.{RECORD_DIGITS}g}")


def sample_to_record(s: Sample) -> dict:
    return {
        "frame_ref": s.frame_ref,
        "scene_ref": s.scene_ref,
        "source": s.source,
        "goal": [_round(v) for v in s.goal.as_list()],
        "waypoints": [[_round(v) for v in row] for row in s.waypoints.poses.tolist()],
        "displacement": _round(s.displacement),
    }


def sample_from_record(rec: dict) -> Sample:
    return Sample(
        frame_ref=rec["frame_ref"],
        scene_ref=rec["scene_ref"],
        goal=Pose2(*rec["goal"]),
        waypoints=Path(np.asarray(rec["waypoints"], dtype=float)),
        source=rec["source"],
        displacement=float(rec["displacement"]),
    )


def sample_line(s: Sample) -> str:
    return json.dumps(sample_to_record(s), separators=(",", ":"), allow_nan=False)


def write_samples(path, samples: Iterable[Sample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(sample_line(s) + "\n")
            n += 1
    return n


def read_samples(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [sample_from_record(json.loads(line)) for line in fh if line.strip()]


# -- statistics -------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    sample_count: int
    total_length_m: float
    total_time_h: float
    avg_velocity_mps: float

    @classmethod
    def of(cls, samples: Sequence[Sample], horizon: float = 5.0) -> "DatasetStats":
        length = math.fsum(path_length(Pose2(), s.waypoints) for s in samples)
        hours = len(samples) * horizon / 3600.0
        return cls(len(samples), length, hours, length / (hours * 3600.0) if hours > 0 else 0.0)

    def as_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "total_length_m": self.total_length_m,
            "total_time_h": self.total_time_h,
            "avg_velocity_mps": self.avg_velocity_mps,
        }


STATS_COLUMNS = ("Dataset", "Split", "#Samples", "Length [m]", "Time [h]", "Avg. vel. [m/s]")


def stats_table(stats: Mapping[str, Mapping[str, DatasetStats]]) -> str:
    """One row per (dataset, split), e.g. ``{"TEL": {"train": ..., "test": ...}}``."""
    rows = [STATS_COLUMNS]
    for name, splits in stats.items():
        for i, (split, s) in enumerate(splits.items()):
            rows.append((name if i == 0 else "", split, str(s.sample_count), f"{s.total_length_m:.1f}",
                         f"{s.total_time_h:.3f}", f"{s.avg_velocity_mps:.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(STATS_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                     for r in rows)


# -- dataset build ----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    k: int = 10
    n: int = 50
    horizon: float = 5.0
    goal_time_window: tuple[float, float] = (1.0, 15.0)  # tg - t0 drawn from (lo, hi]
    frame_stride: int = 10  # use every n-th log entry as a frame
    filters: FilterParams = field(default_factory=FilterParams)
    planner: MppiConfig = field(default_factory=MppiConfig)
    test_scenes: tuple[str, ...] = ()
    seed: int = 0
    teleop: bool = True
    geometric: bool = True


@dataclass
class BuildResult:
    counts: dict
    stats: dict
    rejects: Counter
    unconsumed: list
    files: dict


def _teleop_samples(logs: Sequence[TeleopLog], cfg: DatasetConfig, rejects: Counter) -> list[Sample]:
    lo, hi = cfg.goal_time_window
    out = []
    for log_ in logs:
        for i in range(0, len(log_), cfg.frame_stride):
            t0 = float(log_.timestamps[i])
            if t0 + lo >= log_.t_end:
                break
            rng = np.random.default_rng(frame_seed(cfg.seed, "teleop", log_.frame_refs[i]))
            tg = min(t0 + hi - rng.uniform(0.0, hi - lo), log_.t_end)
            sample = extract_teleop_segment(log_, t0, tg, cfg.n, cfg.horizon)
            keep, reason = filter_sample(sample, None, cfg.filters)
            if keep:
                out.append(sample)
            else:
                rejects[reason] += 1
    return out


def _geo_samples(logs, scenes, cfg: DatasetConfig, rejects: Counter, unconsumed: list) -> list[Sample]:
    out = []
    for log_ in logs:
        for i in range(0, len(log_), cfg.frame_stride):
            ref, frame = log_.scene_refs[i], log_.frame_refs[i]
            scene = scenes.get(ref)
            if scene is None:
                unconsumed.append(f"{frame}: unknown scene {ref!r}")
                continue
            rng = np.random.default_rng(frame_seed(cfg.seed, "geometric", frame))
            planner = replace(cfg.planner, horizon_steps=cfg.n, dt=cfg.horizon / cfg.n)
            samples, rej = generate_geo_samples(scene, frame, Pose2(*log_.poses[i]), cfg.k, planner, rng, ref,
                                                cfg.filters)
            out.extend(samples)
            rejects.update(rej)
    return out


def _split_stats(samples, cfg: DatasetConfig) -> dict:
    stats = {"all": DatasetStats.of(samples, cfg.horizon)}
    if cfg.test_scenes:
        test = set(cfg.test_scenes)
        stats["train"] = DatasetStats.of([s for s in samples if s.scene_ref not in test], cfg.horizon)
        stats["test"] = DatasetStats.of([s for s in samples if s.scene_ref in test], cfg.horizon)
    return stats


def build_dataset(logs: Sequence[TeleopLog], scenes: Mapping[str, WorldScene], config: DatasetConfig,
                  out_dir) -> BuildResult:
    """Write tel.jsonl, geo.jsonl, aug.jsonl (= TEL then GEO) and stats.json under ``out_dir``."""
    if not logs:
        raise ValueError("build_dataset needs at least one teleop log")
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rejects: Counter = Counter()
    unconsumed: list = []
    tel = _teleop_samples(logs, config, rejects) if config.teleop else []
    geo = _geo_samples(logs, scenes, config, rejects, unconsumed) if config.geometric else []
    aug = tel + geo
    files = {"TEL": out / "tel.jsonl", "GEO": out / "geo.jsonl", "AUG": out / "aug.jsonl"}
    counts = {name: write_samples(files[name], s) for name, s in (("TEL", tel), ("GEO", geo), ("AUG", aug))}
    stats = {name: _split_stats(s, config) for name, s in (("TEL", tel), ("GEO", geo), ("AUG", aug))}
    report = {
        "seed": config.seed,
        "stats": {name: {k: v.as_dict() for k, v in split.items()} for name, split in stats.items()},
        "rejects": dict(sorted(rejects.items())),
        "unconsumed": unconsumed,
    }
    files["stats"] = out / "stats.json"
    with open(files["stats"], "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return BuildResult(counts, stats, rejects, unconsumed, files)
