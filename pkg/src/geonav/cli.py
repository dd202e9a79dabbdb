"""Command-line front end: world | plan | dataset | eval | sim.

Every command reads an optional TOML config (``--config``), applies
``--set section.key=value`` overrides and its own flags, and writes only under
its output directory. ``--print-config`` dumps the resolved config and exits.

Exit codes: 0 ok, 1 runtime or input error, 2 sim collided, 3 sim timeout,
4 dataset inputs left unconsumed, 64 usage error.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import sys
from pathlib import Path as FsPath

import numpy as np
import tomli_w

from geonav import datasetgen, evaluation, sim
from geonav._toml import loads as toml_loads
from geonav.geometry import Pose2, VelocityLimits
from geonav.mppi import MppiConfig, plan
from geonav.render import render_ascii
from geonav.worldmodel import WORLD_SPECS, WorldSpec, generate_world, load_scene, save_scene

EXIT_OK, EXIT_ERROR, EXIT_COLLIDED, EXIT_TIMEOUT, EXIT_UNCONSUMED, EXIT_USAGE = 0, 1, 2, 3, 4, 64
SIM_EXIT = {sim.REACHED: EXIT_OK, sim.COLLIDED: EXIT_COLLIDED, sim.TIMEOUT: EXIT_TIMEOUT}
FREE_FORM = {("world", "params"), ("eval", "params")}  # tables whose keys are checked downstream


# -- config -----------------------------------------------------------------------

def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _fields(obj, skip=()) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name not in skip}


def default_config() -> dict:
    mppi = MppiConfig()
    dcfg = datasetgen.DatasetConfig()
    fcfg = sim.FollowerConfig()
    ecfg = evaluation.CaseGenConfig()
    replanner = sim.MppiReplanner().config
    return {
        "output": "out",
        "world": {"spec": "empty", "seed": 0, "params": {}},
        "planner": {**_fields(mppi, skip=("limits",)), "limits": _fields(mppi.limits)},
        "dataset": {
            **_fields(dcfg, skip=("filters", "planner")),
            **_fields(dcfg.filters),
            "synthetic_logs": 0,
            "log_duration": 30.0,
        },
        "eval": {
            "cases": 200,
            "spec": ecfg.spec,
            "params": {k: _plain(v) for k, v in ecfg.params.items()},
            "first_seed": ecfg.first_seed,
            "goal_margin": ecfg.goal_margin,
            "planners": ["mppi", "straight"],
        },
        "sim": {
            **_fields(fcfg, skip=("limits",)),
            "population_size": replanner.population_size,
            "iterations": replanner.iterations,
            "warm_start": True,
        },
    }


def merge_config(base: dict, override: dict, where: tuple = ()) -> dict:
    """Recursive merge; keys absent from ``base`` are rejected except in free-form tables."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = where + (key,)
        if key not in out and where not in FREE_FORM:
            raise ValueError(f"unknown config key {'.'.join(path)!r}")
        if isinstance(out.get(key), dict) and path not in FREE_FORM:
            if not isinstance(value, dict):
                raise ValueError(f"config key {'.'.join(path)!r} must be a table")
            out[key] = merge_config(out[key], value, path)
        elif path in FREE_FORM:
            if not isinstance(value, dict):
                raise ValueError(f"config key {'.'.join(path)!r} must be a table")
            out[key] = dict(value)  # a params table replaces the default one
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return toml_loads(f"v = {text}")["v"]
    except Exception:  # noqa: BLE001 - bare words are strings
        return text


def parse_override(item: str) -> dict:
    """``a.b.c=value`` -> ``{"a": {"b": {"c": value}}}``; value parsed as TOML when possible."""
    key, sep, text = item.partition("=")
    if not sep or not key:
        raise ValueError(f"override {item!r} is not key=value")
    node: dict = {}
    root = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(text.strip())
    return root


def load_config(path=None, overrides=()) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            text = FsPath(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValueError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            cfg = merge_config(cfg, toml_loads(text))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
    for item in overrides:
        cfg = merge_config(cfg, parse_override(item))
    return cfg


def mppi_config(cfg: dict) -> MppiConfig:
    p = dict(cfg["planner"])
    limits = VelocityLimits(**p.pop("limits"))
    return MppiConfig(**{**p, "noise_std": tuple(p["noise_std"]), "limits": limits})


def dataset_config(cfg: dict) -> datasetgen.DatasetConfig:
    d = dict(cfg["dataset"])
    filters = datasetgen.FilterParams(d.pop("min_displacement"), d.pop("min_valid_fraction"))
    for k in ("synthetic_logs", "log_duration"):
        d.pop(k)
    return datasetgen.DatasetConfig(**{**d, "goal_time_window": tuple(d["goal_time_window"]),
                                       "test_scenes": tuple(d["test_scenes"]), "filters": filters,
                                       "planner": mppi_config(cfg)})


def follower_config(cfg: dict) -> sim.FollowerConfig:
    s = cfg["sim"]
    names = {f.name for f in dataclasses.fields(sim.FollowerConfig)} - {"limits"}
    return sim.FollowerConfig(**{k: s[k] for k in names}, limits=mppi_config(cfg).limits)


def world_spec(cfg: dict) -> WorldSpec:
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg["world"]["params"].items()}
    return WorldSpec(cfg["world"]["spec"], params)


# -- helpers ----------------------------------------------------------------------

def _out_dir(cfg: dict) -> FsPath:
    out = FsPath(cfg["output"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot write to output directory {out}: {exc.strerror}") from None
    return out


def _write_run_config(out: FsPath, cfg: dict) -> None:
    (out / "run.toml").write_text(tomli_w.dumps(cfg), encoding="utf-8")


def parse_pose(text: str) -> Pose2:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"pose {text!r} must be x,y[,theta]") from None
    if len(vals) not in (2, 3):
        raise argparse.ArgumentTypeError(f"pose {text!r} must be x,y[,theta]")
    return Pose2(*vals)


def _dump_json(path: FsPath, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _scene_from(args, cfg):
    if args.scene is not None:
        return load_scene(args.scene)
    return generate_world(world_spec(cfg), cfg["world"]["seed"])


def plan_record(res, start: Pose2, goal: Pose2, seed: int) -> dict:
    return {
        "start": start.as_list(),
        "goal": goal.as_list(),
        "seed": seed,
        # a best-effort plan only reached a substitute target
        "success": bool(not res.best_effort and not res.collided
                        and res.final_geodesic_distance <= evaluation.SUCCESS_RADIUS),
        "collided": res.collided,
        "best_effort": res.best_effort,
        "target": None if res.target is None else res.target.as_list(),
        "final_geodesic_distance": res.final_geodesic_distance,
        "cost": dataclasses.asdict(res.cost),
        "cost_history": list(res.cost_history),
        "iterations_run": res.iterations_run,
        "path": res.path.poses.tolist(),
        "commands": res.commands.commands.tolist(),
    }


# -- commands ---------------------------------------------------------------------

def cmd_world(args, cfg) -> int:
    spec = world_spec(cfg)
    scene = generate_world(spec, cfg["world"]["seed"])
    out = _out_dir(cfg)
    save_scene(scene, out)
    print(f"wrote {spec.name} world (seed {cfg['world']['seed']}) to {out}")
    return EXIT_OK


def cmd_plan(args, cfg) -> int:
    scene = _scene_from(args, cfg)
    mcfg = mppi_config(cfg)
    res = plan(scene, args.start, args.goal, mcfg)
    out = _out_dir(cfg)
    _write_run_config(out, cfg)
    rec = plan_record(res, args.start, args.goal, mcfg.seed)
    _dump_json(out / "plan.json", rec)
    if args.render:
        text = render_ascii(scene.obstacles, [res.path], args.start, args.goal)
        (out / "plan.txt").write_text(text + "\n", encoding="utf-8")
    flag = " (best effort)" if res.best_effort else ""
    print(f"plan{flag}: success={rec['success']} collided={res.collided} "
          f"final_gd={res.final_geodesic_distance:.3f} cost={res.cost.total:.3f}")
    return EXIT_OK


def _collect_logs(paths) -> list:
    files = []
    for p in map(FsPath, paths):
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    return [datasetgen.read_teleop_csv(f) for f in files]


def _synthetic_logs(cfg: dict, scene_ref: str) -> list:
    d = cfg["dataset"]
    logs = []
    for i in range(d["synthetic_logs"]):
        rng = np.random.default_rng([d["seed"], i])
        lg = datasetgen.random_log(rng, duration=d["log_duration"], scene_ref=scene_ref)
        logs.append(datasetgen.TeleopLog(lg.timestamps, lg.poses, tuple(f"log{i:04d}/{f}" for f in lg.frame_refs),
                                         lg.scene_refs))
    return logs


def cmd_dataset(args, cfg) -> int:
    if args.scenes is not None:
        root = FsPath(args.scenes)
        scenes = {d.name: load_scene(d) for d in sorted(root.iterdir()) if d.is_dir()}
    else:
        spec = world_spec(cfg)
        scenes = {f"{spec.name}-{cfg['world']['seed']}": generate_world(spec, cfg["world"]["seed"])}
    logs = _collect_logs(args.logs or [])
    if cfg["dataset"]["synthetic_logs"]:
        logs += _synthetic_logs(cfg, next(iter(scenes)))
    if not logs:
        raise ValueError("no teleop logs: pass --logs or set dataset.synthetic_logs")
    out = _out_dir(cfg)
    _write_run_config(out, cfg)
    result = datasetgen.build_dataset(logs, scenes, dataset_config(cfg), out)
    print(datasetgen.stats_table(result.stats))
    print("rejects:", ", ".join(f"{k}={v}" for k, v in sorted(result.rejects.items())) or "none")
    for msg in result.unconsumed:
        print(f"unconsumed: {msg}", file=sys.stderr)
    return EXIT_OK if not result.unconsumed else EXIT_UNCONSUMED


def cmd_eval(args, cfg) -> int:
    e = cfg["eval"]
    planners = args.planner or e["planners"]
    for name in planners:
        if name not in evaluation.PLANNERS:
            raise ValueError(f"unknown planner {name!r}; valid: {', '.join(evaluation.PLANNERS)}")
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in e["params"].items()}
    gen = evaluation.CaseGenConfig(e["spec"], params, e["first_seed"], e["goal_margin"])
    cases, scenes, discarded = evaluation.generate_cases(e["cases"], gen)
    out = _out_dir(cfg)
    _write_run_config(out, cfg)
    reports = []
    for name in planners:
        fn = evaluation.mppi_planner(mppi_config(cfg)) if name == "mppi" else evaluation.straight_planner()
        report = evaluation.evaluate(fn, cases, scenes, name)
        evaluation.write_report(out, report)
        reports.append(report)
    table = evaluation.report_table(reports)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"{len(cases)} cases, {discarded} goals discarded by the reachability filter")
    return EXIT_OK


def cmd_sim(args, cfg) -> int:
    if args.scenario == "corridor":
        scene, start, goal, schedule = sim.corridor_scenario()
    elif args.scenario == "wall":
        scene, start, goal, schedule = sim.dynamic_wall_scenario(cfg["world"]["seed"])
    else:
        scene = _scene_from(args, cfg)
        start, goal, schedule = args.start or Pose2(), args.goal, sim.ObstacleSchedule()
        if goal is None:
            raise ValueError("--goal is required unless --scenario is given")
    if args.start is not None:
        start = args.start
    if args.goal is not None:
        goal = args.goal
    if args.schedule is not None:
        schedule = sim.read_schedule(args.schedule)
    s = cfg["sim"]
    fcfg = follower_config(cfg)
    mcfg = dataclasses.replace(mppi_config(cfg), population_size=s["population_size"], iterations=s["iterations"])
    replanner = sim.MppiReplanner(mcfg, warm_start=s["warm_start"])
    state, outcome = sim.run_closed_loop(scene, start, goal, replanner, fcfg, schedule)
    out = _out_dir(cfg)
    _write_run_config(out, cfg)
    sim.write_trace(out / "trace.csv", state)
    sim.write_schedule(out / "schedule.csv", schedule)
    rec = evaluation.outcome_to_record(outcome)
    rec.update(status=state.status, time=state.time, replans=state.replans,
               planner_failures=state.planner_failures, monotone_violations=replanner.monotone_violations,
               events_applied=[[t, e.action, *e.region] for t, e in state.events_applied])
    del rec["path"]  # the trace file holds it
    with open(out / "outcome.json", "w", encoding="utf-8") as fh:
        json.dump(rec, fh, indent=2, default=float)
        fh.write("\n")
    gd = "inf" if math.isinf(outcome.final_gd) else f"{outcome.final_gd:.3f}"
    print(f"{state.status} at t={state.time:.2f}s, final_gd={gd}, replans={state.replans}")
    return SIM_EXIT[state.status]


COMMANDS = {"world": cmd_world, "plan": cmd_plan, "dataset": cmd_dataset, "eval": cmd_eval, "sim": cmd_sim}


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 64 so they never look like a sim outcome."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. planner.iterations=12 (repeatable)")
    common.add_argument("--out", help="output directory (overrides config 'output')")
    common.add_argument("--seed", type=int, help="world seed (overrides world.seed)")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")

    parser = _Parser(prog="geonav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("world", parents=[common], help="generate a procedural world",
                       epilog="Extra --name value pairs become world spec parameters (e.g. --width 1.2).")
    p.add_argument("--spec", help=f"one of: {', '.join(WORLD_SPECS)}")

    p = sub.add_parser("plan", parents=[common], help="plan once with MPPI")
    p.add_argument("--scene", help="scene directory (default: generate from [world])")
    p.add_argument("--start", type=parse_pose, default=Pose2(), help="x,y[,theta] (default 0,0,0)")
    p.add_argument("--goal", type=parse_pose, required=True, help="x,y[,theta]")
    p.add_argument("--render", action="store_true", help="also write an ASCII rendering")

    p = sub.add_parser("dataset", parents=[common], help="build TEL/GEO/AUG datasets")
    p.add_argument("--logs", nargs="*", help="teleop CSV files or directories of them")
    p.add_argument("--scenes", help="directory of scene directories, named by scene_ref")

    p = sub.add_parser("eval", parents=[common], help="evaluate planners on generated cases")
    p.add_argument("--planner", action="append", choices=sorted(evaluation.PLANNERS),
                   help="planner to evaluate (repeatable; default from config)")
    p.add_argument("--cases", type=int, help="number of cases (overrides eval.cases)")

    p = sub.add_parser("sim", parents=[common], help="closed-loop simulation")
    p.add_argument("--scenario", choices=["corridor", "wall"], help="built-in scenario (wall uses --seed)")
    p.add_argument("--scene", help="scene directory (default: generate from [world])")
    p.add_argument("--start", type=parse_pose, help="x,y[,theta]")
    p.add_argument("--goal", type=parse_pose, help="x,y[,theta]")
    p.add_argument("--schedule", help="obstacle schedule CSV")
    return parser


def _extra_params(extra: list[str], parser) -> dict:
    params, i = {}, 0
    while i < len(extra):
        flag = extra[i]
        if not flag.startswith("--") or i + 1 >= len(extra):
            parser.error(f"unrecognized arguments: {' '.join(extra[i:])}")
        name, _, inline = flag[2:].partition("=")
        if inline:
            params[name.replace("-", "_")] = _parse_value(inline)
            i += 1
        else:
            params[name.replace("-", "_")] = _parse_value(extra[i + 1])
            i += 2
    return params


def resolve(args, extra, parser) -> dict:
    cfg = load_config(args.config, args.overrides)
    if args.out is not None:
        cfg["output"] = args.out
    if args.seed is not None:
        cfg["world"]["seed"] = args.seed
    if args.command == "world":
        if args.spec is not None:
            if args.spec != cfg["world"]["spec"]:
                cfg["world"]["params"] = {}
            cfg["world"]["spec"] = args.spec
        cfg["world"]["params"].update(_extra_params(extra, parser))
    elif extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "eval" and args.cases is not None:
        cfg["eval"]["cases"] = args.cases
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg = resolve(args, extra, parser)
        if args.print_config:
            sys.stdout.write(tomli_w.dumps(cfg))
            return EXIT_OK
        return COMMANDS[args.command](args, cfg)
    except (ValueError, OSError) as exc:
        print(f"geonav {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
