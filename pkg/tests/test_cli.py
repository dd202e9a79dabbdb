import json

import numpy as np
import pytest

from geonav._toml import loads as toml_loads
from geonav.cli import EXIT_COLLIDED, EXIT_TIMEOUT, EXIT_UNCONSUMED, EXIT_USAGE, main
from geonav.datasetgen import read_samples, straight_log, write_teleop_csv
from geonav.evaluation import EvalReport, read_outcomes
from geonav.sim import read_trace

SMALL_SIM = ["--set", "sim.population_size=64", "--set", "sim.iterations=3"]
SMALL_PLAN = ["--set", "planner.population_size=128", "--set", "planner.iterations=6"]


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def files_under(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


# -- world --------------------------------------------------------------------------

def test_world_writes_grids_and_is_deterministic(tmp_path):
    assert main(["world", "--spec", "corridor", "--width", "1.2", "--seed", "7", "--out", "a"]) == 0
    assert main(["world", "--spec", "corridor", "--width", "1.2", "--seed", "7", "--out", "b"]) == 0
    names = files_under(tmp_path / "a")
    assert names == ["cost.gm2d", "elevation.gm2d", "meta.toml", "obstacles.gm2d", "traversability.gm2d"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    meta = toml_loads((tmp_path / "a" / "meta.toml").read_text())
    assert meta["seed"] == 7 and meta["params"]["width"] == 1.2


def test_world_unknown_spec_names_valid_ones(capsys):
    assert main(["world", "--spec", "maze", "--out", "x"]) == 1
    err = capsys.readouterr().err
    assert "maze" in err and "corridor" in err and "random_obstacles" in err


def test_world_unknown_parameter_rejected(capsys):
    assert main(["world", "--spec", "corridor", "--depth", "3", "--out", "x"]) == 1
    assert "depth" in capsys.readouterr().err


def test_unwritable_output_names_the_path(tmp_path, capsys):
    (tmp_path / "file").write_text("")
    assert main(["world", "--out", "file/sub"]) == 1
    assert "file/sub" in capsys.readouterr().err


def test_usage_errors_do_not_look_like_sim_outcomes():
    with pytest.raises(SystemExit) as exc:
        main(["sim", "--goal", "not-a-pose"])
    assert exc.value.code == EXIT_USAGE != EXIT_COLLIDED
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


# -- config -------------------------------------------------------------------------

def test_print_config_round_trips(tmp_path, capsys):
    assert main(["plan", "--goal", "1,0", "--print-config", "--set", "planner.iterations=7"]) == 0
    text = capsys.readouterr().out
    cfg = toml_loads(text)
    assert cfg["planner"]["iterations"] == 7
    assert cfg["planner"]["population_size"] == 1024
    assert cfg["sim"]["lookahead"] == 0.3
    (tmp_path / "c.toml").write_text(text)
    assert main(["plan", "--goal", "1,0", "--print-config", "--config", "c.toml"]) == 0
    assert capsys.readouterr().out == text
    assert files_under(tmp_path) == ["c.toml"]  # printing the config writes nothing


def test_unknown_config_keys_rejected(tmp_path, capsys):
    (tmp_path / "c.toml").write_text("[planner]\niterationz = 3\n")
    assert main(["plan", "--goal", "1,0", "--config", "c.toml"]) == 1
    assert "iterationz" in capsys.readouterr().err
    assert main(["plan", "--goal", "1,0", "--set", "nope.x=1"]) == 1


# -- plan ---------------------------------------------------------------------------

def test_plan_empty_world(tmp_path):
    assert main(["plan", "--goal", "3,0,0", "--out", "p", "--render", *SMALL_PLAN]) == 0
    rec = json.loads((tmp_path / "p" / "plan.json").read_text())
    assert rec["success"] and not rec["collided"] and not rec["best_effort"]
    assert len(rec["path"]) == 50 and len(rec["commands"]) == 50
    assert all(b <= a for a, b in zip(rec["cost_history"], rec["cost_history"][1:]))
    assert "G" in (tmp_path / "p" / "plan.txt").read_text()
    assert toml_loads((tmp_path / "p" / "run.toml").read_text())["planner"]["iterations"] == 6


def test_plan_goal_off_map_is_flagged_best_effort(tmp_path):
    assert main(["plan", "--goal", "30,0,0", "--out", "p", *SMALL_PLAN]) == 0
    rec = json.loads((tmp_path / "p" / "plan.json").read_text())
    assert rec["best_effort"] and not rec["success"]


def test_plan_malformed_scene(tmp_path, capsys):
    assert main(["world", "--out", "w"]) == 0
    (tmp_path / "w" / "cost.gm2d").write_bytes(b"garbage")
    assert main(["plan", "--scene", "w", "--goal", "1,0", "--out", "p"]) == 1
    assert "cost.gm2d" in capsys.readouterr().err


# -- eval ---------------------------------------------------------------------------

def test_eval_straight_on_empty_worlds(tmp_path, capsys):
    args = ["eval", "--planner", "straight", "--cases", "5", "--out", "e",
            "--set", 'eval.spec="empty"', "--set", "eval.params={}"]
    assert main(args) == 0
    table = (tmp_path / "e" / "table.txt").read_text().splitlines()
    assert table[0].split()[:2] == ["Planner", "Col."]
    summary = json.loads((tmp_path / "e" / "report_straight.json").read_text())
    assert summary["spl_pct"] == pytest.approx(100.0, abs=1.0)
    back = EvalReport.from_outcomes(read_outcomes(tmp_path / "e" / "outcomes_straight.jsonl"))
    assert back.spl_pct == summary["spl_pct"] and back.success_pct == summary["success_pct"]


# -- dataset ------------------------------------------------------------------------

def test_dataset_from_logs(tmp_path, capsys):
    assert main(["world", "--out", "scenes/empty-0"]) == 0
    (tmp_path / "logs").mkdir()
    write_teleop_csv(tmp_path / "logs" / "a.csv", straight_log(speed=0.5, duration=6.0, scene_ref="empty-0"))
    args = ["dataset", "--logs", "logs", "--scenes", "scenes", "--out", "d", *SMALL_PLAN,
            "--set", "dataset.k=2", "--set", "dataset.frame_stride=20"]
    capsys.readouterr()
    assert main(args) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:3] == ["Dataset", "Split", "#Samples"]
    stats = json.loads((tmp_path / "d" / "stats.json").read_text())
    for name, fname in (("TEL", "tel.jsonl"), ("GEO", "geo.jsonl"), ("AUG", "aug.jsonl")):
        assert stats["stats"][name]["all"]["sample_count"] == len(read_samples(tmp_path / "d" / fname))
    # every considered goal is either emitted or counted as a reject
    n_frames = len(range(0, 61, 20))
    assert stats["stats"]["GEO"]["all"]["sample_count"] + sum(
        v for k, v in stats["rejects"].items() if k != "stationary") == 2 * n_frames
    assert "rejects:" in out


def test_dataset_unconsumed_inputs_exit_code(tmp_path):
    assert main(["world", "--out", "scenes/empty-0"]) == 0
    write_teleop_csv(tmp_path / "a.csv", straight_log(duration=3.0, scene_ref="elsewhere"))
    args = ["dataset", "--logs", "a.csv", "--scenes", "scenes", "--out", "d", *SMALL_PLAN,
            "--set", "dataset.k=1", "--set", "dataset.frame_stride=15"]
    assert main(args) == EXIT_UNCONSUMED


# -- sim ----------------------------------------------------------------------------

def test_sim_reached(tmp_path):
    assert main(["sim", "--goal", "3,0,0", "--out", "s", *SMALL_SIM]) == 0
    trace = read_trace(tmp_path / "s" / "trace.csv")
    assert np.all(np.diff(trace[:, 0]) > 0)
    rec = json.loads((tmp_path / "s" / "outcome.json").read_text())
    assert rec["status"] == "reached" and rec["success"]


def test_sim_timeout_exit_code(tmp_path):
    assert main(["sim", "--goal", "3,0,0", "--out", "s", "--set", "sim.max_sim_time=0.5", *SMALL_SIM]) == EXIT_TIMEOUT


def test_sim_collision_and_schedule_times(tmp_path):
    (tmp_path / "sched.csv").write_text("time,action,xmin,ymin,xmax,ymax\n1.0,add,0.9,-4,1.1,4\n")
    code = main(["sim", "--goal", "3,0,0", "--schedule", "sched.csv", "--out", "s", *SMALL_SIM])
    assert code == EXIT_COLLIDED
    rec = json.loads((tmp_path / "s" / "outcome.json").read_text())
    (t, action, *region), = rec["events_applied"]
    assert action == "add" and region == [0.9, -4.0, 1.1, 4.0]
    assert 1.0 <= t < 1.0 + 1 / 30 + 1e-12
    trace = read_trace(tmp_path / "s" / "trace.csv")
    assert trace[-1, 0] > t
    assert sorted(files_under(tmp_path)) == ["s/outcome.json", "s/run.toml", "s/schedule.csv", "s/trace.csv",
                                             "sched.csv"]
