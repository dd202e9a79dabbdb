import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geonav.geometry import (
    IDENTITY,
    CommandSequence,
    Path,
    Pose2,
    compose,
    path_length,
    relative_to,
    rollout,
    wrap_angle,
)

finite = st.floats(-50, 50, allow_nan=False)
angles = st.floats(-20, 20, allow_nan=False)
poses = st.builds(Pose2, finite, finite, angles)


def recurrence(start, cmds, dt):
    """Step-by-step evaluation of the kinematic recurrence, wrapping every step."""
    x, y, th = start
    out = []
    for vx, vy, om in cmds:
        c, s = math.cos(th), math.sin(th)
        x, y = x + (c * vx - s * vy) * dt, y + (s * vx + c * vy) * dt
        th = wrap_angle(th + om * dt)
        out.append((x, y, th))
    return np.array(out)


def test_wrap_range():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    a = np.linspace(-20, 20, 1001)
    w = wrap_angle(a)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    assert np.allclose(np.cos(w), np.cos(a)) and np.allclose(np.sin(w), np.sin(a))


@given(st.floats(-100, 100))
def test_wrap_is_idempotent_bitwise(a):
    w = wrap_angle(a)
    assert wrap_angle(w) == w
    arr = np.array([a, w])
    assert wrap_angle(arr)[1] == w and wrap_angle(wrap_angle(arr)).tobytes() == wrap_angle(arr).tobytes()


@given(poses)
def test_pose_theta_always_wrapped(p):
    assert -math.pi < p.theta <= math.pi


def test_rollout_zero_commands_stays_at_origin():
    path = rollout(IDENTITY, CommandSequence.zeros(50))
    assert len(path) == 50
    assert np.all(path.poses == 0.0)


def test_rollout_straight_line():
    path = rollout(IDENTITY, CommandSequence.constant(1.0, 0.0, 0.0, 50, 0.1))
    assert path.final.x == pytest.approx(5.0, abs=1e-12)
    assert path.final.y == 0.0 and path.final.theta == 0.0


def test_rollout_pure_rotation():
    path = rollout(IDENTITY, CommandSequence.constant(0.0, 0.0, math.pi / 5, 50, 0.1))
    assert np.all(path.poses[:, :2] == 0.0)
    assert abs(wrap_angle(path.final.theta - math.pi)) < 1e-12


def test_rollout_matches_recurrence_example():
    cmds = CommandSequence.constant(1.0, 0.0, 0.5, 10, 0.1)
    path = rollout(IDENTITY, cmds)
    expected = recurrence((0.0, 0.0, 0.0), cmds.commands, 0.1)
    assert np.allclose(path.poses[:, :2], expected[:, :2], atol=1e-12, rtol=0)
    assert np.all(np.abs(wrap_angle(path.poses[:, 2] - expected[:, 2])) < 1e-12)


def test_rollout_rejects_empty():
    with pytest.raises(ValueError):
        rollout(IDENTITY, CommandSequence(np.zeros((0, 3))))
    with pytest.raises(ValueError):
        CommandSequence(np.zeros((3, 3)), dt=0.0)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_rollout_determinism_and_displacement_bound(seed):
    rng = np.random.default_rng(seed)
    cmds = CommandSequence(rng.uniform(-1, 1, (30, 3)), 0.1)
    start = Pose2(*rng.uniform(-3, 3, 3))
    a, b = rollout(start, cmds), rollout(start, cmds)
    assert np.array_equal(a.poses, b.poses)
    bound = 0.1 * np.sum(np.hypot(cmds.commands[:, 0], cmds.commands[:, 1]))
    assert start.distance_to(a.final) <= bound + 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_pure_rotation_conserves_position(seed):
    rng = np.random.default_rng(seed)
    cmds = np.zeros((40, 3))
    cmds[:, 2] = rng.uniform(-1, 1, 40)
    start = Pose2(*rng.uniform(-3, 3, 3))
    path = rollout(start, CommandSequence(cmds))
    assert np.all(path.poses[:, 0] == start.x) and np.all(path.poses[:, 1] == start.y)


def test_compose_identity():
    p = Pose2(1.5, -2.0, 2.5)
    assert compose(p, IDENTITY) == p
    assert compose(IDENTITY, p) == p


def test_compose_example():
    r = compose(Pose2(1, 0, math.pi / 2), Pose2(1, 0, 0))
    assert r.x == pytest.approx(1.0, abs=1e-15)
    assert r.y == pytest.approx(1.0, abs=1e-15)
    assert r.theta == pytest.approx(math.pi / 2)


def test_relative_to_examples():
    p = Pose2(0.3, -1.2, 2.0)
    r = relative_to(p, p)
    assert (r.x, r.y, r.theta) == (0.0, 0.0, 0.0)
    r = relative_to(Pose2(0, 0, math.pi / 2), Pose2(0, 1, math.pi / 2))
    assert r.x == pytest.approx(1.0, abs=1e-15)
    assert r.y == pytest.approx(0.0, abs=1e-15)
    assert r.theta == 0.0


def test_frame_round_trip_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        a = Pose2(*rng.uniform(-10, 10, 2), rng.uniform(-4, 4))
        b = Pose2(*rng.uniform(-10, 10, 2), rng.uniform(-4, 4))
        back = compose(a, relative_to(a, b))
        assert abs(back.x - b.x) <= 1e-12
        assert abs(back.y - b.y) <= 1e-12
        assert abs(wrap_angle(back.theta - b.theta)) <= 1e-12


def test_inverse():
    p = Pose2(1.0, 2.0, 0.7)
    q = compose(p, p.inverse())
    assert abs(q.x) < 1e-12 and abs(q.y) < 1e-12 and abs(q.theta) < 1e-12


def test_path_length_examples():
    assert path_length(IDENTITY, Path(np.zeros((50, 3)))) == 0.0
    straight = rollout(IDENTITY, CommandSequence.constant(1.0, 0, 0, 50, 0.1))
    assert path_length(IDENTITY, straight) == pytest.approx(5.0, abs=1e-12)
    zig = Path([[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    assert path_length(IDENTITY, zig) == 2.0


def test_path_frames_round_trip():
    ref = Pose2(2.0, -1.0, 1.1)
    path = rollout(IDENTITY, CommandSequence.constant(0.8, 0.1, 0.3, 20))
    back = path.to_frame(ref).from_frame(ref)
    assert np.allclose(back.poses[:, :2], path.poses[:, :2], atol=1e-12)
