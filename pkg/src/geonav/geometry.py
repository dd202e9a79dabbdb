"""SE(2) poses, body-frame twists and the piecewise-constant velocity rollout."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]. Works on floats and arrays; in-range values pass through untouched."""
    if isinstance(a, np.ndarray):
        inside = (a > -math.pi) & (a <= math.pi)
        return np.where(inside, a, math.pi - np.mod(math.pi - a, TWO_PI))
    if -math.pi < a <= math.pi:
        return a
    return math.pi - math.fmod(math.fmod(math.pi - a, TWO_PI) + TWO_PI, TWO_PI)


def angle_diff(a, b):
    """Absolute wrapped heading difference |wrap(a - b)|."""
    return abs(wrap_angle(a - b)) if not isinstance(a, np.ndarray) else np.abs(wrap_angle(a - b))


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.theta]

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


IDENTITY = Pose2()


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group product a * b: express pose ``b`` (given in frame ``a``) in a's parent frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def relative_to(reference: Pose2, target: Pose2) -> Pose2:
    """Pose of ``target`` expressed in the frame of ``reference``."""
    c, s = math.cos(reference.theta), math.sin(reference.theta)
    dx, dy = target.x - reference.x, target.y - reference.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, target.theta - reference.theta)


def relative_to_array(reference: Pose2, poses: np.ndarray) -> np.ndarray:
    """Vectorised :func:`relative_to` over an (..., 3) array of poses."""
    c, s = math.cos(reference.theta), math.sin(reference.theta)
    dx = poses[..., 0] - reference.x
    dy = poses[..., 1] - reference.y
    out = np.empty(poses.shape, dtype=float)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = wrap_angle(poses[..., 2] - reference.theta)
    return out


def compose_array(reference: Pose2, poses: np.ndarray) -> np.ndarray:
    """Vectorised :func:`compose` of ``reference`` with an (..., 3) array of poses."""
    c, s = math.cos(reference.theta), math.sin(reference.theta)
    out = np.empty(poses.shape, dtype=float)
    out[..., 0] = reference.x + c * poses[..., 0] - s * poses[..., 1]
    out[..., 1] = reference.y + s * poses[..., 0] + c * poses[..., 1]
    out[..., 2] = wrap_angle(poses[..., 2] + reference.theta)
    return out


@dataclass(frozen=True)
class VelocityLimits:
    vx_max: float = 1.0
    vy_max: float = 0.5
    omega_max: float = 1.0

    def __post_init__(self):
        if min(self.vx_max, self.vy_max, self.omega_max) <= 0:
            raise ValueError("velocity limits must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx_max, self.vy_max, self.omega_max])

    def clamp(self, cmds: np.ndarray) -> np.ndarray:
        lim = self.as_array()
        return np.clip(cmds, -lim, lim)


@dataclass(frozen=True)
class Twist2:
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega])

    def within(self, limits: VelocityLimits, tol: float = 1e-12) -> bool:
        return (
            abs(self.vx) <= limits.vx_max + tol
            and abs(self.vy) <= limits.vy_max + tol
            and abs(self.omega) <= limits.omega_max + tol
        )


@dataclass(frozen=True, eq=False)
class CommandSequence:
    """N body-frame velocity commands [vx, vy, omega], each held for ``dt`` seconds."""

    commands: np.ndarray
    dt: float = 0.1

    def __post_init__(self):
        cmds = np.array(self.commands, dtype=float).reshape(-1, 3)
        cmds.setflags(write=False)
        object.__setattr__(self, "commands", cmds)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.commands)

    def __getitem__(self, i) -> Twist2:
        return Twist2(*self.commands[i])

    @classmethod
    def constant(cls, vx: float, vy: float, omega: float, n: int, dt: float = 0.1) -> "CommandSequence":
        return cls(np.tile([vx, vy, omega], (n, 1)), dt)

    @classmethod
    def zeros(cls, n: int, dt: float = 0.1) -> "CommandSequence":
        return cls(np.zeros((n, 3)), dt)


@dataclass(frozen=True, eq=False)
class Path:
    """Ordered waypoints as an (N, 3) array of [x, y, theta]."""

    poses: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        p = np.array(self.poses, dtype=float).reshape(-1, 3)
        p[:, 2] = wrap_angle(p[:, 2])
        p.setflags(write=False)
        object.__setattr__(self, "poses", p)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i) -> Pose2:
        return Pose2.from_array(self.poses[i])

    def __iter__(self):
        return (Pose2.from_array(p) for p in self.poses)

    @classmethod
    def from_poses(cls, poses) -> "Path":
        return cls(np.array([p.as_list() for p in poses], dtype=float).reshape(-1, 3))

    @property
    def final(self) -> Pose2:
        return self[-1]

    def to_frame(self, reference: Pose2) -> "Path":
        """Re-express all waypoints relative to ``reference``."""
        return Path(relative_to_array(reference, self.poses))

    def from_frame(self, reference: Pose2) -> "Path":
        return Path(compose_array(reference, self.poses))


def rollout_batch(start: Pose2, cmds: np.ndarray, dt: float) -> np.ndarray:
    """Roll out a (P, N, 3) batch of command sequences; returns (P, N, 3) unwrapped poses.

    Headings in the result are accumulated without wrapping; callers that expose
    poses wrap them. Summation order follows the step recurrence exactly.
    """
    cmds = np.asarray(cmds, dtype=float)
    p, n = cmds.shape[0], cmds.shape[1]
    th = np.empty((p, n + 1))
    th[:, 0] = start.theta
    th[:, 1:] = cmds[:, :, 2] * dt
    np.cumsum(th, axis=1, out=th)
    heading = th[:, :-1]
    c, s = np.cos(heading), np.sin(heading)
    vx, vy = cmds[:, :, 0], cmds[:, :, 1]
    x = np.empty((p, n + 1))
    y = np.empty((p, n + 1))
    x[:, 0] = start.x
    y[:, 0] = start.y
    x[:, 1:] = (c * vx - s * vy) * dt
    y[:, 1:] = (s * vx + c * vy) * dt
    np.cumsum(x, axis=1, out=x)
    np.cumsum(y, axis=1, out=y)
    return np.stack([x[:, 1:], y[:, 1:], th[:, 1:]], axis=-1)


def rollout(start: Pose2, cmds: CommandSequence) -> Path:
    """Integrate ``cmds`` from ``start``; waypoint i is the state after command i."""
    if len(cmds) == 0:
        raise ValueError("rollout needs at least one command")
    return Path(rollout_batch(start, cmds.commands[None], cmds.dt)[0])


def path_length(origin: Pose2, path: Path) -> float:
    """Planar length of origin -> w_1 -> ... -> w_N."""
    if len(path) == 0:
        return 0.0
    xy = np.vstack([[origin.x, origin.y], path.poses[:, :2]])
    return float(np.sum(np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))))
