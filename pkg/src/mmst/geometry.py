"""Reference-frame transforms and kinematic features of tracked poses.

The agent frame is anchored at a pose: +x along heading, +y to the
left, origin at the agent.  All operations here are pure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InsufficientHistoryError

GLOBAL = "global"
AGENT = "agent"


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.asarray((-a + np.pi) % (2.0 * np.pi))
    return -(out - np.pi) if out.ndim else float(-(out - np.pi))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not np.isfinite([self.x, self.y, self.yaw]).all():
            raise ContractError("pose coordinates must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass
class Trajectory:
    """Ordered (x, y) positions sampled at a fixed period."""

    points: np.ndarray
    frame: str = GLOBAL
    period: float = 0.5

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 1:
            raise ContractError("trajectory needs an (N, 2) array with N >= 1")
        if self.period <= 0:
            raise ContractError("trajectory period must be positive")
        if not np.isfinite(self.points).all():
            raise ContractError("trajectory coordinates must be finite")


def _rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def transform_to_frame(points: np.ndarray, origin: Pose) -> np.ndarray:
    """Express global points in the frame anchored at ``origin``."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts - origin.xy) @ _rotation(origin.yaw)


def transform_from_frame(points: np.ndarray, origin: Pose) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ _rotation(origin.yaw).T + origin.xy


def to_agent_frame(traj: Trajectory, origin: Pose) -> Trajectory:
    if traj.frame != GLOBAL:
        raise ContractError("to_agent_frame expects a global-frame trajectory")
    return Trajectory(transform_to_frame(traj.points, origin), AGENT, traj.period)


def from_agent_frame(traj: Trajectory, origin: Pose) -> Trajectory:
    if traj.frame != AGENT:
        raise ContractError("from_agent_frame expects an agent-frame trajectory")
    return Trajectory(transform_from_frame(traj.points, origin), GLOBAL, traj.period)


def poses_to_array(poses) -> np.ndarray:
    """Stack a pose sequence into an (N, 3) array of x, y, yaw."""
    arr = np.asarray([[p.x, p.y, p.yaw] for p in poses], dtype=np.float64)
    return arr


def motion_features(poses, period: float) -> np.ndarray:
    """Per-timestep [speed, acceleration, heading rate] from raw poses.

    Backward differences keep the features causal; entries before the
    earliest computable index are backfilled from it.  Needs >= 3 poses
    (speed from one difference, acceleration from two).
    """
    arr = poses if isinstance(poses, np.ndarray) else poses_to_array(poses)
    n = len(arr)
    if n < 3:
        raise InsufficientHistoryError(f"motion features need >= 3 poses, got {n}")
    if period <= 0:
        raise ContractError("period must be positive")
    xy, yaw = arr[:, :2], arr[:, 2]
    v = np.empty(n)
    v[1:] = np.linalg.norm(np.diff(xy, axis=0), axis=1) / period
    v[0] = v[1]
    a = np.empty(n)
    a[2:] = np.diff(v[1:]) / period
    a[:2] = a[2]
    dyaw = np.empty(n)
    dyaw[1:] = wrap_angle(np.diff(yaw)) / period
    dyaw[0] = dyaw[1]
    return np.stack([v, a, dyaw], axis=1)


@dataclass
class FeatureStats:
    """Per-feature mean/std of the training split, persisted with checkpoints."""

    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.mean.shape, dtype=bool)

    @classmethod
    def fit(cls, states: np.ndarray) -> "FeatureStats":
        states = np.asarray(states, dtype=np.float64)
        mean = states.mean(axis=0)
        std = states.std(axis=0)
        degenerate = std == 0.0
        if degenerate.any():
            warnings.warn("zero-variance motion feature; using unit divisor",
                          RuntimeWarning, stacklevel=2)
            std = np.where(degenerate, 1.0, std)
        return cls(mean, std, degenerate)


def standardize(states: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return (np.asarray(states, dtype=np.float64) - stats.mean) / stats.std


def destandardize(states: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return np.asarray(states, dtype=np.float64) * stats.std + stats.mean
