"""Vehicle kinematics, waypoint actors and trajectory record/replay."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import Pose, normalize_angle
from .scene import Scene


@dataclass(frozen=True)
class DiffDriveState:
    x: float
    y: float
    theta: float
    track_width: float
    v_left: float = 0.0
    v_right: float = 0.0

    def __post_init__(self):
        if not self.track_width > 0:
            raise ValueError("track_width must be > 0")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def v(self) -> float:
        return 0.5 * (self.v_left + self.v_right)

    @property
    def omega(self) -> float:
        return (self.v_right - self.v_left) / self.track_width

    def pose(self, z: float = 0.0) -> Pose:
        return Pose.from_yaw(self.x, self.y, self.theta, z)


def diffdrive_step(state: DiffDriveState, dt: float) -> DiffDriveState:
    """Exact arc integration of the unicycle model over ``dt``."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    v, w, th = state.v, state.omega, state.theta
    if w == 0.0:
        x = state.x + v * dt * math.cos(th)
        y = state.y + v * dt * math.sin(th)
        th1 = th
    else:
        r = v / w
        th1 = th + w * dt
        x = state.x + r * (math.sin(th1) - math.sin(th))
        y = state.y - r * (math.cos(th1) - math.cos(th))
    return replace(state, x=x, y=y, theta=normalize_angle(th1))


class DiffDriveVehicle:
    """Moves a scene object along a piecewise-constant wheel-speed program.

    ``program`` is a list of ``(t_start, v_left, v_right)``; the command active
    at the start of a frame applies for the whole frame.
    """

    def __init__(self, state: DiffDriveState, object_id: int | None = None, program=(), z: float = 0.0,
                 name: str = "vehicle"):
        self.state = state
        self.object_id = object_id
        self.program = sorted((float(t), float(l), float(r)) for t, l, r in program)
        self.z = z
        self.name = name
        self.t = 0.0
        self.trajectory = Trajectory()
        self.trajectory.record(0.0, self.pose)

    @property
    def pose(self) -> Pose:
        return self.state.pose(self.z)

    def _command(self, t: float):
        idx = bisect.bisect_right([p[0] for p in self.program], t + 1e-12) - 1
        return self.program[idx][1:] if idx >= 0 else None

    def step(self, scene: Scene, dt: float) -> None:
        cmd = self._command(self.t)
        if cmd is not None:
            self.state = replace(self.state, v_left=cmd[0], v_right=cmd[1])
        self.state = diffdrive_step(self.state, dt)
        self.t += dt
        if dt > 0:
            self.trajectory.record(self.t, self.pose)
        if self.object_id is not None:
            scene.set_pose(self.object_id, self.pose)


@dataclass
class WaypointActor:
    object_id: int
    waypoints: list
    speed: float
    avoidance_radius: float = 0.5
    cursor: int = 0
    loop: bool = False
    name: str = "actor"
    blocked: bool = field(default=False, init=False)

    def __post_init__(self):
        self.waypoints = [np.asarray(w, dtype=float).reshape(3) for w in self.waypoints]
        if not self.waypoints:
            raise ValueError("an actor needs at least one waypoint")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.avoidance_radius < 0:
            raise ValueError("avoidance_radius must be >= 0")

    def step(self, scene: Scene, dt: float) -> None:
        actor_step(self, scene, dt)


def actor_step(actor: WaypointActor, scene: Scene, dt: float) -> None:
    """Walk toward the current waypoint; hold position if something is ahead."""
    actor.blocked = False
    if actor.cursor >= len(actor.waypoints):
        return
    obj = scene.get(actor.object_id)
    pos = obj.pose.position
    target = actor.waypoints[actor.cursor]
    delta = target - pos
    dist = float(np.linalg.norm(delta))
    reach = actor.speed * dt
    if dist <= 0.0:
        _advance_cursor(actor)
        return
    if reach <= 0.0:
        return
    d = delta / dist
    move = min(reach, dist)
    probe = max(actor.avoidance_radius, move)
    if scene.raycast(pos, d, max_range=probe, ignore=(actor.object_id,)) is not None:
        actor.blocked = True
        return
    new = target.copy() if dist <= reach else pos + move * d
    yaw = math.atan2(d[1], d[0]) if abs(d[0]) + abs(d[1]) > 1e-12 else obj.pose.yaw
    q = Rotation.from_euler("z", yaw).as_quat(scalar_first=True)
    scene.set_pose(actor.object_id, Pose(new, q))
    if dist <= reach:
        _advance_cursor(actor)


def _advance_cursor(actor: WaypointActor) -> None:
    actor.cursor += 1
    if actor.loop and actor.cursor >= len(actor.waypoints):
        actor.cursor = 0


class TrajectoryError(ValueError):
    pass


class Trajectory:
    """Time-stamped poses with linear / slerp replay."""

    def __init__(self, samples=()):
        self.times: list[float] = []
        self.poses: list[Pose] = []
        for t, p in samples:
            self.record(t, p)

    def __len__(self):
        return len(self.times)

    @property
    def samples(self) -> list[tuple[float, Pose]]:
        return list(zip(self.times, self.poses))

    def record(self, t: float, pose: Pose) -> None:
        t = float(t)
        if self.times and not t > self.times[-1]:
            raise TrajectoryError(f"sample time {t} must exceed the previous sample time {self.times[-1]}")
        self.times.append(t)
        self.poses.append(pose)

    def replay(self, t: float) -> Pose:
        if not self.times:
            raise TrajectoryError("cannot replay an empty trajectory")
        t0, t1 = self.times[0], self.times[-1]
        if not t0 <= t <= t1:
            raise TrajectoryError(f"replay time {t} outside recorded range [{t0}, {t1}]")
        i = bisect.bisect_left(self.times, t)
        if self.times[i] == t:
            return self.poses[i]
        ta, tb = self.times[i - 1], self.times[i]
        pa, pb = self.poses[i - 1], self.poses[i]
        s = (t - ta) / (tb - ta)
        pos = (1.0 - s) * pa.position + s * pb.position
        rots = Rotation.from_quat(np.stack([pa.orientation, pb.orientation]), scalar_first=True)
        q = Slerp([0.0, 1.0], rots)([s]).as_quat(scalar_first=True)[0]
        return Pose.normalized(pos, q)


def record(traj: Trajectory, t: float, pose: Pose) -> None:
    traj.record(t, pose)


def replay(traj: Trajectory, t: float) -> Pose:
    return traj.replay(t)


class TrajectoryPlayer:
    """Drives a scene object along a recorded trajectory, holding the last pose at the end."""

    def __init__(self, trajectory: Trajectory, object_id: int | None = None, name: str = "player"):
        if not len(trajectory):
            raise TrajectoryError("cannot replay an empty trajectory")
        self.trajectory = trajectory
        self.object_id = object_id
        self.name = name
        self.t = trajectory.times[0]

    @property
    def pose(self) -> Pose:
        return self.trajectory.replay(min(max(self.t, self.trajectory.times[0]), self.trajectory.times[-1]))

    def step(self, scene: Scene, dt: float) -> None:
        self.t += dt
        if self.object_id is not None:
            scene.set_pose(self.object_id, self.pose)
