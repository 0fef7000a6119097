"""Simulation clock, weather state and the frame loop.

Each call to :meth:`Simulation.step` is one frame with a fixed barrier order:

1. clock advance (and pending weather changes take effect),
2. vehicle and actor motion,
3. queued scene mutations (procgen instantiation, runtime add/remove),
4. sensor evaluation against the frozen scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from .scene import Scene


class ClockError(ValueError):
    pass


class SimClock:
    """Scaled real-time or deterministic fixed-step clock.

    In fixed mode the time is ``steps * dt`` (no accumulated drift).
    """

    def __init__(self, mode: str = "fixed", *, scale: float = 1.0, fixed_dt: float = 0.1):
        if mode not in ("realtime", "fixed"):
            raise ClockError(f"clock.mode must be 'realtime' or 'fixed', got {mode!r}")
        if mode == "realtime" and not scale > 0:
            raise ClockError(f"clock.scale must be > 0, got {scale!r}")
        if mode == "fixed" and not fixed_dt > 0:
            raise ClockError(f"clock.fixed_dt must be > 0, got {fixed_dt!r}")
        self.mode = mode
        self.scale = float(scale)
        self.fixed_dt = float(fixed_dt)
        self.steps = 0
        self._realtime = 0.0

    @property
    def sim_time(self) -> float:
        if self.mode == "fixed":
            return self.steps * self.fixed_dt
        return self._realtime

    def advance(self, wall_dt: float = 0.0) -> float:
        """Advance by one frame and return the simulated time step."""
        if wall_dt < 0:
            raise ClockError(f"wall_dt must be >= 0, got {wall_dt!r}")
        if self.mode == "fixed":
            self.steps += 1
            return self.fixed_dt
        dt = wall_dt * self.scale
        self._realtime += dt
        self.steps += 1
        return dt

    def frames_for(self, duration: float) -> int:
        """Number of fixed steps covering ``duration`` seconds."""
        if self.mode != "fixed":
            raise ClockError("frame count is only defined in fixed mode")
        return max(1, math.ceil(duration / self.fixed_dt - 1e-9))


def advance(clock: SimClock, wall_dt: float) -> float:
    return clock.advance(wall_dt)


class Weather:
    """Rain rate in mm/h. Changes are staged and applied at the next barrier."""

    def __init__(self, rain_rate: float = 0.0):
        self._check(rain_rate)
        self._rain = float(rain_rate)
        self._pending: float | None = None

    @staticmethod
    def _check(r):
        if not r >= 0:
            raise ValueError(f"weather.rain_rate must be >= 0, got {r!r}")

    @property
    def rain_rate(self) -> float:
        return self._rain

    def set_rain(self, rain_rate: float) -> None:
        self._check(rain_rate)
        self._pending = float(rain_rate)

    def commit(self) -> None:
        if self._pending is not None:
            self._rain = self._pending
            self._pending = None


def set_rain(weather: Weather, rain_rate: float) -> None:
    weather.set_rain(rain_rate)


@dataclass(frozen=True)
class FrameContext:
    """Read-only snapshot handed to every sensor in a frame."""

    index: int
    t_start: float
    sim_dt: float
    rain_rate: float


class Sensor(Protocol):
    name: str

    def evaluate(self, scene: Scene, frame: FrameContext) -> Any: ...


class Mover(Protocol):
    def step(self, scene: Scene, dt: float) -> None: ...


@dataclass
class FrameResult:
    context: FrameContext
    outputs: dict[str, Any] = field(default_factory=dict)


class Simulation:
    """Single-writer frame loop over a scene."""

    def __init__(self, scene: Scene, clock: SimClock | None = None, weather: Weather | None = None):
        self.scene = scene
        self.clock = clock or SimClock("fixed", fixed_dt=0.1)
        self.weather = weather or Weather()
        self.movers: list[Mover] = []
        self.sensors: list[Sensor] = []
        self._mutations: list[Callable[[Scene], Any]] = []
        self.frame_index = 0

    def add_sensor(self, sensor: Sensor) -> None:
        if any(s.name == sensor.name for s in self.sensors):
            raise ValueError(f"duplicate sensor name {sensor.name!r}")
        self.sensors.append(sensor)

    def add_mover(self, mover: Mover) -> None:
        self.movers.append(mover)

    def schedule(self, mutation: Callable[[Scene], Any]) -> None:
        """Queue a scene mutation for the next barrier."""
        self._mutations.append(mutation)

    def step(self, wall_dt: float = 0.0) -> FrameResult:
        t_start = self.clock.sim_time
        sim_dt = self.clock.advance(wall_dt)
        self.weather.commit()
        for m in self.movers:
            m.step(self.scene, sim_dt)
        pending, self._mutations = self._mutations, []
        for mutate in pending:
            mutate(self.scene)
        self.scene.commit()
        ctx = FrameContext(self.frame_index, t_start, sim_dt, self.weather.rain_rate)
        result = FrameResult(ctx)
        for s in self.sensors:
            result.outputs[s.name] = s.evaluate(self.scene, ctx)
        self.frame_index += 1
        return result
