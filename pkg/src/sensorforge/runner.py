"""Run configuration and the file-producing frame loop behind ``sensorforge simulate``.

A run config (YAML or JSON) looks like::

    scene: warehouse.yaml
    duration: 1.0
    seed: 7
    clock: {mode: fixed, fixed_dt: 0.1}
    weather: {rain_rate: 0.0, schedule: [{t: 0.5, rain_rate: 4.0}]}
    vehicles:
      - {name: agv, x: 1, y: 1, theta: 0, track_width: 0.5, program: [[0, 0.5, 0.6]]}
    sensors:
      - type: lidar
        name: top
        mount: {vehicle: agv, pose: {position: [0, 0, 1.2]}}
        channels: 16
        ...

Angles in config files are degrees.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from .echo import EchoConfig, PulseEcho
from .geometry import Pose
from .io import (FormatError, dump_json, load_scene, load_structured, pose_from_dict, read_anchors, write_echoes,
                 write_labels, write_paths, write_points, write_trajectory)
from .kernel import FrameContext, SimClock, Simulation, Weather
from .lidar import Lidar, LidarConfig, ReflectanceLimitCurve
from .motion import DiffDriveState, DiffDriveVehicle, WaypointActor
from .rf import RfConfig, RfTag
from .rng import derive_seed
from .scene import Scene


class ConfigError(ValueError):
    """Schema violation; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


def _get(d: dict, key: str, where: str, kind=None, default=...):
    path = f"{where}.{key}" if where else key
    if key not in d:
        if default is ...:
            raise ConfigError(path, "missing")
        return default
    v = d[key]
    if kind is not None:
        try:
            v = kind(v)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected {kind.__name__}, got {d[key]!r}") from None
    return v


def _only(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(where or "<root>", "expected a mapping")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}.{extra[0]}" if where else extra[0], "unknown key")


@dataclass
class SensorSpec:
    type: str
    name: str
    mount_vehicle: str | None
    mount_pose: Pose
    params: dict


@dataclass
class RunConfig:
    scene: Path
    duration: float
    seed: int = 0
    clock_mode: str = "fixed"
    dt: float = 0.1
    scale: float = 1.0
    rain_rate: float = 0.0
    rain_schedule: list = field(default_factory=list)  # [(t, rain_rate)]
    vehicles: list = field(default_factory=list)
    actors: list = field(default_factory=list)
    sensors: list[SensorSpec] = field(default_factory=list)
    anchors_file: Path | None = None
    output: Path | None = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError("config", f"file {p} does not exist")
        try:
            data = load_structured(p)
        except FormatError as exc:
            raise ConfigError("config", str(exc)) from None
        return cls.from_dict(data, p.parent)

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        _only(d, {"scene", "duration", "seed", "clock", "weather", "vehicles", "actors", "sensors", "anchors",
                  "output"}, "")
        scene = base / _get(d, "scene", "", str)
        if not scene.is_file():
            raise ConfigError("scene", f"file {scene} does not exist")
        duration = _get(d, "duration", "", float)
        if not duration > 0:
            raise ConfigError("duration", "must be > 0")
        seed = _get(d, "seed", "", int, 0)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        clock = d.get("clock", {}) or {}
        _only(clock, {"mode", "fixed_dt", "scale"}, "clock")
        mode = _get(clock, "mode", "clock", str, "fixed")
        if mode not in ("fixed", "realtime"):
            raise ConfigError("clock.mode", "must be 'fixed' or 'realtime'")
        dt = _get(clock, "fixed_dt", "clock", float, 0.1)
        scale = _get(clock, "scale", "clock", float, 1.0)
        if not dt > 0:
            raise ConfigError("clock.fixed_dt", "must be > 0")
        if not scale > 0:
            raise ConfigError("clock.scale", "must be > 0")
        weather = d.get("weather", {}) or {}
        _only(weather, {"rain_rate", "schedule"}, "weather")
        rain = _get(weather, "rain_rate", "weather", float, 0.0)
        if rain < 0:
            raise ConfigError("weather.rain_rate", "must be >= 0")
        schedule = []
        for k, item in enumerate(weather.get("schedule", []) or []):
            w = f"weather.schedule[{k}]"
            _only(item, {"t", "rain_rate"}, w)
            r = _get(item, "rain_rate", w, float)
            if r < 0:
                raise ConfigError(f"{w}.rain_rate", "must be >= 0")
            schedule.append((_get(item, "t", w, float), r))
        vehicles = []
        for k, v in enumerate(d.get("vehicles", []) or []):
            w = f"vehicles[{k}]"
            _only(v, {"name", "object", "x", "y", "z", "theta", "track_width", "program"}, w)
            prog = []
            for q, step in enumerate(v.get("program", []) or []):
                if not isinstance(step, (list, tuple)) or len(step) != 3:
                    raise ConfigError(f"{w}.program[{q}]", "expected [t, v_left, v_right]")
                prog.append(tuple(float(s) for s in step))
            tw = _get(v, "track_width", w, float)
            if not tw > 0:
                raise ConfigError(f"{w}.track_width", "must be > 0")
            vehicles.append({"name": _get(v, "name", w, str), "object": v.get("object"),
                             "x": _get(v, "x", w, float, 0.0), "y": _get(v, "y", w, float, 0.0),
                             "z": _get(v, "z", w, float, 0.0), "theta": math.radians(_get(v, "theta", w, float, 0.0)),
                             "track_width": tw, "program": prog})
        names = [v["name"] for v in vehicles]
        if len(set(names)) != len(names):
            raise ConfigError("vehicles", "duplicate vehicle names")
        actors = []
        for k, a in enumerate(d.get("actors", []) or []):
            w = f"actors[{k}]"
            _only(a, {"object", "waypoints", "speed", "avoidance_radius", "loop"}, w)
            wps = a.get("waypoints")
            if not wps:
                raise ConfigError(f"{w}.waypoints", "needs at least one waypoint")
            speed = _get(a, "speed", w, float)
            if speed < 0:
                raise ConfigError(f"{w}.speed", "must be >= 0")
            actors.append({"object": _get(a, "object", w, str), "waypoints": wps, "speed": speed,
                           "avoidance_radius": _get(a, "avoidance_radius", w, float, 0.5),
                           "loop": bool(a.get("loop", False))})
        sensors = []
        for k, s in enumerate(d.get("sensors", []) or []):
            w = f"sensors[{k}]"
            if not isinstance(s, dict):
                raise ConfigError(w, "expected a mapping")
            kind = _get(s, "type", w, str)
            if kind not in ("lidar", "echo", "rf"):
                raise ConfigError(f"{w}.type", "must be lidar, echo or rf")
            mount = s.get("mount", {}) or {}
            _only(mount, {"vehicle", "pose"}, f"{w}.mount")
            veh = mount.get("vehicle")
            if veh is not None and veh not in names:
                raise ConfigError(f"{w}.mount.vehicle", f"unknown vehicle {veh!r}")
            try:
                pose = pose_from_dict(mount.get("pose"))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{w}.mount.pose", str(exc)) from None
            params = {key: val for key, val in s.items() if key not in ("type", "name", "mount")}
            spec = SensorSpec(kind, str(s.get("name", f"{kind}{k}")), veh, pose, params)
            _build_sensor(spec, seed, k, w)  # validate now, fail before running
            sensors.append(spec)
        snames = [s.name for s in sensors]
        if len(set(snames)) != len(snames):
            raise ConfigError("sensors", "duplicate sensor names")
        anchors_file = None
        if d.get("anchors"):
            anchors_file = base / str(d["anchors"])
            if not anchors_file.is_file():
                raise ConfigError("anchors", f"file {anchors_file} does not exist")
        out = base / str(d["output"]) if d.get("output") else None
        return cls(scene, duration, seed, mode, dt, scale, rain, schedule, vehicles, actors, sensors, anchors_file, out)


def _deg(v) -> float:
    return math.radians(float(v))


def _build_sensor(spec: SensorSpec, seed: int, index: int, where: str, anchors=()):
    p = dict(spec.params)

    def take(key, kind=float, default=...):
        return _get(p, key, where, kind, default)

    try:
        if spec.type == "lidar":
            _only(p, {"channels", "elevation_angles", "fov_low", "fov_high", "points_per_rotation", "rotation_rate",
                      "max_range", "limit_curve", "rain_a", "rain_b", "band", "seed"}, where)
            curve_raw = take("limit_curve", list)
            try:
                curve = ReflectanceLimitCurve(tuple((float(a), float(b)) for a, b in curve_raw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.limit_curve", str(exc)) from None
            common = dict(points_per_rotation=take("points_per_rotation", int), rotation_rate=take("rotation_rate"),
                          max_range=take("max_range"), limit_curve=curve, rain_a=take("rain_a"), rain_b=take("rain_b"),
                          band=take("band", str, "nir905"), seed=take("seed", int, derive_seed(seed, index)))
            channels = take("channels", int)
            if "elevation_angles" in p:
                cfg = LidarConfig(channels=channels, elevation_angles=tuple(_deg(a) for a in p["elevation_angles"]),
                                  **common)
            else:
                cfg = LidarConfig.uniform(channels, _deg(take("fov_low")), _deg(take("fov_high")), **common)
            return Lidar(cfg, spec.name, spec.mount_pose)
        if spec.type == "echo":
            _only(p, {"n_rays", "fov_azimuth", "fov_elevation", "attenuation_limit", "receiver_opening_angle",
                      "spreading_ref", "atmospheric_coeff", "rain_coeff", "max_bounces", "capture_radius", "mode"},
                  where)
            cfg = EchoConfig(
                n_rays=take("n_rays", int), fov_azimuth=_deg(take("fov_azimuth")),
                fov_elevation=_deg(take("fov_elevation")), attenuation_limit=take("attenuation_limit"),
                receiver_opening_angle=_deg(take("receiver_opening_angle")), spreading_ref=take("spreading_ref",
                                                                                                 float, 1.0),
                atmospheric_coeff=take("atmospheric_coeff", float, 0.0), rain_coeff=take("rain_coeff", float, 0.0),
                max_bounces=take("max_bounces", int, 3), capture_radius=take("capture_radius", float, 0.05),
                mode=take("mode", str, "3D"))
            return PulseEcho(cfg, spec.name, spec.mount_pose)
        _only(p, {"wavelength", "speed", "max_interactions", "attenuation_floor", "spreading_ref", "n_rays",
                  "capture_radius"}, where)
        cfg = RfConfig(wavelength=take("wavelength"), speed=take("speed", float, 299_792_458.0),
                       max_interactions=take("max_interactions", int, 3),
                       attenuation_floor=take("attenuation_floor", float, 120.0),
                       spreading_ref=take("spreading_ref", float, 1.0), n_rays=take("n_rays", int, 4096),
                       capture_radius=take("capture_radius", float, 0.05))
        return RfTag(cfg, anchors, spec.name, spec.mount_pose)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


class _Mounted:
    """Adapter giving a sensor the current pose of the vehicle it rides on."""

    def __init__(self, sensor, vehicle: DiffDriveVehicle | None):
        self.sensor = sensor
        self.vehicle = vehicle
        self.name = sensor.name

    def evaluate(self, scene: Scene, frame: FrameContext):
        pose = self.vehicle.pose if self.vehicle is not None else None
        return self.sensor.evaluate(scene, frame, pose)


@dataclass
class RunSummary:
    frames: int
    sim_time: float
    outputs: dict


def run(config: RunConfig, out_dir) -> RunSummary:
    """Execute the frame loop for ``config.duration`` and write every output file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        scene, anchors = load_scene(config.scene)
    except FormatError as exc:
        raise ConfigError("scene", str(exc)) from None
    if config.anchors_file is not None:
        anchors = anchors + read_anchors(config.anchors_file)
    clock = SimClock(config.clock_mode, scale=config.scale, fixed_dt=config.dt)
    sim = Simulation(scene, clock, Weather(config.rain_rate))
    by_name = {o.name: o.object_id for o in scene.objects}
    vehicles = {}
    for v in config.vehicles:
        oid = None
        if v["object"] is not None:
            if v["object"] not in by_name:
                raise ConfigError(f"vehicles.{v['name']}.object", f"no scene object named {v['object']!r}")
            oid = by_name[v["object"]]
        veh = DiffDriveVehicle(DiffDriveState(v["x"], v["y"], v["theta"], v["track_width"]), oid, v["program"],
                               v["z"], v["name"])
        vehicles[v["name"]] = veh
        sim.add_mover(veh)
    for k, a in enumerate(config.actors):
        if a["object"] not in by_name:
            raise ConfigError(f"actors[{k}].object", f"no scene object named {a['object']!r}")
        sim.add_mover(WaypointActor(by_name[a["object"]], a["waypoints"], a["speed"], a["avoidance_radius"],
                                    loop=a["loop"], name=a["object"]))
    for k, spec in enumerate(config.sensors):
        s = _build_sensor(spec, config.seed, k, f"sensors[{k}]", anchors)
        sim.add_sensor(_Mounted(s, vehicles.get(spec.mount_vehicle)))
        (out / spec.name).mkdir(exist_ok=True)
    schedule = sorted(config.rain_schedule)
    n_frames = clock.frames_for(config.duration) if config.clock_mode == "fixed" else None
    counts = {s.name: 0 for s in config.sensors}
    frame = 0
    last = time.perf_counter()
    while True:
        if n_frames is not None and frame >= n_frames:
            break
        if n_frames is None and clock.sim_time >= config.duration - 1e-12:
            break
        while schedule and schedule[0][0] <= clock.sim_time + 1e-12:
            sim.weather.set_rain(schedule.pop(0)[1])
        now = time.perf_counter()
        result = sim.step(now - last)
        last = now
        for spec in config.sensors:
            data = result.outputs[spec.name]
            target = out / spec.name / f"frame_{frame:05d}"
            if spec.type == "lidar":
                write_points(target.with_suffix(".txt"), data)
                counts[spec.name] += len(data)
            elif spec.type == "echo":
                write_echoes(target.with_suffix(".csv"), data)
                counts[spec.name] += len(data)
            else:
                paths = [p for a in anchors for p in data.paths[a.anchor_id]]
                write_paths(target.with_suffix(".csv"), paths)
                counts[spec.name] += len(paths)
        frame += 1
    write_labels(out / "labels.csv", scene.labels)
    if vehicles:
        (out / "trajectories").mkdir(exist_ok=True)
        for name, veh in vehicles.items():
            write_trajectory(out / "trajectories" / f"{name}.csv", veh.trajectory)
    summary = RunSummary(frame, clock.sim_time, counts)
    dump_json({"frames": frame, "sim_time": clock.sim_time, "outputs": counts,
               "clock": config.clock_mode}, out / "summary.json")
    return summary

