import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensorforge.geometry import Box, Plane, Pose, Sphere
from sensorforge.kernel import ClockError, FrameContext, SimClock, Simulation, Weather
from sensorforge.lidar import (Lidar, LidarConfig, ReflectanceLimitCurve, apply_rain, effective_reflectance,
                               range_limit_for)
from sensorforge.scene import Material, ObjectInstance, Scene

CURVE = ReflectanceLimitCurve(((0.1, 20.0), (0.5, 60.0), (0.6, 70.0), (1.0, 100.0)))


def _cfg(channels=1, ppr=360, rate=10.0, max_range=120.0, curve=CURVE, **kw):
    elev = kw.pop("elev", (0.0,) * channels)
    return LidarConfig(channels, elev, ppr, rate, max_range, curve, rain_a=0.01, rain_b=0.6, **kw)


def _ring_scene(radius=10.0, rho=0.8):
    ring = ObjectInstance(1, "ring", Sphere(radius), Pose(), material_id="wall")
    return Scene.build([ring], [Material("wall", {"nir905": rho})])


def test_effective_reflectance_and_limit_examples():
    assert effective_reflectance(0.8, math.pi / 3) == pytest.approx(0.4)
    assert range_limit_for(CURVE, 0.55) == pytest.approx(65.0)
    assert range_limit_for(CURVE, 0.01) == 20.0 and range_limit_for(CURVE, 1.0) == 100.0


def test_limit_curve_validation():
    with pytest.raises(ValueError):
        ReflectanceLimitCurve(((0.5, 10.0), (0.2, 20.0)))
    with pytest.raises(ValueError):
        ReflectanceLimitCurve(((0.1, 30.0), (0.2, 20.0)))
    with pytest.raises(ValueError):
        ReflectanceLimitCurve(())


def test_apply_rain_zero_is_identity():
    d, i = apply_rain(np.array([3.0, 7.0]), np.array([0.5, 0.25]), 0.0, 0.01, 0.6)
    assert d.tolist() == [3.0, 7.0] and i.tolist() == [0.5, 0.25]
    with pytest.raises(ValueError):
        apply_rain(1.0, 1.0, -1.0, 0.01, 0.6)


def test_quarter_turn_sweep():
    lidar = Lidar(_cfg(ppr=360), "l")
    pts = lidar.scan_frame(_ring_scene(), Pose(), 0.025)  # 10 Hz -> 90 degrees
    assert len(pts) == 90
    az = np.degrees(np.arctan2(pts["y"], pts["x"]))
    assert az.min() == pytest.approx(0.0, abs=1e-9) and az.max() == pytest.approx(89.0)
    assert np.allclose(np.hypot(pts["x"], pts["y"]), 10.0)
    # next frame continues where this one stopped
    nxt = lidar.scan_frame(_ring_scene(), Pose(), 0.025)
    assert np.degrees(np.arctan2(nxt["y"][0], nxt["x"][0])) == pytest.approx(90.0)


def test_wall_beyond_limit_is_culled():
    scene = _ring_scene(radius=45.0, rho=0.2)  # limit(0.2) = 30 m
    assert len(Lidar(_cfg(), "l").scan_frame(scene, Pose(), 0.1)) == 0
    assert len(Lidar(_cfg(), "l").scan_frame(_ring_scene(45.0, 0.9), Pose(), 0.1)) == 360


def test_unknown_band_gives_no_return():
    ring = ObjectInstance(1, "ring", Sphere(5.0), Pose(), material_id="glass")
    scene = Scene.build([ring], [Material("glass", {"visible": 0.9})])
    assert len(Lidar(_cfg(), "l").scan_frame(scene, Pose(), 0.1)) == 0


def test_labels_and_intensity_range(rng):
    objs = [ObjectInstance(k + 1, f"b{k}", Box(rng.uniform(0.3, 1.0, 3)),
                           Pose(np.append(rng.uniform(-15, 15, 2), 0.0)), material_id="m") for k in range(40)]
    objs = [o for o in objs if np.linalg.norm(o.pose.position) > 2.5]
    scene = Scene.build(objs + [ObjectInstance(100, "floor", Plane(np.array([0.0, 0, 1]), -1.5), Pose(),
                                               material_id="m")], [Material("m", {"*": 0.7})])
    cfg = LidarConfig.uniform(16, -0.3, 0.2, points_per_rotation=720, rotation_rate=10.0, max_range=80.0,
                              limit_curve=CURVE, rain_a=0.01, rain_b=0.6)
    pts = Lidar(cfg, "l").scan_frame(scene, Pose(), 0.1, 3.0)
    assert len(pts) > 0
    assert np.all((pts["intensity"] >= 0) & (pts["intensity"] <= 1))
    labels = {scene.get(o.object_id).label_id for o in scene.objects}
    assert set(np.unique(pts["label_id"])) <= labels
    assert np.all(np.diff(pts["timestamp"]) >= 0) and pts["timestamp"].max() < 0.1


def test_mount_pose_composition():
    box = ObjectInstance(1, "b", Box(np.array([0.5, 0.5, 3.0])), Pose(np.array([5.0, 5.0, 0.0])), material_id="m")
    scene = Scene.build([box], [Material("m", {"*": 0.9})])
    lidar = Lidar(_cfg(ppr=3600), "l", mount=Pose.from_yaw(0, 0, math.pi / 2))
    pts = lidar.scan_frame(scene, Pose.from_yaw(5.0, 0.0, 0.0), 0.1)
    # in the sensor frame the box sits straight ahead, 4.5 m away
    assert len(pts) and np.min(np.hypot(pts["x"], pts["y"])) == pytest.approx(4.5)
    assert np.all(pts["x"] > 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(1e-4, 0.2), min_size=1, max_size=30))
def test_sweep_never_duplicates_or_skips(dts):
    lidar = Lidar(_cfg(ppr=1000), "l")
    scene = Scene.build([])
    cols = [lidar.beams(scene, Pose(), dt).column for dt in dts]
    allc = np.concatenate(cols)
    assert np.array_equal(allc, np.arange(len(allc)))


def test_seeded_noise_reproducible():
    scene = _ring_scene()
    a = Lidar(_cfg(seed=3), "l").scan_frame(scene, Pose(), 0.1, 10.0)
    b = Lidar(_cfg(seed=3), "l").scan_frame(scene, Pose(), 0.1, 10.0)
    c = Lidar(_cfg(seed=4), "l").scan_frame(scene, Pose(), 0.1, 10.0)
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


# kernel ------------------------------------------------------------------------------------

def test_fixed_clock_has_no_drift():
    c = SimClock("fixed", fixed_dt=0.1)
    for _ in range(1000):
        assert c.advance(5.0) == 0.1
    assert c.sim_time == pytest.approx(100.0, abs=1e-12)
    assert SimClock("fixed", fixed_dt=0.1).frames_for(1.0) == 10


def test_realtime_clock_scales():
    c = SimClock("realtime", scale=2.0)
    assert c.advance(0.05) == pytest.approx(0.1)
    with pytest.raises(ClockError):
        SimClock("realtime", scale=0.0)
    with pytest.raises(ClockError):
        SimClock("warp")


def test_weather_change_applies_at_barrier():
    w = Weather()
    w.set_rain(5.0)
    assert w.rain_rate == 0.0
    w.commit()
    assert w.rain_rate == 5.0
    with pytest.raises(ValueError):
        w.set_rain(-1.0)


class _Probe:
    name = "probe"

    def __init__(self):
        self.seen = []

    def evaluate(self, scene, frame: FrameContext, pose=None):
        self.seen.append((frame.index, frame.t_start, frame.rain_rate, len(scene)))
        return frame.index


def test_simulation_orders_mutations_before_sensors():
    sim = Simulation(Scene.build([]), SimClock("fixed", fixed_dt=0.5))
    probe = _Probe()
    sim.add_sensor(probe)
    sim.schedule(lambda s: s.add_object(ObjectInstance(0, "late", Sphere(1.0))))
    sim.weather.set_rain(2.0)
    r0 = sim.step()
    r1 = sim.step()
    assert r0.outputs["probe"] == 0 and r1.outputs["probe"] == 1
    assert probe.seen == [(0, 0.0, 2.0, 1), (1, 0.5, 2.0, 1)]
    with pytest.raises(ValueError):
        sim.add_sensor(_Probe())
