import math

import numpy as np
import pytest
from scipy import stats

from conftest import corner_scene, plate_scene
from oracles import mirror_point
from sensorforge.echo import EchoConfig, PulseEcho, echo_families, sample_directions, spreading_loss
from sensorforge.geometry import Box, Pose
from sensorforge.rf import (SPEED_OF_LIGHT, Anchor, RfConfig, RfTag, direction_angles, measure_range, path_phase,
                            trace_paths, trace_paths_multi, two_way_time)
from sensorforge.scene import Material, ObjectInstance, Scene


def _echo(n=20_000, **kw):
    base = dict(n_rays=n, fov_azimuth=math.radians(120), fov_elevation=math.radians(60), attenuation_limit=80.0,
                receiver_opening_angle=math.radians(60))
    base.update(kw)
    return PulseEcho(EchoConfig(**base), "sonar")


# pulse-echo --------------------------------------------------------------------------------

def test_directions_are_uniform_in_solid_angle():
    d = sample_directions(2 * math.pi, math.pi, 20_000)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    # equal-area bands in z and equal sectors in azimuth
    zc = np.histogram(d[:, 2], bins=20, range=(-1, 1))[0]
    ac = np.histogram(np.arctan2(d[:, 1], d[:, 0]), bins=20, range=(-math.pi, math.pi))[0]
    assert stats.chisquare(zc).pvalue > 0.01 and stats.chisquare(ac).pvalue > 0.01


def test_single_ray_is_boresight():
    assert np.allclose(sample_directions(1.0, 1.0, 1), [[1.0, 0.0, 0.0]])
    assert np.allclose(sample_directions(1.0, 1.0, 9, "2D")[:, 2], 0.0)


def test_spreading_loss():
    assert spreading_loss(10.0) == pytest.approx(20.0)
    assert spreading_loss(0.5) == 0.0
    with pytest.raises(ValueError):
        spreading_loss(1.0, 0.0)


def test_plate_echo_power_and_direction():
    echoes = _echo().trace(plate_scene(3.0))
    assert echoes
    for e in echoes:
        assert e.bounce_count == 1 and e.total_path_length == pytest.approx(6.0, abs=1e-6)
        assert e.power <= 0.0
        assert e.power == pytest.approx(-spreading_loss(6.0), abs=1e-9)
        assert np.allclose(e.arrival_direction, [1, 0, 0], atol=1e-9)


def test_material_and_atmospheric_loss():
    mat = Material("felt", {}, acoustic_reflection_loss=6.0)
    plate = ObjectInstance(1, "plate", Box(np.array([0.01, 1.0, 1.0])), Pose(np.array([3.01, 0, 0])),
                           material_id="felt")
    scene = Scene.build([plate], [mat])
    e = _echo(atmospheric_coeff=0.5).trace(scene)[0]
    assert e.power == pytest.approx(-(spreading_loss(6.0) + 6.0 + 3.0), abs=1e-9)
    assert _echo(attenuation_limit=20.0).trace(scene) == []


def test_rain_raises_loss():
    dry = _echo(rain_coeff=0.1).trace(plate_scene(3.0))[0]
    wet = _echo(rain_coeff=0.1).trace(plate_scene(3.0), weather=5.0)[0]
    assert wet.power == pytest.approx(dry.power - 0.5 * 6.0)


def test_corner_families_stable_under_more_rays():
    pose = Pose.from_yaw(0, 0, math.pi / 4)
    a = echo_families([e for e in _echo(20_000).trace(corner_scene(), pose) if e.bounce_count == 2])
    b = echo_families([e for e in _echo(40_000).trace(corner_scene(), pose) if e.bounce_count == 2])
    key = lambda fams: sorted((f[0].surfaces, round(f[0].total_path_length, 4)) for f in fams)
    assert a and key(a) == key(b)


def test_2d_mode_stays_horizontal():
    echoes = _echo(720, mode="2D", fov_azimuth=2 * math.pi).trace(plate_scene(3.0))
    assert echoes and all(abs(e.arrival_direction[2]) < 1e-12 for e in echoes)


# rf ------------------------------------------------------------------------------------------

def test_phase_examples():
    assert path_phase(0.05, 0.05, 0) == 0.0
    assert path_phase(0.025, 0.05, 0) == pytest.approx(math.pi)
    assert path_phase(0.05, 0.05, 1) == pytest.approx(math.pi)
    assert 0.0 <= path_phase(123.456, 0.0462, 3) < 2 * math.pi


def test_free_space_single_path():
    paths = trace_paths(Scene.build([]), np.zeros(3), Anchor("a", [3.0, 4.0, 0.0]), RfConfig(wavelength=0.05))
    assert len(paths) == 1
    p = paths[0]
    assert p.total_length == pytest.approx(5.0, abs=1e-12) and p.tof == pytest.approx(5.0 / SPEED_OF_LIGHT)
    assert p.interaction_count == 0 and np.allclose(p.aod, [0.6, 0.8, 0.0]) and np.allclose(p.aoa, [-0.6, -0.8, 0])
    assert p.phase == pytest.approx(0.0, abs=1e-9)  # 100 whole wavelengths
    assert direction_angles(p.aod)[0] == pytest.approx(math.atan2(4, 3))


def test_wall_reflection_geometry(wall_scene):
    paths = trace_paths(wall_scene, np.zeros(3), Anchor("a", [10.0, 0, 0]), RfConfig(wavelength=0.05))
    refl = [p for p in paths if p.reflection_count == 1]
    assert len(refl) == 1
    r = refl[0]
    assert r.points[1] == pytest.approx([5.0, 2.0, 0.0])
    img = mirror_point(np.array([10.0, 0, 0]), np.array([0, 2.0, 0]), [0, 1, 0])
    assert r.total_length == pytest.approx(float(np.linalg.norm(img)), abs=1e-9)
    assert r.interactions == (("R", 1),)
    los = [p for p in paths if p.interaction_count == 0][0]
    # concrete: 3 dB extra on reflection, and the longer leg spreads more
    assert r.path_loss > los.path_loss + 3.0
    assert measure_range(paths) == pytest.approx(10.0) and two_way_time(paths) == pytest.approx(20.0 / SPEED_OF_LIGHT)


def test_transmission_through_partition():
    part = ObjectInstance(1, "p", Box(np.array([0.05, 5.0, 3.0])), Pose(np.array([5.0, 0, 0])), material_id="drywall")
    scene = Scene.build([part], [Material("drywall", {}, 0.0, 5.0, 4.0)])
    paths = trace_paths(scene, np.zeros(3), Anchor("a", [10.0, 0, 0]), RfConfig(wavelength=0.05))
    through = [p for p in paths if p.interactions and all(k == "T" for k, _ in p.interactions)]
    assert through and through[0].total_length == pytest.approx(10.0, abs=1e-9)
    free = 20 * math.log10(10.0)
    assert through[0].path_loss == pytest.approx(free + 4.0, abs=1e-6)


def test_attenuation_floor_drops_weak_paths(wall_scene):
    cfg = RfConfig(wavelength=0.05, attenuation_floor=20.5)
    paths = trace_paths(wall_scene, np.zeros(3), Anchor("a", [10.0, 0, 0]), cfg)
    assert [p.interaction_count for p in paths] == [0]


def test_moving_anchor_changes_range(wall_scene):
    a = Anchor("a", [10.0, 0, 0])
    tag = RfTag(RfConfig(wavelength=0.05), [a])
    r1 = tag.measure(wall_scene).ranges["a"]
    a.move_to([6.0, 0, 0])
    r2 = tag.measure(wall_scene, Pose.from_yaw(0, 0, 1.0)).ranges["a"]
    assert r1 == pytest.approx(10.0) and r2 == pytest.approx(6.0)


def test_multi_anchor_matches_single():
    scene = Scene.build([ObjectInstance(1, "b", Box(np.array([1.0, 1.0, 2.0])), Pose(np.array([4.0, 3.0, 0])),
                                        material_id="m")], [Material("m", {}, 2.0, 3.0, 10.0)])
    anchors = [Anchor("a", [8.0, 0, 1]), Anchor("b", [0.0, 8.0, 1]), Anchor("c", [8.0, 8.0, 1])]
    cfg = RfConfig(wavelength=0.05, n_rays=2048)
    multi = trace_paths_multi(scene, np.array([0.5, 0.5, 1.0]), anchors, cfg)
    for a in anchors:
        single = trace_paths(scene, np.array([0.5, 0.5, 1.0]), a, cfg)
        assert sorted(p.total_length for p in single) == pytest.approx(sorted(p.total_length for p in multi[a.anchor_id]))
