import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from oracles import quarter_arc
from sensorforge.geometry import Box, Pose, Sphere
from sensorforge.localization import GridSpec, degenerate_geometry, localization_error_map, multilaterate
from sensorforge.motion import (DiffDriveState, DiffDriveVehicle, Trajectory, TrajectoryError, TrajectoryPlayer,
                                WaypointActor, diffdrive_step)
from sensorforge.rf import Anchor, RfConfig
from sensorforge.scene import Material, ObjectInstance, Scene

SQUARE = np.array([[0.0, 0, 2], [10, 0, 2], [10, 10, 2], [0, 10, 2]])


# multilateration ---------------------------------------------------------------------------

def test_exact_recovery_3d():
    A = np.array([[0.0, 0, 0], [10, 0, 0], [0, 10, 0], [0, 0, 10]])
    x = np.array([3.0, 4.0, 5.0])
    est = multilaterate(A, np.linalg.norm(A - x, axis=1))
    assert est.converged and np.allclose(est.position, x, atol=1e-9) and est.residual < 1e-9


def test_planar_mode_fixes_height():
    x = np.array([2.0, 7.0, 1.0])
    est = multilaterate(SQUARE, np.linalg.norm(SQUARE - x, axis=1), planar_z=1.0)
    assert np.allclose(est.position, x, atol=1e-9)


def test_centroid_start_at_solution_takes_no_steps():
    A = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    est = multilaterate(A, np.ones(6))
    assert est.iterations == 0 and np.allclose(est.position, 0.0)


def test_degenerate_anchor_sets():
    line = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    assert multilaterate(line, np.ones(4)).degenerate
    assert degenerate_geometry(line[:, :2], 2)
    assert multilaterate(SQUARE[:3], np.ones(3)).degenerate  # too few for 3D
    assert not degenerate_geometry(SQUARE[:, :2], 2)
    with pytest.raises(ValueError):
        multilaterate(SQUARE, np.ones(3))


def test_inconsistent_ranges_do_not_diverge():
    est = multilaterate(SQUARE, np.array([1.0, 30.0, 1.0, 30.0]), planar_z=2.0)
    assert np.all(np.isfinite(est.position)) and np.linalg.norm(est.position) < 100


def test_grid_spec_parse():
    g = GridSpec.parse("x0=0,y0=1,cell=0.5,nx=4,ny=3,z=1.2")
    assert (g.nx, g.ny, g.z) == (4, 3, 1.2) and np.allclose(g.center(1, 2), [1.25, 1.75, 1.2])  # (row, column)
    with pytest.raises(ValueError):
        GridSpec.parse("x0=0,cell=1,nx=2,ny=2")
    with pytest.raises(ValueError):
        GridSpec.parse("x0=0,y0=0,cell=-1,nx=2,ny=2")


def test_error_map_free_space_and_occupied():
    pillar = ObjectInstance(1, "pillar", Box(np.array([0.5, 0.5, 3.0])), Pose(np.array([5.0, 5.0, 0])))
    scene = Scene.build([pillar])
    anchors = [Anchor(f"a{k}", p) for k, p in enumerate(SQUARE)]
    grid = GridSpec(1.25, 1.25, 2.5, 3, 3, z=1.0)
    emap = localization_error_map(scene, anchors, grid, RfConfig(wavelength=0.05, n_rays=1024))
    assert emap.values.shape == (3, 3)
    assert emap.values[1, 1] == -1.0  # centre cell inside the pillar
    free = emap.values[emap.values >= 0]
    assert len(free) == 8 and np.all(free < 1e-6)
    s = emap.summary()
    assert s["occupied"] == 1 and s["unreachable"] == 0 and s["max"] < 1e-6


def test_error_map_nlos_bias():
    """A metal partition hides one anchor; only a longer bounce off a side wall reaches it."""
    metal = Material("metal", {}, 0.5, 0.5, 200.0)
    part = ObjectInstance(1, "part", Box(np.array([0.05, 1.75, 3.0])), Pose(np.array([7.5, 2.75, 0])),
                          material_id="metal")
    side = ObjectInstance(2, "side", Box(np.array([8.0, 0.05, 3.0])), Pose(np.array([5.0, -1.05, 0])),
                          material_id="metal")
    scene = Scene.build([part, side], [metal])
    anchors = [Anchor("a", [0.0, 0, 2]), Anchor("b", [10.0, 0, 2]), Anchor("c", [5.0, 10, 2])]
    grid = GridSpec(5.0, 2.0, 1.0, 1, 1, z=2.0)
    emap = localization_error_map(scene, anchors, grid, RfConfig(wavelength=0.05, n_rays=4096))
    assert emap.values[0, 0] > 0.01


# motion ------------------------------------------------------------------------------------

def test_quarter_arc_example():
    vl, vr, dt = quarter_arc()
    s = diffdrive_step(DiffDriveState(0, 0, 0, 1.0, vl, vr), dt)
    assert (s.x, s.y, s.theta) == pytest.approx((0.0, 1.0, math.pi), abs=1e-12)


def test_straight_and_spin():
    s = diffdrive_step(DiffDriveState(0, 0, math.pi / 2, 0.5, 2.0, 2.0), 1.5)
    assert (s.x, s.y) == pytest.approx((0.0, 3.0), abs=1e-12)
    s = diffdrive_step(DiffDriveState(1, 1, 0, 0.5, -1.0, 1.0), 0.25)
    assert (s.x, s.y, s.theta) == pytest.approx((1.0, 1.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 4.0), st.integers(2, 50))
def test_substeps_match_single_step(vl, vr, dt, n):
    s0 = DiffDriveState(0.3, -0.2, 0.7, 0.6, vl, vr)
    one = diffdrive_step(s0, dt)
    many = s0
    for _ in range(n):
        many = diffdrive_step(many, dt / n)
    assert one.x == pytest.approx(many.x, abs=1e-9) and one.y == pytest.approx(many.y, abs=1e-9)
    assert math.remainder(one.theta - many.theta, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)


def test_vehicle_follows_program_and_records():
    scene = Scene.build([ObjectInstance(1, "robot", Sphere(0.3))])
    veh = DiffDriveVehicle(DiffDriveState(0, 0, 0, 1.0, 0, 0), 1, program=[(0.0, 1.0, 1.0), (1.0, 0.0, 0.0)])
    for _ in range(20):
        veh.step(scene, 0.1)
    assert veh.state.x == pytest.approx(1.0) and np.allclose(scene.get(1).pose.position, [1.0, 0, 0])
    assert len(veh.trajectory) == 21


def test_trajectory_replay_interpolates():
    q = lambda yaw: Rotation.from_euler("z", yaw, degrees=True).as_quat(scalar_first=True)
    tr = Trajectory([(0.0, Pose(np.zeros(3), q(170))), (1.0, Pose(np.array([2.0, 0, 0]), q(-170)))])
    mid = tr.replay(0.5)
    assert np.allclose(mid.position, [1.0, 0, 0])
    assert abs(math.degrees(abs(mid.yaw))) == pytest.approx(180.0)  # shortest arc through 180
    assert tr.replay(1.0) == tr.poses[1]
    with pytest.raises(TrajectoryError):
        tr.replay(1.5)
    with pytest.raises(TrajectoryError):
        tr.record(0.5, Pose())


def test_trajectory_player_reproduces_poses():
    tr = Trajectory([(0.0, Pose()), (1.0, Pose(np.array([1.0, 0, 0])))])
    scene = Scene.build([ObjectInstance(1, "box", Sphere(0.2))])
    pl = TrajectoryPlayer(tr, 1)
    pl.step(scene, 0.25)
    assert np.allclose(scene.get(1).pose.position, [0.25, 0, 0])
    for _ in range(10):
        pl.step(scene, 0.25)
    assert np.allclose(scene.get(1).pose.position, [1.0, 0, 0])


def test_waypoint_actor_walks_and_stops_for_obstacles():
    person = ObjectInstance(1, "person", Sphere(0.3), Pose())
    scene = Scene.build([person])
    actor = WaypointActor(1, [[2.0, 0, 0], [2.0, 2.0, 0]], speed=1.0)
    for _ in range(10):
        actor.step(scene, 0.5)
    assert np.allclose(scene.get(1).pose.position, [2.0, 2.0, 0]) and actor.cursor == 2
    # now a wall right ahead
    scene2 = Scene.build([ObjectInstance(1, "person", Sphere(0.3), Pose()),
                          ObjectInstance(2, "wall", Box(np.array([0.1, 2, 2])), Pose(np.array([0.5, 0, 0])))])
    blocked = WaypointActor(1, [[5.0, 0, 0]], speed=1.0, avoidance_radius=0.5)
    blocked.step(scene2, 0.1)
    assert blocked.blocked and np.allclose(scene2.get(1).pose.position, 0.0)


def test_looping_actor_wraps_cursor():
    scene = Scene.build([ObjectInstance(1, "p", Sphere(0.1), Pose())])
    actor = WaypointActor(1, [[1.0, 0, 0], [0.0, 0, 0]], speed=10.0, loop=True)
    for _ in range(5):
        actor.step(scene, 1.0)
    assert actor.cursor in (0, 1)
