import math

import numpy as np
import pytest

from sensorforge.geometry import Box, Plane, Pose, Sphere, box_mesh, uv_sphere_mesh
from sensorforge.scene import Material, ObjectInstance, Scene


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_objects(rng, n, extent=40.0, meshes=True, plane=True):
    """Mixed primitives scattered in a cube of side ``extent``."""
    objs = []
    shared_mesh = uv_sphere_mesh(1.0, 6, 8)
    for k in range(n):
        pos = rng.uniform(-extent / 2, extent / 2, size=3)
        pose = Pose(pos, random_rotation(rng))
        kind = rng.integers(4) if meshes else rng.integers(2)
        if kind == 0:
            g = Box(rng.uniform(0.1, 1.5, size=3))
        elif kind == 1:
            g = Sphere(float(rng.uniform(0.1, 1.5)))
        elif kind == 2:
            g = box_mesh(rng.uniform(0.1, 1.5, size=3))
        else:
            g = shared_mesh
        objs.append(ObjectInstance(k + 1, f"obj{k}", g, pose, material_id=f"m{k % 5}"))
    if plane:
        objs.append(ObjectInstance(n + 1, "ground", Plane(np.array([0.0, 0.0, 1.0]), -extent), Pose(),
                                   material_id="m0"))
    return objs


def random_materials(rng, bands=("nir905",)):
    return [Material(f"m{k}", {b: float(rng.uniform(0.05, 1.0)) for b in bands}, float(rng.uniform(0, 10)),
                     float(rng.uniform(0, 10)), float(rng.uniform(0, 30))) for k in range(5)]


def random_rays(rng, n, extent=40.0):
    o = rng.uniform(-extent / 2, extent / 2, size=(n, 3))
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return o, d


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def wall_scene():
    """One 20 x 0.1 x 6 m wall whose face lies on the plane y = 2."""
    wall = ObjectInstance(1, "wall", Box(np.array([10.0, 0.05, 3.0])), Pose(np.array([5.0, 2.05, 0.0])),
                          material_id="concrete")
    mats = [Material("concrete", {"*": 0.5}, 3.0, 6.0, 20.0)]
    return Scene.build([wall], mats)


def plate_scene(distance=3.0, tilt=0.0, half=1.0):
    """1 cm thick plate whose front face (untilted) lies on the plane x = ``distance``."""
    pose = Pose.from_euler([distance + 0.01, 0.0, 0.0], yaw=tilt)
    plate = ObjectInstance(1, "plate", Box(np.array([0.01, half, half])), pose)
    return Scene.build([plate])


def corner_scene():
    """Two walls meeting at (4, 4); the dihedral opens toward the origin."""
    w1 = ObjectInstance(1, "w1", Box(np.array([0.05, 3.0, 2.0])), Pose(np.array([4.05, 1.1, 0.0])))
    w2 = ObjectInstance(2, "w2", Box(np.array([3.0, 0.05, 2.0])), Pose(np.array([1.1, 4.05, 0.0])))
    return Scene.build([w1, w2])


DEG = math.pi / 180.0


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
