import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_objects, random_rays
from oracles import brute_force
from sensorforge.geometry import Box, Plane, Pose, Sphere, box_mesh, uv_sphere_mesh
from sensorforge.rng import SplitMix64, derive_seed, hashed_normals, hashed_uniforms
from sensorforge.scene import (LabelRegistry, Material, ObjectInstance, Scene, SceneError, color_label,
                               label_color)


# rng ---------------------------------------------------------------------------------------

def test_splitmix_reference_outputs():
    g = SplitMix64(1234567)
    assert [g.next_u64() for _ in range(2)] == [6457827717110365317, 3203168211198807973]


def test_derive_seed_is_stream_output():
    g = SplitMix64(99)
    outs = [g.next_u64() for _ in range(5)]
    assert [derive_seed(99, i) for i in range(5)] == outs


def test_hashed_draws_are_counter_addressed():
    c = np.arange(1000, dtype=np.uint64)
    u = hashed_uniforms(5, c)
    assert np.all((u >= 0) & (u < 1))
    assert np.array_equal(hashed_uniforms(5, c[500:]), u[500:])
    z = hashed_normals(5, c[::-1])
    assert np.array_equal(z[::-1], hashed_normals(5, c))


def test_splitmix_integer_and_sample():
    g = SplitMix64(3)
    vals = [g.integer(7) for _ in range(2000)]
    assert set(vals) == set(range(7))
    picked = SplitMix64(3).sample(list(range(20)), 5)
    assert len(set(picked)) == 5


# labels ------------------------------------------------------------------------------------

def test_label_color_example():
    assert label_color(70000) == (1, 17, 112)
    assert color_label((1, 17, 112)) == 70000


@given(st.integers(0, 2**24 - 1))
def test_label_color_roundtrip(k):
    assert color_label(label_color(k)) == k


def test_label_registry_rejects_duplicates_and_range():
    reg = LabelRegistry()
    a = reg.register("a")
    assert a == 1 and reg.name(a) == "a" and reg.id_for("a") == 1
    with pytest.raises(SceneError):
        reg.register("a")
    with pytest.raises(SceneError):
        label_color(2**24)


# scene -------------------------------------------------------------------------------------

def _ray(scene, o, d, **kw):
    return scene.raycast(np.asarray(o, float), np.asarray(d, float), **kw)


def test_single_box_hit():
    scene = Scene.build([ObjectInstance(1, "b", Box(np.array([1.0, 1.0, 1.0])), Pose(np.array([5.0, 0, 0])))])
    h = _ray(scene, [0, 0, 0], [1, 0, 0])
    assert h.object_id == 1 and math.isclose(h.distance, 4.0)
    assert np.allclose(h.surface_normal, [-1, 0, 0]) and h.incidence_angle == pytest.approx(0.0)
    assert _ray(scene, [0, 0, 0], [-1, 0, 0]) is None
    assert _ray(scene, [0, 0, 0], [1, 0, 0], max_range=3.9) is None


def test_inside_hits_are_two_sided():
    scene = Scene.build([ObjectInstance(1, "s", Sphere(2.0), Pose())])
    h = _ray(scene, [0, 0, 0], [0, 0, 1])
    assert math.isclose(h.distance, 2.0) and not h.front_face
    assert np.allclose(h.surface_normal, [0, 0, -1])


def test_non_unit_direction_rejected():
    scene = Scene.build([ObjectInstance(1, "s", Sphere(1.0), Pose())])
    with pytest.raises(SceneError):
        scene.raycast_many(np.zeros((1, 3)), np.array([[2.0, 0, 0]]))


def test_invisibility_per_sensor():
    near = ObjectInstance(1, "near", Box(np.array([0.1, 1, 1])), Pose(np.array([2.0, 0, 0])),
                          invisible_to=frozenset({"lidar"}))
    far = ObjectInstance(2, "far", Box(np.array([0.1, 1, 1])), Pose(np.array([5.0, 0, 0])))
    scene = Scene.build([near, far])
    assert _ray(scene, [0, 0, 0], [1, 0, 0]).object_id == 1
    assert _ray(scene, [0, 0, 0], [1, 0, 0], sensor_id="lidar").object_id == 2
    assert _ray(scene, [0, 0, 0], [1, 0, 0], sensor_id="sonar").object_id == 1


def test_add_remove_and_pose_updates():
    scene = Scene.build([ObjectInstance(1, "a", Sphere(1.0), Pose(np.array([5.0, 0, 0])))])
    oid = scene.add_object(ObjectInstance(0, "b", Sphere(1.0), Pose(np.array([3.0, 0, 0]))))
    assert _ray(scene, [0, 0, 0], [1, 0, 0]).object_id == oid
    scene.set_pose(oid, Pose(np.array([0.0, 9.0, 0])))
    assert _ray(scene, [0, 0, 0], [1, 0, 0]).object_id == 1
    scene.remove_object(1)
    assert _ray(scene, [0, 0, 0], [1, 0, 0]) is None
    with pytest.raises(SceneError):
        scene.remove_object(1)
    with pytest.raises(SceneError):
        scene.add_object(ObjectInstance(oid, "dup", Sphere(1.0)))


def test_unknown_material_rejected():
    with pytest.raises(SceneError):
        Scene.build([ObjectInstance(1, "a", Sphere(1.0), material_id="nope")])


def test_mutated_scene_matches_fresh_build(rng):
    """1000 pallets added one by one, then some moved/removed, against a scene built in one go."""
    pallets = [ObjectInstance(k + 1, f"p{k}", Box(rng.uniform(0.2, 0.6, 3)),
                              Pose(np.append(rng.uniform(-30, 30, 2), 0.0))) for k in range(1000)]
    grown = Scene.build([])
    for p in pallets:
        grown.add_object(p)
    for k in range(0, 1000, 7):
        grown.remove_object(k + 1)
    moved = {}
    for k in range(3, 1000, 11):
        if k + 1 in grown:
            moved[k + 1] = Pose(np.append(rng.uniform(-30, 30, 2), 0.0))
            grown.set_pose(k + 1, moved[k + 1])
    final = [replace_pose(p, moved.get(p.object_id)) for p in pallets if p.object_id in grown]
    fresh = Scene.build(final)
    o, d = random_rays(rng, 5000, extent=60.0)
    a, b = grown.raycast_many(o, d), fresh.raycast_many(o, d)
    assert np.array_equal(a.hit, b.hit) and np.array_equal(a.object_id, b.object_id)
    assert np.array_equal(a.distance[a.hit], b.distance[b.hit])


def replace_pose(obj, pose):
    return obj if pose is None else replace(obj, pose=pose)


def test_large_mesh_matches_brute_force(rng):
    mesh = uv_sphere_mesh(5.0, 72, 72)
    assert mesh.n_triangles >= 10_000
    objs = [ObjectInstance(1, "m", mesh, Pose(np.array([1.0, 2.0, 0.5])))]
    scene = Scene.build(objs)
    o, d = random_rays(rng, 300, extent=20.0)
    h = scene.raycast_many(o, d)
    t, ids = brute_force(objs, o, d)
    assert np.array_equal(np.isfinite(t), h.hit)
    assert np.allclose(h.distance[h.hit], t[h.hit], rtol=1e-9, atol=1e-9)


def test_incidence_angle_range(rng):
    scene = Scene.build(random_objects(rng, 60), [Material(f"m{k}", {"*": 0.5}) for k in range(5)])
    o, d = random_rays(rng, 3000)
    h = scene.raycast_many(o, d)
    th = h.incidence_angle[h.hit]
    assert np.all((th >= 0) & (th <= math.pi / 2))
    assert np.allclose(np.linalg.norm(h.normal[h.hit], axis=1), 1.0)
    assert np.all(np.einsum("ij,ij->i", h.normal[h.hit], d[h.hit]) <= 1e-12)


def test_one_tlas_leaf_per_object(rng):
    objs = random_objects(rng, 50)
    scene = Scene.build(objs, [Material(f"m{k}") for k in range(5)])
    # unbounded planes are tested outside the hierarchy
    assert scene.n_bvh_leaves == len(objs) - 1


def test_plane_and_mesh_primitives():
    ground = ObjectInstance(1, "g", Plane(np.array([0.0, 0, 1]), 0.0), Pose())
    crate = ObjectInstance(2, "c", box_mesh([1.0, 1.0, 1.0]), Pose(np.array([0.0, 0, 3.0])))
    scene = Scene.build([ground, crate])
    assert _ray(scene, [0, 0, 10], [0, 0, -1]).object_id == 2
    assert math.isclose(_ray(scene, [5, 0, 10], [0, 0, -1]).distance, 10.0)
    assert _ray(scene, [0, 0, 3], [1, 0, 0]).object_id == 2  # from inside the mesh


def test_contains_point():
    scene = Scene.build([ObjectInstance(1, "b", Box(np.array([1.0, 1.0, 1.0])), Pose()),
                         ObjectInstance(2, "m", box_mesh([0.5, 0.5, 0.5]), Pose(np.array([5.0, 0, 0])))])
    assert scene.contains_point([0.5, 0, 0]) and scene.contains_point([5.2, 0.1, 0])
    assert not scene.contains_point([3.0, 0, 0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 3.0))
def test_sphere_distance_property(y, z, r):
    scene = Scene.build([ObjectInstance(1, "s", Sphere(r), Pose(np.array([10.0, y, z])))])
    h = _ray(scene, [0, 0, 0], [1, 0, 0])
    off = math.hypot(y, z)
    if off < r - 1e-9:
        assert h is not None and math.isclose(h.distance, 10.0 - math.sqrt(r * r - off * off), rel_tol=1e-12)
    elif off > r + 1e-9:
        assert h is None
