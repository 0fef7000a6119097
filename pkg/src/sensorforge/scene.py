"""Ray-castable scene: objects, materials, instance labels and the BVH."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from . import _accel
from .geometry import Box, Geometry, Mesh, Plane, Pose, Sphere, world_bounds

log = logging.getLogger(__name__)

MAX_LABEL_ID = (1 << 24) - 1
UNLABELED = 0
DIRECTION_TOL = 1e-9
SURFACE_EPS = 1e-6  # origin offset along the normal after a bounce

DEFAULT_MATERIAL = "default"


class SceneError(ValueError):
    """Invalid scene content or query."""


class DynamicsClass(str, enum.Enum):
    STATIC = "static"
    MOVABLE = "movable"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Material:
    """Surface response per sensor modality.

    ``optical_reflectance`` maps a band name to a Lambertian reflectance; the key
    ``"*"`` matches any band. Losses are in dB.
    """

    name: str
    optical_reflectance: Mapping[str, float] = field(default_factory=dict)
    acoustic_reflection_loss: float = 0.0
    rf_reflection_loss: float = 0.0
    rf_transmission_loss: float = 0.0

    def __post_init__(self):
        refl = dict(self.optical_reflectance)
        for band, rho in refl.items():
            if not 0.0 <= rho <= 1.0:
                raise SceneError(f"material {self.name!r}: reflectance for band {band!r} must be in [0, 1], got {rho}")
        for attr in ("acoustic_reflection_loss", "rf_reflection_loss", "rf_transmission_loss"):
            if getattr(self, attr) < 0:
                raise SceneError(f"material {self.name!r}: {attr} must be >= 0")
        object.__setattr__(self, "optical_reflectance", refl)

    def reflectance(self, band: str) -> float | None:
        if band in self.optical_reflectance:
            return self.optical_reflectance[band]
        return self.optical_reflectance.get("*")


def default_material() -> Material:
    # perfect Lambertian reflector in every band, lossless otherwise
    return Material(DEFAULT_MATERIAL, {"*": 1.0})


@dataclass(frozen=True)
class ObjectInstance:
    """One placed object. ``object_id = 0`` asks the scene to assign an id;
    ``label_id = None`` asks it to register a fresh instance label."""

    object_id: int
    name: str
    geometry: Geometry
    pose: Pose = field(default_factory=Pose)
    material_id: str = DEFAULT_MATERIAL
    label_id: int | None = None
    dynamics_class: DynamicsClass = DynamicsClass.STATIC
    invisible_to: frozenset = frozenset()

    def __post_init__(self):
        if self.object_id < 0:
            raise SceneError(f"object_id must be positive, got {self.object_id}")
        object.__setattr__(self, "dynamics_class", DynamicsClass(self.dynamics_class))
        object.__setattr__(self, "invisible_to", frozenset(self.invisible_to))


def label_color(label_id: int) -> tuple[int, int, int]:
    """Big-endian RGB888 split of a 24-bit label id."""
    if not 0 <= label_id <= MAX_LABEL_ID:
        raise SceneError(f"label id {label_id} outside 24-bit range")
    return (label_id >> 16) & 0xFF, (label_id >> 8) & 0xFF, label_id & 0xFF


def color_label(color: tuple[int, int, int]) -> int:
    r, g, b = color
    return (int(r) << 16) | (int(g) << 8) | int(b)


class LabelRegistry:
    """Unique instance labels; id 0 is reserved for unlabeled returns and misses."""

    def __init__(self):
        self._names: dict[int, str] = {}
        self._by_name: dict[str, int] = {}
        self._max_id = 0

    def __len__(self):
        return len(self._names)

    def __contains__(self, label_id: int):
        return label_id in self._names

    def register(self, name: str) -> int:
        if name in self._by_name:
            raise SceneError(f"label name {name!r} already registered as {self._by_name[name]}")
        if self._max_id >= MAX_LABEL_ID:
            raise SceneError("label registry full (2^24 - 1 labels)")
        self._max_id += 1
        self._names[self._max_id] = name
        self._by_name[name] = self._max_id
        return self._max_id

    def register_as(self, label_id: int, name: str) -> int:
        """Insert an explicit id (used when loading a label table)."""
        if not 1 <= label_id <= MAX_LABEL_ID:
            raise SceneError(f"label id {label_id} outside [1, 2^24 - 1]")
        if label_id in self._names or name in self._by_name:
            raise SceneError(f"label {label_id} / {name!r} already registered")
        self._names[label_id] = name
        self._by_name[name] = label_id
        self._max_id = max(self._max_id, label_id)
        return label_id

    def unique_name(self, base: str) -> str:
        if base not in self._by_name:
            return base
        k = 2
        while f"{base}#{k}" in self._by_name:
            k += 1
        return f"{base}#{k}"

    def name(self, label_id: int) -> str:
        return self._names[label_id]

    def id_for(self, name: str) -> int:
        return self._by_name[name]

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def color(self, label_id: int) -> tuple[int, int, int]:
        if label_id not in self._names:
            raise SceneError(f"unknown label id {label_id}")
        return label_color(label_id)

    def decode(self, color: tuple[int, int, int]) -> int:
        label_id = color_label(color)
        if label_id not in self._names:
            raise SceneError(f"color {tuple(color)} does not belong to a registered label")
        return label_id

    def items(self):
        """``(label_id, name, (r, g, b))`` in id order."""
        for label_id in sorted(self._names):
            yield label_id, self._names[label_id], label_color(label_id)


def register_label(registry: LabelRegistry, name: str) -> int:
    return registry.register(name)


@dataclass(frozen=True)
class RayHit:
    distance: float
    point: np.ndarray
    surface_normal: np.ndarray
    incidence_angle: float
    object_id: int
    material_id: str
    label_id: int
    front_face: bool = True


@dataclass
class HitBatch:
    """Vectorised raycast results; ``hit`` is False where a ray missed."""

    distance: np.ndarray
    hit: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    front_face: np.ndarray
    cos_incidence: np.ndarray
    object_index: np.ndarray
    object_id: np.ndarray
    label_id: np.ndarray
    material_index: np.ndarray
    planar: np.ndarray

    @property
    def incidence_angle(self) -> np.ndarray:
        return np.arccos(np.clip(self.cos_incidence, 0.0, 1.0))

    def __len__(self):
        return len(self.distance)


class _Compiled:
    """Flat arrays handed to the compiled kernels (rebuilt after mutation)."""

    def __init__(self, objects: list[ObjectInstance], materials: dict[str, Material], blas_cache: dict):
        n = len(objects)
        self.objects = objects
        self.object_ids = np.array([o.object_id for o in objects], dtype=np.int64)
        self.label_ids = np.array([o.label_id for o in objects], dtype=np.int64)
        self.material_names = list(materials)
        midx = {m: i for i, m in enumerate(self.material_names)}
        self.material_index = np.array([midx[o.material_id] for o in objects], dtype=np.int64)
        self.kind = np.empty(n, np.int64)
        self.pos = np.zeros((n, 3))
        self.rot = np.zeros((n, 3, 3))
        self.half = np.zeros((n, 3))
        self.plane = np.zeros((n, 4))
        self.mesh_root = np.full(n, -1, np.int64)
        self.tri_offset = np.zeros(n, np.int64)
        lo_list, hi_list, finite = [], [], []
        meshes: list[Mesh] = []
        mesh_slot: dict[int, int] = {}
        for i, o in enumerate(objects):
            g = o.geometry
            self.pos[i] = o.pose.position
            self.rot[i] = o.pose.rotation
            if isinstance(g, Box):
                self.kind[i] = _accel.KIND_BOX
                self.half[i] = g.half_extents
            elif isinstance(g, Sphere):
                self.kind[i] = _accel.KIND_SPHERE
                self.half[i, 0] = g.radius
            elif isinstance(g, Mesh):
                self.kind[i] = _accel.KIND_MESH
                if id(g) not in mesh_slot:
                    mesh_slot[id(g)] = len(meshes)
                    meshes.append(g)
            elif isinstance(g, Plane):
                self.kind[i] = _accel.KIND_PLANE
                n_w = self.rot[i] @ np.asarray(g.normal)
                self.plane[i, :3] = n_w
                self.plane[i, 3] = g.offset + float(n_w @ self.pos[i])
            else:
                raise SceneError(f"unsupported geometry {type(g).__name__}")
            wb = world_bounds(g, o.pose)
            if wb is not None:
                lo_list.append(wb[0])
                hi_list.append(wb[1])
                finite.append(i)
        self.plane_objs = np.flatnonzero(self.kind == _accel.KIND_PLANE).astype(np.int64)
        finite = np.array(finite, dtype=np.int64)
        if len(finite):
            lo = np.ascontiguousarray(lo_list)
            hi = np.ascontiguousarray(hi_list)
        else:
            lo = hi = np.zeros((0, 3))
        tl = _accel.build_bvh(lo, hi, 1)
        self.tl = tl[:6] + (finite[tl[6]] if len(finite) else np.zeros(0, np.int64),)
        # bottom level, one BVH per distinct mesh, concatenated
        parts = [self._blas(m, blas_cache) for m in meshes]
        node_off = tri_off = 0
        roots, mins, maxs, lefts, rights, starts, counts, items, v0s, e1s, e2s, nrm = ([] for _ in range(12))
        for (bmin, bmax, bl, br, bs, bc, bi, v0, e1, e2, tn) in parts:
            roots.append(node_off)
            mins.append(bmin)
            maxs.append(bmax)
            lefts.append(np.where(bl >= 0, bl + node_off, -1))
            rights.append(np.where(br >= 0, br + node_off, -1))
            starts.append(bs + tri_off)
            counts.append(bc)
            items.append(bi + tri_off)
            v0s.append(v0)
            e1s.append(e1)
            e2s.append(e2)
            nrm.append(tn)
            node_off += len(bmin)
            tri_off += len(v0)
        mesh_tri_off = np.cumsum([0] + [len(p[7]) for p in parts])
        for i, o in enumerate(objects):
            if self.kind[i] == _accel.KIND_MESH:
                slot = mesh_slot[id(o.geometry)]
                self.mesh_root[i] = roots[slot]
                self.tri_offset[i] = mesh_tri_off[slot]

        def cat(xs, shape, dtype=np.float64):
            return np.ascontiguousarray(np.concatenate(xs)) if xs else np.zeros(shape, dtype)

        self.bl = (
            cat(mins, (0, 3)), cat(maxs, (0, 3)), cat(lefts, 0, np.int64), cat(rights, 0, np.int64),
            cat(starts, 0, np.int64), cat(counts, 0, np.int64), cat(items, 0, np.int64),
            cat(v0s, (0, 3)), cat(e1s, (0, 3)), cat(e2s, (0, 3)),
        )
        self.tri_normal = cat(nrm, (0, 3))

    @staticmethod
    def _blas(mesh: Mesh, cache: dict):
        key = id(mesh)
        hit = cache.get(key)
        if hit is not None and hit[0] is mesh:
            return hit[1]
        v = mesh.vertices[mesh.triangles]
        lo = np.ascontiguousarray(v.min(axis=1))
        hi = np.ascontiguousarray(v.max(axis=1))
        nodes = _accel.build_bvh(lo, hi, 4)
        v0 = np.ascontiguousarray(v[:, 0])
        e1 = np.ascontiguousarray(v[:, 1] - v[:, 0])
        e2 = np.ascontiguousarray(v[:, 2] - v[:, 0])
        tn = np.cross(e1, e2)
        tn /= np.linalg.norm(tn, axis=1, keepdims=True)
        data = nodes + (v0, e1, e2, tn)
        cache[key] = (mesh, data)
        return data

    @property
    def n_tlas_leaves(self) -> int:
        return int(np.sum(self.tl[2] < 0))


class Scene:
    """Objects plus the acceleration structure used by every sensor.

    Mutations (add, remove, pose changes) mark the structure dirty; it is
    rebuilt lazily on the next query or explicitly with :meth:`commit`.
    """

    def __init__(self, materials: Iterable[Material] = (), labels: LabelRegistry | None = None):
        self.materials: dict[str, Material] = {DEFAULT_MATERIAL: default_material()}
        for m in materials:
            self.materials[m.name] = m
        self.labels = labels if labels is not None else LabelRegistry()
        self._objects: dict[int, ObjectInstance] = {}
        self._next_id = 1
        self._compiled: _Compiled | None = None
        self._blas_cache: dict = {}
        self.version = 0

    # construction ---------------------------------------------------------
    @classmethod
    def build(cls, objects: Iterable[ObjectInstance], materials: Iterable[Material] = (),
              labels: LabelRegistry | None = None) -> "Scene":
        objects = list(objects)
        seen = set()
        for o in objects:
            if o.object_id in seen:
                raise SceneError(f"duplicate object_id {o.object_id}")
            if o.object_id:
                seen.add(o.object_id)
        scene = cls(materials, labels)
        for o in objects:
            scene.add_object(o)
        scene.commit()
        return scene

    def add_material(self, material: Material) -> None:
        self.materials[material.name] = material
        self._compiled = None

    def add_object(self, obj: ObjectInstance) -> int:
        if obj.material_id not in self.materials:
            raise SceneError(f"object {obj.name!r}: unknown material {obj.material_id!r}")
        oid = obj.object_id or self._next_id
        while not obj.object_id and oid in self._objects:
            oid += 1
        if oid in self._objects:
            raise SceneError(f"duplicate object_id {oid}")
        label = obj.label_id
        if label is None:
            label = self.labels.register(self.labels.unique_name(obj.name))
        elif label not in self.labels:
            raise SceneError(f"object {obj.name!r}: label {label} not registered")
        self._objects[oid] = replace(obj, object_id=oid, label_id=label)
        self._next_id = max(self._next_id, oid + 1)
        self._touch()
        return oid

    add_object_runtime = add_object

    def remove_object(self, object_id: int) -> ObjectInstance:
        try:
            obj = self._objects.pop(object_id)
        except KeyError:
            raise SceneError(f"unknown object_id {object_id}") from None
        self._touch()
        return obj

    def set_pose(self, object_id: int, pose: Pose) -> None:
        if object_id not in self._objects:
            raise SceneError(f"unknown object_id {object_id}")
        self._objects[object_id] = replace(self._objects[object_id], pose=pose)
        self._touch()

    def _touch(self):
        self._compiled = None
        self.version += 1

    def commit(self) -> None:
        """Rebuild the acceleration structure if the scene changed."""
        if self._compiled is None:
            objs = [self._objects[k] for k in sorted(self._objects)]
            self._compiled = _Compiled(objs, self.materials, self._blas_cache)

    # inspection -------------------------------------------------------------
    def __len__(self):
        return len(self._objects)

    def __contains__(self, object_id):
        return object_id in self._objects

    def get(self, object_id: int) -> ObjectInstance:
        return self._objects[object_id]

    @property
    def objects(self) -> list[ObjectInstance]:
        return [self._objects[k] for k in sorted(self._objects)]

    @property
    def n_bvh_leaves(self) -> int:
        self.commit()
        return self._compiled.n_tlas_leaves

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
        any_finite = False
        for o in self._objects.values():
            wb = world_bounds(o.geometry, o.pose)
            if wb is not None:
                lo, hi = np.minimum(lo, wb[0]), np.maximum(hi, wb[1])
                any_finite = True
        return (lo, hi) if any_finite else None

    # queries ----------------------------------------------------------------
    def _skip_mask(self, sensor_id, ignore) -> np.ndarray:
        c = self._compiled
        skip = np.zeros(len(c.objects), dtype=np.bool_)
        if sensor_id is not None:
            for i, o in enumerate(c.objects):
                if sensor_id in o.invisible_to:
                    skip[i] = True
        if ignore:
            skip |= np.isin(c.object_ids, np.fromiter(ignore, dtype=np.int64))
        return skip

    def raycast_many(self, origins, directions, sensor_id=None, max_range=np.inf, ignore=()) -> HitBatch:
        """Nearest hit per ray, skipping objects invisible to ``sensor_id``."""
        self.commit()
        d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
        o = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(origins), d.shape), dtype=np.float64)
        n = len(d)
        if n and np.any(np.abs(np.einsum("ij,ij->i", d, d) - 1.0) > 2 * DIRECTION_TOL):
            bad = int(np.argmax(np.abs(np.linalg.norm(d, axis=1) - 1.0)))
            raise SceneError(f"ray direction {d[bad].tolist()} is not a unit vector")
        tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(max_range, dtype=np.float64), (n,)))
        if np.any(tmax <= 0):
            raise SceneError("max_range must be positive")
        c = self._compiled
        skip = self._skip_mask(sensor_id, ignore)
        t, oi, tri = _accel.cast_rays(o, d, tmax, skip, c.kind, c.pos, c.rot, c.half, c.plane, c.mesh_root,
                                      c.plane_objs, *c.tl, *c.bl)
        return self._finish(o, d, t, oi, tri)

    def _finish(self, o, d, t, oi, tri) -> HitBatch:
        c = self._compiled
        hit = oi >= 0
        n = len(t)
        point = np.full((n, 3), np.nan)
        normal = np.zeros((n, 3))
        front = np.zeros(n, dtype=bool)
        idx = np.flatnonzero(hit)
        if len(idx):
            objs = oi[idx]
            p = o[idx] + t[idx, None] * d[idx]
            point[idx] = p
            kind = c.kind[objs]
            nrm = np.zeros((len(idx), 3))
            # analytic box: face whose slab the local hit point sits on
            m = kind == _accel.KIND_BOX
            if m.any():
                ob = objs[m]
                rot = c.rot[ob]
                local = np.einsum("nji,nj->ni", rot, p[m] - c.pos[ob])
                ratio = np.abs(local) / c.half[ob]
                ax = np.argmax(ratio, axis=1)
                nl = np.zeros_like(local)
                nl[np.arange(len(ob)), ax] = np.sign(local[np.arange(len(ob)), ax])
                nrm[m] = np.einsum("nij,nj->ni", rot, nl)
            m = kind == _accel.KIND_SPHERE
            if m.any():
                ob = objs[m]
                nrm[m] = (p[m] - c.pos[ob]) / c.half[ob, :1]
            m = kind == _accel.KIND_MESH
            if m.any():
                ob = objs[m]
                nl = c.tri_normal[tri[idx][m]]
                nrm[m] = np.einsum("nij,nj->ni", c.rot[ob], nl)
            m = kind == _accel.KIND_PLANE
            if m.any():
                nrm[m] = c.plane[objs[m], :3]
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
            dots = np.einsum("ij,ij->i", nrm, d[idx])
            fr = dots <= 0.0
            fr[kind == _accel.KIND_PLANE] = True
            nrm[dots > 0] *= -1.0
            normal[idx] = nrm
            front[idx] = fr
        cosi = np.clip(-np.einsum("ij,ij->i", normal, d), 0.0, 1.0)
        cosi[~hit] = 0.0
        safe = np.where(hit, oi, 0)
        has_objs = len(c.objects) > 0
        return HitBatch(
            distance=t,
            hit=hit,
            point=point,
            normal=normal,
            front_face=front,
            cos_incidence=cosi,
            object_index=oi,
            object_id=np.where(hit, c.object_ids[safe], 0) if has_objs else np.zeros(n, np.int64),
            label_id=np.where(hit, c.label_ids[safe], UNLABELED) if has_objs else np.zeros(n, np.int64),
            material_index=np.where(hit, c.material_index[safe], -1) if has_objs else np.full(n, -1),
            planar=(hit & (c.kind[safe] != _accel.KIND_SPHERE)) if has_objs else np.zeros(n, dtype=bool),
        )

    def raycast(self, origin, direction, sensor_id=None, max_range: float = math.inf, ignore=()) -> RayHit | None:
        if not max_range > 0:
            raise SceneError("max_range must be positive")
        b = self.raycast_many(np.asarray(origin, float)[None], np.asarray(direction, float)[None],
                              sensor_id, max_range, ignore)
        if not b.hit[0]:
            return None
        return RayHit(
            distance=float(b.distance[0]),
            point=b.point[0],
            surface_normal=b.normal[0],
            incidence_angle=float(b.incidence_angle[0]),
            object_id=int(b.object_id[0]),
            material_id=self._compiled.material_names[b.material_index[0]],
            label_id=int(b.label_id[0]),
            front_face=bool(b.front_face[0]),
        )

    def material_of_index(self, material_index: int) -> Material:
        self.commit()
        return self.materials[self._compiled.material_names[material_index]]

    def material_table(self, attr: str) -> np.ndarray:
        """Per material-index value of a scalar material attribute."""
        self.commit()
        return np.array([getattr(self.materials[m], attr) for m in self._compiled.material_names], dtype=float)

    def reflectance_table(self, band: str) -> np.ndarray:
        """Per material-index reflectance in ``band``; unknown bands give 0."""
        self.commit()
        out = []
        for name in self._compiled.material_names:
            rho = self.materials[name].reflectance(band)
            if rho is None:
                log.warning("material %r has no reflectance for band %r; treating as 0", name, band)
                rho = 0.0
            out.append(rho)
        return np.array(out, dtype=float)

    def contains_point(self, point) -> bool:
        """True if ``point`` lies inside a closed finite object."""
        p = np.asarray(point, dtype=float)
        for o in self._objects.values():
            g = o.geometry
            local = o.pose.inverse_rotate(p - o.pose.position)
            if isinstance(g, Box) and np.all(np.abs(local) < np.asarray(g.half_extents)):
                return True
            if isinstance(g, Sphere) and float(local @ local) < g.radius ** 2:
                return True
            if isinstance(g, Mesh) and _mesh_parity(g, local):
                return True
        return False


def _mesh_parity(mesh: Mesh, p: np.ndarray) -> bool:
    v = mesh.vertices[mesh.triangles]
    d = np.array([0.5773502691896258, 0.5773502691896257, 0.5773502691896258])
    d = d / np.linalg.norm(d)
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    pv = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pv)
    ok = np.abs(det) > 1e-18
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tv = p - v[:, 0]
    u = np.einsum("ij,ij->i", tv, pv) * inv
    q = np.cross(tv, e1)
    w = (q @ d) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hits = ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 0)
    return bool(np.count_nonzero(hits) % 2)


def build_scene(objects: Iterable[ObjectInstance], materials: Iterable[Material] = ()) -> Scene:
    return Scene.build(objects, materials)


def reflect(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Specular reflection of (n, 3) directions about (n, 3) unit normals."""
    return direction - 2.0 * np.einsum("ij,ij->i", direction, normal)[:, None] * normal
