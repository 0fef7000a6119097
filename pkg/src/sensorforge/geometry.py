"""Poses and ray-castable geometry primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.spatial.transform import Rotation

QUAT_TOL = 1e-9
MIN_TRIANGLE_AREA = 1e-12


def _vec3(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {a.shape}")
    return a


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Pose:
    """Position in metres and orientation as a unit quaternion (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = _vec3(self.position, "position")
        q = np.asarray(self.orientation, dtype=np.float64).reshape(-1)
        if q.shape != (4,):
            raise ValueError("orientation must be a quaternion (w, x, y, z)")
        if abs(float(np.linalg.norm(q)) - 1.0) > QUAT_TOL:
            raise ValueError(f"orientation quaternion must have unit norm, got |q|={np.linalg.norm(q)!r}")
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_yaw(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        h = 0.5 * yaw
        return cls(np.array([x, y, z], dtype=float), np.array([math.cos(h), 0.0, 0.0, math.sin(h)]))

    @classmethod
    def from_euler(cls, position, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "Pose":
        q = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_quat(scalar_first=True)
        return cls(position, q / np.linalg.norm(q))

    @classmethod
    def normalized(cls, position, orientation) -> "Pose":
        """Build a pose, renormalising a slightly-off quaternion read from a file."""
        q = np.asarray(orientation, dtype=float)
        n = np.linalg.norm(q)
        if n < 1e-6:
            raise ValueError("orientation quaternion has zero norm")
        return cls(position, q / n)

    @property
    def rotation(self) -> np.ndarray:
        """World-from-local rotation matrix."""
        return Rotation.from_quat(self.orientation, scalar_first=True).as_matrix()

    @property
    def yaw(self) -> float:
        w, x, y, z = self.orientation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform local points (..., 3) into the world frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.position

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse_rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: ``other`` expressed in this pose's frame."""
        r = Rotation.from_quat(self.orientation, scalar_first=True) * Rotation.from_quat(
            other.orientation, scalar_first=True
        )
        q = r.as_quat(scalar_first=True)
        return Pose(self.apply(other.position), q / np.linalg.norm(q))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position) and np.array_equal(self.orientation, other.orientation))

    def __repr__(self):
        return f"Pose(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


@dataclass(frozen=True)
class Box:
    """Axis-aligned (in its local frame) box centred on the pose origin."""

    half_extents: tuple[float, float, float]

    def __post_init__(self):
        h = tuple(float(v) for v in self.half_extents)
        if len(h) != 3 or min(h) <= 0:
            raise ValueError(f"box half-extents must be 3 positive values, got {self.half_extents!r}")
        object.__setattr__(self, "half_extents", h)


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"sphere radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class Plane:
    """Infinite plane ``normal . x = offset`` in the local frame."""

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or norm < 1e-12:
            raise ValueError("plane normal must be a non-zero 3-vector")
        object.__setattr__(self, "normal", tuple((n / norm).tolist()))
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh; winding order defines the outward side."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("mesh vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise ValueError("mesh triangles must be a non-empty (m, 3) index array")
        if t.min() < 0 or t.max() >= len(v):
            raise ValueError("mesh triangle index out of range")
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        bad = np.flatnonzero(area <= MIN_TRIANGLE_AREA)
        if len(bad):
            raise ValueError(f"degenerate mesh triangles (area <= 1e-12 m^2): {bad[:10].tolist()}")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


Geometry = Union[Box, Sphere, Plane, Mesh]


def box_mesh(half_extents, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Closed, outward-wound 12-triangle mesh of an axis-aligned box."""
    hx, hy, hz = half_extents
    c = np.asarray(center, dtype=float)
    v = np.array(
        [[sx * hx, sy * hy, sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)], dtype=float
    ) + c
    tris = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # -z
            [4, 5, 6], [5, 7, 6],  # +z
            [0, 1, 4], [1, 5, 4],  # -y
            [2, 6, 3], [3, 6, 7],  # +y
            [0, 4, 2], [2, 4, 6],  # -x
            [1, 3, 5], [3, 7, 5],  # +x
        ]
    )
    return Mesh(v, tris)


def uv_sphere_mesh(radius: float, n_lat: int, n_lon: int, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Outward-wound UV sphere with ``2 * n_lon * (n_lat - 1)`` triangles."""
    c = np.asarray(center, dtype=float)
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        phi = math.pi * i / n_lat
        for j in range(n_lon):
            lam = 2.0 * math.pi * j / n_lon
            verts.append([radius * math.sin(phi) * math.cos(lam), radius * math.sin(phi) * math.sin(lam), radius * math.cos(phi)])
    verts.append([0.0, 0.0, -radius])
    verts = np.array(verts) + c
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    tris = []
    for j in range(n_lon):
        tris.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c2, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, c2, d])
            tris.append([a, d, b])
    for j in range(n_lon):
        tris.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return Mesh(verts, np.array(tris))


def local_bounds(geometry: Geometry) -> tuple[np.ndarray, np.ndarray] | None:
    """Local-frame AABB, ``None`` for unbounded geometry."""
    if isinstance(geometry, Box):
        h = np.array(geometry.half_extents)
        return -h, h
    if isinstance(geometry, Sphere):
        r = np.full(3, geometry.radius)
        return -r, r
    if isinstance(geometry, Mesh):
        return geometry.vertices.min(axis=0), geometry.vertices.max(axis=0)
    return None


def world_bounds(geometry: Geometry, pose: Pose) -> tuple[np.ndarray, np.ndarray] | None:
    lb = local_bounds(geometry)
    if lb is None:
        return None
    if isinstance(geometry, Sphere):
        r = geometry.radius
        return pose.position - r, pose.position + r
    if isinstance(geometry, Mesh):
        pts = pose.apply(geometry.vertices)
        return pts.min(axis=0), pts.max(axis=0)
    lo, hi = lb
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    pts = pose.apply(corners)
    return pts.min(axis=0), pts.max(axis=0)
