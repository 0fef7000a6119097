"""Exact specular paths by the image (mirror-source) construction.

Ray launching finds *which* sequence of planar surfaces connects a source and a
receiver; these helpers then recover the exact path through that sequence and
check it against the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import SURFACE_EPS, Scene

LEG_TOL = 1e-6


def mirror(point: np.ndarray, plane_point: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return point - 2.0 * float(np.dot(point - plane_point, normal)) * normal


def specular_points(src, dst, planes) -> list[np.ndarray] | None:
    """Vertices ``[src, q1, ..., qk, dst]`` of the specular path via ``planes``.

    ``planes`` is a sequence of ``(point_on_plane, unit_normal)``. Returns None
    when the construction has no valid reflection on some plane.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    k = len(planes)
    images = [None] * k
    img = dst
    for i in range(k - 1, -1, -1):
        p0, n = planes[i]
        img = mirror(img, np.asarray(p0, float), np.asarray(n, float))
        images[i] = img
    pts = [src]
    cur = src
    for i in range(k):
        p0, n = np.asarray(planes[i][0], float), np.asarray(planes[i][1], float)
        seg = images[i] - cur
        denom = float(np.dot(seg, n))
        if abs(denom) < 1e-15:
            return None
        s = float(np.dot(p0 - cur, n)) / denom
        if not 0.0 < s < 1.0:
            return None
        cur = cur + s * seg
        pts.append(cur)
    pts.append(dst)
    return pts


def path_length(points) -> float:
    return float(sum(np.linalg.norm(b - a) for a, b in zip(points, points[1:])))


@dataclass
class LegWalk:
    ok: bool
    penetrations: list[int] = field(default_factory=list)  # object ids entered
    penetration_materials: list[str] = field(default_factory=list)


def walk_leg(scene: Scene, a, b, end_object: int | None, sensor_id=None, *, start_normal=None,
             allow_transmission: bool = False, max_crossings: int = 64) -> LegWalk:
    """Follow the straight leg ``a -> b`` through the scene.

    The leg is valid when it reaches ``b`` (on ``end_object``'s front face, or
    free space when ``end_object`` is None) and every surface crossed before
    that is allowed as a transmission. Back-face crossings (leaving a solid)
    are free.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    seg = b - a
    length = float(np.linalg.norm(seg))
    if length < LEG_TOL:
        return LegWalk(False)
    d = seg / length
    cur = a + (SURFACE_EPS * np.asarray(start_normal, float) if start_normal is not None else 0.0)
    travelled = float(np.dot(cur - a, d))
    tol = LEG_TOL + 1e-9 * length
    out = LegWalk(True)
    for _ in range(max_crossings):
        remaining = length - travelled
        hit = scene.raycast(cur, d, sensor_id=sensor_id, max_range=max(remaining + tol, tol))
        if hit is None:
            out.ok = end_object is None
            return out
        if hit.distance >= remaining - tol:
            if end_object is None:
                return out
            out.ok = hit.object_id == end_object and hit.front_face
            return out
        if not allow_transmission:
            out.ok = False
            return out
        if hit.front_face:
            out.penetrations.append(hit.object_id)
            out.penetration_materials.append(hit.material_id)
        cur = hit.point + SURFACE_EPS * d
        travelled += hit.distance + SURFACE_EPS
    out.ok = False
    return out
