"""Pulse-echo (sonar / radar) sensor.

Rays leave the sensor on a Fibonacci lattice over the field of view and bounce
specularly. Loss along a folded path of total length ``L`` is

    20 log10(L / L_ref) + beta * L + sum(per-bounce material loss)   [dB]

and a ray dies once that exceeds the sensor's attenuation limit. An echo is
recorded when a reflected segment passes through the receiver sphere
(``capture_radius``) from inside the receiver's opening angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose
from .kernel import FrameContext, Weather
from .scene import SURFACE_EPS, Scene, reflect
from .specular import path_length, specular_points, walk_leg

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
BORESIGHT = np.array([1.0, 0.0, 0.0])


def spreading_loss(d, ref: float = 1.0):
    """Spherical spreading ``20 log10(d / ref)`` dB, clamped to 0 below ``ref``."""
    if not ref > 0:
        raise ValueError("spreading reference distance must be > 0")
    d = np.asarray(d, dtype=float)
    out = 20.0 * np.log10(np.maximum(d, ref) / ref)
    return float(out) if out.ndim == 0 else out


def sample_directions(fov_az: float, fov_el: float, n: int, mode: str = "3D") -> np.ndarray:
    """Deterministic equal-solid-angle directions around boresight ``+x``.

    3D mode uses a spherical Fibonacci lattice clipped to the azimuth/elevation
    wedge (``fov_*`` are full widths in rad); 2D mode spaces rays evenly in
    azimuth in the sensor's horizontal plane.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fa = min(max(fov_az, 0.0), 2.0 * math.pi)
    fe = min(max(fov_el, 0.0), math.pi)
    i = np.arange(n, dtype=float)
    if mode.upper() == "2D":
        az = fa * ((i + 0.5) / n - 0.5)
        el = np.zeros(n)
    elif mode.upper() == "3D":
        s0, s1 = math.sin(-0.5 * fe), math.sin(0.5 * fe)
        el = np.arcsin(np.clip(s0 + (i + 0.5) / n * (s1 - s0), -1.0, 1.0))
        az = fa * (np.mod(i * INV_PHI + 0.5, 1.0) - 0.5)
    else:
        raise ValueError(f"mode must be '2D' or '3D', got {mode!r}")
    ce = np.cos(el)
    return np.column_stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)])


@dataclass(frozen=True)
class EchoConfig:
    n_rays: int
    fov_azimuth: float
    fov_elevation: float
    attenuation_limit: float  # dB
    receiver_opening_angle: float  # rad, half-angle
    spreading_ref: float = 1.0
    atmospheric_coeff: float = 0.0  # dB/m
    rain_coeff: float = 0.0  # dB/m per mm/h
    max_bounces: int = 3
    capture_radius: float = 0.05
    mode: str = "3D"
    path_correction: bool = True

    def __post_init__(self):
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if not 0 < self.receiver_opening_angle <= math.pi:
            raise ValueError("receiver_opening_angle must lie in (0, pi]")
        if not self.attenuation_limit > 0:
            raise ValueError("attenuation_limit must be > 0")
        if self.atmospheric_coeff < 0 or self.rain_coeff < 0:
            raise ValueError("atmospheric coefficients must be >= 0")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be >= 1")
        if not self.capture_radius > 0:
            raise ValueError("capture_radius must be > 0")
        if self.mode.upper() not in ("2D", "3D"):
            raise ValueError("mode must be '2D' or '3D'")

    def beta(self, rain_rate: float = 0.0) -> float:
        return self.atmospheric_coeff + self.rain_coeff * rain_rate


@dataclass(frozen=True)
class Echo:
    arrival_direction: np.ndarray  # sensor frame, points toward the echo source
    total_path_length: float
    power: float  # dB relative to emission, <= 0
    bounce_count: int
    point: np.ndarray  # sensor frame
    surfaces: tuple[int, ...] = ()
    ray_index: int = -1
    exact: bool = False


class PulseEcho:
    def __init__(self, config: EchoConfig, sensor_id: str = "echo", mount: Pose | None = None):
        self.config = config
        self.sensor_id = sensor_id
        self.name = sensor_id
        self.mount = mount or Pose()
        self._dirs = sample_directions(config.fov_azimuth, config.fov_elevation, config.n_rays, config.mode)

    def loss(self, total, material_loss, rain_rate: float = 0.0):
        c = self.config
        return spreading_loss(total, c.spreading_ref) + c.beta(rain_rate) * np.asarray(total) + material_loss

    def trace(self, scene: Scene, pose: Pose | None = None, weather: Weather | float | None = None) -> list[Echo]:
        rain = weather.rain_rate if isinstance(weather, Weather) else float(weather or 0.0)
        c = self.config
        world = self.mount if pose is None else pose.compose(self.mount)
        rot = world.rotation
        S = world.position
        up = rot[:, 2]
        beta = c.beta(rain)
        acoustic = scene.material_table("acoustic_reflection_loss")
        n = c.n_rays
        origin = np.tile(S, (n, 1))
        dirs = self._dirs @ rot.T
        total = np.zeros(n)
        mat = np.zeros(n)
        hist_pt = np.zeros((c.max_bounces, n, 3))
        hist_n = np.zeros((c.max_bounces, n, 3))
        hist_obj = np.zeros((c.max_bounces, n), dtype=np.int64)
        hist_planar = np.ones(n, dtype=bool)
        alive = np.arange(n)
        echoes: list[Echo] = []
        cos_open = math.cos(c.receiver_opening_angle)
        for level in range(c.max_bounces + 1):
            if len(alive) == 0:
                break
            # spreading alone bounds how far a ray can still travel
            budget = c.spreading_ref * 10.0 ** ((c.attenuation_limit - mat[alive]) / 20.0) - total[alive]
            budget = np.maximum(budget, 1e-9)
            o, d = origin[alive], dirs[alive]
            hits = scene.raycast_many(o, d, sensor_id=self.sensor_id, max_range=budget)
            seg = np.where(hits.hit, hits.distance, budget)
            if level >= 1:
                w = S - o
                tstar = np.einsum("ij,ij->i", w, d)
                ok = (tstar > 0) & (tstar <= seg)
                miss = np.linalg.norm(w - tstar[:, None] * d, axis=1)
                ok &= miss <= c.capture_radius
                arrival = -d @ rot  # sensor frame
                ok &= arrival[:, 0] >= cos_open
                for j in np.flatnonzero(ok):
                    e = self._make_echo(scene, S, rot, int(alive[j]), level, total[alive[j]] + tstar[j], arrival[j],
                                        mat[alive[j]], hist_pt, hist_n, hist_obj, hist_planar, rain, cos_open)
                    if e is not None:
                        echoes.append(e)
            if level == c.max_bounces:
                break
            h = hits.hit
            idx = alive[h]
            total[idx] += hits.distance[h]
            mat[idx] += acoustic[hits.material_index[h]]
            nrm = hits.normal[h]
            if c.mode.upper() == "2D":
                nrm = nrm - np.outer(nrm @ up, up)
                nn = np.linalg.norm(nrm, axis=1)
                flat = nn > 1e-9
                nrm = np.where(flat[:, None], nrm / np.where(flat, nn, 1.0)[:, None], 0.0)
            else:
                flat = np.ones(len(idx), dtype=bool)
            hist_pt[level, idx] = hits.point[h]
            hist_n[level, idx] = nrm
            hist_obj[level, idx] = hits.object_id[h]
            hist_planar[idx] &= hits.planar[h]
            new_d = reflect(d[h], nrm)
            new_d /= np.linalg.norm(np.where(flat[:, None], new_d, 1.0), axis=1, keepdims=True)
            dirs[idx] = new_d
            origin[idx] = hits.point[h] + SURFACE_EPS * nrm
            survive = flat & (self.loss(total[idx], mat[idx], rain) <= c.attenuation_limit)
            alive = idx[survive]
        echoes.sort(key=lambda e: (e.ray_index, e.bounce_count))
        return echoes

    def _make_echo(self, scene, S, rot, ray, bounces, raw_total, raw_arrival, mat_loss, hist_pt, hist_n, hist_obj,
                   hist_planar, rain, cos_open) -> Echo | None:
        c = self.config
        total = float(raw_total)
        arrival = raw_arrival
        exact = False
        surfaces = tuple(int(hist_obj[b, ray]) for b in range(bounces))
        if c.path_correction and hist_planar[ray]:
            planes = [(hist_pt[b, ray], hist_n[b, ray]) for b in range(bounces)]
            pts = specular_points(S, S, planes)
            if pts is not None:
                length = path_length(pts)
                arr_w = pts[-2] - S
                arr_s = (arr_w / np.linalg.norm(arr_w)) @ rot
                if abs(length - total) <= c.capture_radius * (bounces + 1) and arr_s[0] >= cos_open \
                        and self._legs_clear(scene, pts, surfaces, planes):
                    total, arrival, exact = length, arr_s, True
        loss = float(self.loss(total, mat_loss, rain))
        if loss > c.attenuation_limit:
            return None
        arrival = arrival / np.linalg.norm(arrival)
        if c.mode.upper() == "2D":
            arrival = np.array([arrival[0], arrival[1], 0.0])
            arrival /= np.linalg.norm(arrival)
        return Echo(arrival, total, -loss, bounces, arrival * total / 2.0, surfaces, ray, exact)

    def _legs_clear(self, scene, pts, surfaces, planes) -> bool:
        for i in range(len(pts) - 1):
            end_obj = surfaces[i] if i < len(surfaces) else None
            start_n = planes[i - 1][1] if i > 0 else None
            walk = walk_leg(scene, pts[i], pts[i + 1], end_obj, self.sensor_id, start_normal=start_n)
            if not walk.ok:
                return False
        return True

    def evaluate(self, scene: Scene, frame: FrameContext, pose: Pose | None = None) -> list[Echo]:
        return self.trace(scene, pose, frame.rain_rate)


def trace_echo(sensor: PulseEcho, scene: Scene, pose: Pose | None = None, weather=None) -> list[Echo]:
    return sensor.trace(scene, pose, weather)


def echo_families(echoes: Sequence[Echo], tol: float = 1e-6) -> list[list[Echo]]:
    """Group echoes that follow the same surface sequence with equal path length."""
    groups: dict[tuple, list[Echo]] = {}
    for e in sorted(echoes, key=lambda e: (e.surfaces, e.total_path_length)):
        placed = False
        for key, members in groups.items():
            if key[0] == e.surfaces and abs(members[0].total_path_length - e.total_path_length) <= tol:
                members.append(e)
                placed = True
                break
        if not placed:
            groups[(e.surfaces, len(groups))] = [e]
    return list(groups.values())
