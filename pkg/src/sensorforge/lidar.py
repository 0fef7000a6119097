"""Spinning LiDAR with Lambertian intensity, datasheet range limits and rain.

Rain follows the Goodin et al. (2019) degradation model with the
Lewandowski et al. (2009) power law for the scattering coefficient:

    alpha = a * R**b                      [1/m]
    intensity_wet = intensity_dry * exp(-2 * alpha * d)
    d_noisy ~ Normal(d, 0.02 * d * (1 - exp(-R))**2)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose
from .kernel import FrameContext, Weather
from .rng import hashed_normals
from .scene import Scene

log = logging.getLogger(__name__)

LIDAR_DTYPE = np.dtype(
    [("x", "f8"), ("y", "f8"), ("z", "f8"), ("intensity", "f8"), ("label_id", "u4"), ("timestamp", "f8")]
)

_CURSOR_SNAP = 1e-9  # columns


@dataclass(frozen=True)
class ReflectanceLimitCurve:
    """Maximum detection range as a function of target reflectance."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(r), float(m)) for r, m in self.knots)
        if not knots:
            raise ValueError("reflectance limit curve needs at least one knot")
        refl = np.array([k[0] for k in knots])
        ranges = np.array([k[1] for k in knots])
        if np.any(refl < 0) or np.any(refl > 1):
            raise ValueError("limit curve reflectances must lie in [0, 1]")
        if np.any(np.diff(refl) <= 0):
            raise ValueError("limit curve reflectances must be strictly increasing")
        if np.any(ranges < 0) or np.any(np.diff(ranges) < 0):
            raise ValueError("limit curve ranges must be >= 0 and non-decreasing")
        object.__setattr__(self, "knots", knots)

    def __call__(self, rho_eff):
        return range_limit_for(self, rho_eff)


def range_limit_for(curve: ReflectanceLimitCurve, rho_eff):
    """Piecewise-linear lookup, clamped to the end knots."""
    refl = [k[0] for k in curve.knots]
    ranges = [k[1] for k in curve.knots]
    out = np.interp(rho_eff, refl, ranges)
    return float(out) if np.ndim(out) == 0 else out


def effective_reflectance(rho, theta):
    """Lambertian cosine law, ``rho * cos(theta)``."""
    return np.asarray(rho) * np.cos(theta) if np.ndim(rho) or np.ndim(theta) else rho * math.cos(theta)


def rain_alpha(rain_rate: float, a: float, b: float) -> float:
    return 0.0 if rain_rate == 0 else a * rain_rate**b


def rain_sigma(d, rain_rate: float):
    return 0.02 * np.asarray(d) * (1.0 - math.exp(-rain_rate)) ** 2


def apply_rain(d, intensity_dry, rain_rate: float, a: float, b: float, rng: np.random.Generator | None = None,
               *, noise=None):
    """Attenuate intensity and perturb range for rain rate ``rain_rate`` (mm/h).

    ``noise`` may supply pre-drawn standard normals (one per range) instead of
    ``rng``. Returns ``(d_noisy, intensity_wet)``; at zero rain both inputs come
    back unchanged.
    """
    if rain_rate < 0:
        raise ValueError("rain rate must be >= 0")
    d = np.asarray(d, dtype=float)
    intensity_dry = np.asarray(intensity_dry, dtype=float)
    if rain_rate == 0:
        return d.copy() if d.ndim else float(d), intensity_dry.copy() if intensity_dry.ndim else float(intensity_dry)
    alpha = rain_alpha(rain_rate, a, b)
    wet = intensity_dry * np.exp(-2.0 * alpha * d)
    if noise is None:
        if rng is None:
            raise ValueError("rng or noise is required when rain_rate > 0")
        noise = rng.standard_normal(d.shape)
    d_noisy = d + rain_sigma(d, rain_rate) * noise
    if d_noisy.ndim == 0:
        return float(d_noisy), float(wet)
    return d_noisy, wet


@dataclass(frozen=True)
class LidarConfig:
    """Static sensor description. ``rain_a`` / ``rain_b`` have no defaults on purpose."""

    channels: int
    elevation_angles: tuple[float, ...]  # rad, one per channel
    points_per_rotation: int
    rotation_rate: float  # Hz
    max_range: float  # m
    limit_curve: ReflectanceLimitCurve
    rain_a: float
    rain_b: float
    band: str = "nir905"
    seed: int = 0

    def __post_init__(self):
        elev = tuple(float(e) for e in self.elevation_angles)
        object.__setattr__(self, "elevation_angles", elev)
        if self.channels < 1 or len(elev) != self.channels:
            raise ValueError(f"expected {self.channels} elevation angles, got {len(elev)}")
        if any(b < a for a, b in zip(elev, elev[1:])):
            raise ValueError("elevation angles must be sorted")
        if self.points_per_rotation < 1:
            raise ValueError("points_per_rotation must be >= 1")
        if not self.rotation_rate > 0:
            raise ValueError("rotation_rate must be > 0")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if self.rain_a < 0:
            raise ValueError("rain_a must be >= 0")

    @classmethod
    def uniform(cls, channels: int, fov_low: float, fov_high: float, **kw) -> "LidarConfig":
        """Evenly spaced channels between two elevation angles (rad)."""
        elev = np.linspace(fov_low, fov_high, channels) if channels > 1 else np.array([0.5 * (fov_low + fov_high)])
        return cls(channels=channels, elevation_angles=tuple(elev.tolist()), **kw)

    @property
    def column_spacing(self) -> float:
        return 2.0 * math.pi / self.points_per_rotation


@dataclass
class BeamBatch:
    """Intermediate per-beam quantities of one scan (useful for audits)."""

    column: np.ndarray
    channel: np.ndarray
    direction: np.ndarray  # sensor frame
    timestamp: np.ndarray
    hit: np.ndarray
    distance: np.ndarray
    d_noisy: np.ndarray
    rho_eff: np.ndarray
    attenuation: np.ndarray
    limit: np.ndarray
    label_id: np.ndarray
    kept: np.ndarray


class Lidar:
    """One spinning LiDAR; owns its azimuth cursor and noise stream."""

    def __init__(self, config: LidarConfig, sensor_id: str = "lidar", mount: Pose | None = None):
        self.config = config
        self.sensor_id = sensor_id
        self.name = sensor_id
        self.mount = mount or Pose()
        self.cursor = 0.0  # absolute column position (fractional)
        self.time = 0.0
        c = config
        self._cos_el = np.cos(np.asarray(c.elevation_angles))
        self._sin_el = np.sin(np.asarray(c.elevation_angles))
        self.swept = 0.0  # total azimuth swept, rad
        self.columns_emitted = 0

    def _columns(self, sim_dt: float) -> tuple[np.ndarray, float, float]:
        c = self.config
        rate = c.points_per_rotation * c.rotation_rate  # columns per second
        c0 = self.cursor
        c1 = c0 + rate * sim_dt
        r = round(c1)
        if abs(c1 - r) < _CURSOR_SNAP:
            c1 = float(r)
        ks = np.arange(math.ceil(c0 - _CURSOR_SNAP), math.ceil(c1 - _CURSOR_SNAP), dtype=np.int64)
        return ks, c0, c1

    def beam_directions(self, columns: np.ndarray) -> np.ndarray:
        """Sensor-frame unit directions for every (column, channel), column-major."""
        az = (columns % self.config.points_per_rotation) * self.config.column_spacing
        ca, sa = np.cos(az)[:, None], np.sin(az)[:, None]
        d = np.empty((len(columns), self.config.channels, 3))
        d[..., 0] = ca * self._cos_el
        d[..., 1] = sa * self._cos_el
        d[..., 2] = self._sin_el
        return d.reshape(-1, 3)

    def beams(self, scene: Scene, pose: Pose, sim_dt: float, rain_rate: float = 0.0,
              t_start: float | None = None) -> BeamBatch:
        """Advance the sweep by ``sim_dt`` and evaluate every beam crossed."""
        if sim_dt < 0:
            raise ValueError("sim_dt must be >= 0")
        c = self.config
        if t_start is None:
            t_start = self.time
        ks, c0, c1 = self._columns(sim_dt)
        self.cursor = c1
        self.time = t_start + sim_dt
        self.swept += (c1 - c0) * c.column_spacing
        self.columns_emitted += len(ks)
        rate = c.points_per_rotation * c.rotation_rate
        col = np.repeat(ks, c.channels)
        ch = np.tile(np.arange(c.channels, dtype=np.int64), len(ks))
        ts = t_start + (col - c0) / rate
        d_s = self.beam_directions(ks)
        world = self.mount if pose is None else pose.compose(self.mount)
        d_w = world.rotate(d_s)
        d_w /= np.linalg.norm(d_w, axis=1, keepdims=True)
        hits = scene.raycast_many(world.position, d_w, sensor_id=self.sensor_id, max_range=c.max_range)
        rho_table = scene.reflectance_table(c.band)
        rho = np.where(hits.hit, rho_table[np.maximum(hits.material_index, 0)], 0.0)
        rho_eff = rho * hits.cos_incidence
        dist = np.where(hits.hit, hits.distance, np.inf)
        if rain_rate > 0:
            beam_index = (col * c.channels + ch).astype(np.uint64)
            z = hashed_normals(c.seed, beam_index)
            d_noisy, atten = apply_rain(np.where(hits.hit, dist, 0.0), np.ones(len(dist)), rain_rate,
                                        c.rain_a, c.rain_b, noise=z)
        else:
            d_noisy = np.where(hits.hit, dist, 0.0)
            atten = np.ones(len(dist))
        wet = rho_eff * atten
        limit = np.asarray(range_limit_for(c.limit_curve, wet))
        kept = hits.hit & (dist <= c.max_range) & (wet > 0.0) & (d_noisy <= limit)
        return BeamBatch(col, ch, d_s, ts, hits.hit, dist, d_noisy, rho_eff, atten, limit, hits.label_id, kept)

    def scan_frame(self, scene: Scene, pose: Pose | None, sim_dt: float, weather: Weather | float | None = None,
                   t_start: float | None = None) -> np.ndarray:
        """Points (``LIDAR_DTYPE``) for the azimuth swept during ``sim_dt``."""
        if isinstance(weather, Weather):
            rain = weather.rain_rate
        else:
            rain = float(weather or 0.0)
        b = self.beams(scene, pose, sim_dt, rain, t_start)
        k = b.kept
        out = np.empty(int(k.sum()), dtype=LIDAR_DTYPE)
        xyz = b.direction[k] * b.d_noisy[k, None]
        out["x"], out["y"], out["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        out["intensity"] = b.rho_eff[k] * b.attenuation[k]
        out["label_id"] = b.label_id[k]
        out["timestamp"] = b.timestamp[k]
        return out

    def evaluate(self, scene: Scene, frame: FrameContext, pose: Pose | None = None) -> np.ndarray:
        return self.scan_frame(scene, pose, frame.sim_dt, frame.rain_rate, t_start=frame.t_start)


def scan_frame(lidar: Lidar, scene: Scene, pose: Pose | None, sim_dt: float, weather=None) -> np.ndarray:
    return lidar.scan_frame(scene, pose, sim_dt, weather)
