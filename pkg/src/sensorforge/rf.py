"""UWB / Wi-Fi multipath ranging.

A tag launches rays on a Fibonacci sphere. At every front-face surface
interaction a ray splits into a specular reflection and a straight
transmission, each paying its material loss; branches stop at
``max_interactions`` or once the accumulated loss passes the floor. Any
reflected segment passing an anchor's reception sphere nominates the sequence
of reflecting planes, and the exact path through that sequence is rebuilt with
the image construction and re-walked through the scene to collect its true
transmissions and losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .echo import sample_directions, spreading_loss
from .geometry import Pose
from .kernel import FrameContext
from .scene import SURFACE_EPS, Scene, reflect
from .specular import path_length, specular_points, walk_leg

SPEED_OF_LIGHT = 299_792_458.0
TWO_PI = 2.0 * math.pi


@dataclass
class Anchor:
    """Fixed RF receiver; its position may change between frames."""

    anchor_id: str
    position: np.ndarray

    def __post_init__(self):
        self.anchor_id = str(self.anchor_id)
        self.position = np.asarray(self.position, dtype=float).reshape(3)

    def move_to(self, position) -> None:
        self.position = np.asarray(position, dtype=float).reshape(3)


@dataclass(frozen=True)
class RfConfig:
    wavelength: float  # m
    speed: float = SPEED_OF_LIGHT
    max_interactions: int = 3
    attenuation_floor: float = 120.0  # dB
    spreading_ref: float = 1.0
    n_rays: int = 4096
    capture_radius: float = 0.05
    # reception sphere grows with unfolded path length so every ray tube is caught
    tube_factor: float = 1.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError("wavelength must be > 0")
        if not self.speed > 0:
            raise ValueError("speed must be > 0")
        if self.max_interactions < 0:
            raise ValueError("max_interactions must be >= 0")
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")

    @property
    def ray_spacing(self) -> float:
        return math.sqrt(4.0 * math.pi / self.n_rays)


@dataclass(frozen=True)
class RfPath:
    anchor_id: str
    points: tuple  # waypoints tag -> ... -> anchor
    total_length: float
    tof: float
    aod: np.ndarray  # unit direction leaving the tag
    aoa: np.ndarray  # unit direction at the anchor, pointing back along the arriving ray
    path_loss: float
    phase: float
    interaction_count: int
    reflection_count: int
    interactions: tuple = ()  # ("R" | "T", object_id) in travel order

    @property
    def segments(self) -> tuple:
        return self.points


def path_phase(total_length: float, wavelength: float, reflections: int) -> float:
    """Carrier phase: propagation plus a pi shift per specular bounce, in [0, 2pi)."""
    cycles = total_length / wavelength + 0.5 * reflections
    frac = cycles - math.floor(cycles)
    # whole-wavelength paths should read 0, not 2pi - ulp
    if frac > 1.0 - 1e-12 * max(1.0, cycles):
        frac = 0.0
    return TWO_PI * frac


def _plane_key(obj: int, normal: np.ndarray, point: np.ndarray) -> tuple:
    return (int(obj), *np.round(normal, 6).tolist(), round(float(normal @ point), 6))


class _Candidate:
    __slots__ = ("anchor", "planes", "objects")

    def __init__(self, anchor, planes, objects):
        self.anchor = anchor
        self.planes = planes
        self.objects = objects


def _launch(scene: Scene, tag: np.ndarray, anchors: Sequence[Anchor], cfg: RfConfig, sensor_id) -> dict:
    """Ray tree from ``tag``; returns candidate plane sequences per anchor."""
    K = max(cfg.max_interactions, 1)
    refl_loss = scene.material_table("rf_reflection_loss")
    trans_loss = scene.material_table("rf_transmission_loss")
    d0 = sample_directions(2 * math.pi, math.pi, cfg.n_rays)
    n = len(d0)
    origin = np.tile(tag, (n, 1))
    dirs = d0
    length = np.zeros(n)
    n_int = np.zeros(n, dtype=np.int64)
    loss = np.zeros(n)
    n_ref = np.zeros(n, dtype=np.int64)
    ref_obj = np.zeros((n, K), dtype=np.int64)
    ref_pt = np.zeros((n, K, 3))
    ref_n = np.zeros((n, K, 3))
    planar = np.ones(n, dtype=bool)
    A = np.array([a.position for a in anchors]).reshape(-1, 3)
    found: dict[tuple, _Candidate] = {}
    spacing = cfg.ray_spacing
    for _level in range(4 * cfg.max_interactions + 16):
        if len(origin) == 0:
            break
        budget = cfg.spreading_ref * 10.0 ** ((cfg.attenuation_floor - loss) / 20.0) - length
        budget = np.maximum(budget, 1e-9)
        hits = scene.raycast_many(origin, dirs, sensor_id=sensor_id, max_range=budget)
        seg = np.where(hits.hit, hits.distance, budget)
        reflected = np.flatnonzero((n_ref > 0) & planar)
        if len(reflected) and len(A):
            o, d, s = origin[reflected], dirs[reflected], seg[reflected]
            for ai in range(len(A)):
                w = A[ai] - o
                t = np.clip(np.einsum("ij,ij->i", w, d), 0.0, s)
                miss = np.linalg.norm(w - t[:, None] * d, axis=1)
                radius = np.maximum(cfg.capture_radius, cfg.tube_factor * spacing * (length[reflected] + t))
                for j in np.flatnonzero(miss <= radius):
                    r = reflected[j]
                    k = n_ref[r]
                    key = (ai,) + tuple(_plane_key(ref_obj[r, q], ref_n[r, q], ref_pt[r, q]) for q in range(k))
                    if key not in found:
                        planes = [(ref_pt[r, q].copy(), ref_n[r, q].copy()) for q in range(k)]
                        found[key] = _Candidate(ai, planes, [int(ref_obj[r, q]) for q in range(k)])
        h = hits.hit
        front = h & hits.front_face
        back = h & ~hits.front_face
        can = front & (n_int < cfg.max_interactions)
        pts, nrm = hits.point, hits.normal
        mi = np.maximum(hits.material_index, 0)
        new = []
        # leaving a solid: continue straight, no interaction
        b = np.flatnonzero(back)
        if len(b):
            new.append((b, pts[b] + SURFACE_EPS * dirs[b], dirs[b], length[b] + hits.distance[b], n_int[b], loss[b],
                        None, None))
        c = np.flatnonzero(can)
        if len(c):
            # transmission
            new.append((c, pts[c] + SURFACE_EPS * dirs[c], dirs[c], length[c] + hits.distance[c], n_int[c] + 1,
                        loss[c] + trans_loss[mi[c]], None, None))
            # reflection
            rd = reflect(dirs[c], nrm[c])
            rd /= np.linalg.norm(rd, axis=1, keepdims=True)
            new.append((c, pts[c] + SURFACE_EPS * nrm[c], rd, length[c] + hits.distance[c], n_int[c] + 1,
                        loss[c] + refl_loss[mi[c]], hits, "R"))
        if not new:
            break
        parts = {k: [] for k in ("src", "o", "d", "len", "ni", "loss", "nr", "robj", "rpt", "rn", "pl")}
        for src, o, d, ln, ni, ls, hb, kind in new:
            nr = n_ref[src].copy()
            robj, rpt, rn = ref_obj[src].copy(), ref_pt[src].copy(), ref_n[src].copy()
            pl = planar[src].copy()
            if kind == "R":
                slot = np.minimum(nr, K - 1)
                rows = np.arange(len(src))
                robj[rows, slot] = hb.object_id[src]
                rpt[rows, slot] = hb.point[src]
                rn[rows, slot] = hb.normal[src]
                pl &= hb.planar[src]
                nr = nr + 1
            for k, v in zip(parts, (src, o, d, ln, ni, ls, nr, robj, rpt, rn, pl)):
                parts[k].append(v)
        cat = {k: np.concatenate(v) for k, v in parts.items()}
        keep = (cat["loss"] + spreading_loss(np.maximum(cat["len"], 1e-12), cfg.spreading_ref)) <= cfg.attenuation_floor
        origin, dirs, length = cat["o"][keep], cat["d"][keep], cat["len"][keep]
        n_int, loss, n_ref = cat["ni"][keep], cat["loss"][keep], cat["nr"][keep]
        ref_obj, ref_pt, ref_n, planar = cat["robj"][keep], cat["rpt"][keep], cat["rn"][keep], cat["pl"][keep]
    return found


def _build_path(scene: Scene, tag: np.ndarray, anchor: Anchor, planes, objects, cfg: RfConfig,
                sensor_id) -> RfPath | None:
    pts = specular_points(tag, anchor.position, planes)
    if pts is None:
        return None
    interactions = []
    total_loss = 0.0
    for i in range(len(pts) - 1):
        end_obj = objects[i] if i < len(objects) else None
        start_n = planes[i - 1][1] if i > 0 else None
        walk = walk_leg(scene, pts[i], pts[i + 1], end_obj, sensor_id, start_normal=start_n, allow_transmission=True)
        if not walk.ok:
            return None
        for obj, mat in zip(walk.penetrations, walk.penetration_materials):
            interactions.append(("T", obj))
            total_loss += scene.materials[mat].rf_transmission_loss
        if end_obj is not None:
            interactions.append(("R", end_obj))
            total_loss += scene.materials[scene.get(end_obj).material_id].rf_reflection_loss
    if len(interactions) > cfg.max_interactions:
        return None
    length = path_length(pts)
    total_loss += spreading_loss(length, cfg.spreading_ref)
    if total_loss > cfg.attenuation_floor:
        return None
    aod = (pts[1] - pts[0]) / np.linalg.norm(pts[1] - pts[0])
    aoa = (pts[-2] - pts[-1]) / np.linalg.norm(pts[-2] - pts[-1])
    n_refl = len(objects)
    return RfPath(
        anchor_id=anchor.anchor_id,
        points=tuple(np.asarray(p) for p in pts),
        total_length=length,
        tof=length / cfg.speed,
        aod=aod,
        aoa=aoa,
        path_loss=float(total_loss),
        phase=path_phase(length, cfg.wavelength, n_refl),
        interaction_count=len(interactions),
        reflection_count=n_refl,
        interactions=tuple(interactions),
    )


def trace_paths_multi(scene: Scene, tag, anchors: Sequence[Anchor], config: RfConfig,
                      sensor_id=None) -> dict[str, list[RfPath]]:
    """Multipath from one tag position to every anchor, sharing one ray tree."""
    tag = np.asarray(tag.position if isinstance(tag, Pose) else tag, dtype=float)
    out: dict[str, list[RfPath]] = {a.anchor_id: [] for a in anchors}
    for a in anchors:
        # direct line first, including any walls it has to go through
        p = _build_path(scene, tag, a, [], [], config, sensor_id)
        if p is not None:
            out[a.anchor_id].append(p)
    if config.max_interactions > 0:
        found = _launch(scene, tag, anchors, config, sensor_id)
        seen: dict[str, set] = {a.anchor_id: set() for a in anchors}
        for key in sorted(found):
            cand = found[key]
            a = anchors[cand.anchor]
            p = _build_path(scene, tag, a, cand.planes, cand.objects, config, sensor_id)
            if p is None:
                continue
            sig = (tuple(p.interactions), round(p.total_length, 9))
            if sig in seen[a.anchor_id]:
                continue
            seen[a.anchor_id].add(sig)
            out[a.anchor_id].append(p)
    for paths in out.values():
        paths.sort(key=lambda p: (p.total_length, p.interactions))
    return out


def trace_paths(scene: Scene, tag_pose, anchor: Anchor, config: RfConfig, sensor_id=None) -> list[RfPath]:
    return trace_paths_multi(scene, tag_pose, [anchor], config, sensor_id)[anchor.anchor_id]


def measure_range(paths: Iterable[RfPath]) -> float | None:
    """One-way range from the strongest path (ties go to the shorter one)."""
    paths = list(paths)
    if not paths:
        return None
    best = min(paths, key=lambda p: (p.path_loss, p.total_length))
    return best.total_length


def two_way_time(paths: Iterable[RfPath]) -> float | None:
    """Poll/response round trip with zero responder latency."""
    paths = list(paths)
    if not paths:
        return None
    best = min(paths, key=lambda p: (p.path_loss, p.total_length))
    return 2.0 * best.tof


def direction_angles(v: np.ndarray) -> tuple[float, float]:
    """Azimuth and elevation (rad) of a unit vector."""
    return math.atan2(v[1], v[0]), math.asin(max(-1.0, min(1.0, v[2])))


@dataclass
class RangingFrame:
    paths: dict[str, list[RfPath]]
    ranges: dict[str, float | None] = field(default_factory=dict)


class RfTag:
    """Tag sensor wrapper used by the frame loop."""

    def __init__(self, config: RfConfig, anchors: Sequence[Anchor], sensor_id: str = "rf", mount: Pose | None = None):
        self.config = config
        self.anchors = list(anchors)
        self.sensor_id = sensor_id
        self.name = sensor_id
        self.mount = mount or Pose()

    def measure(self, scene: Scene, pose: Pose | None = None) -> RangingFrame:
        world = self.mount if pose is None else pose.compose(self.mount)
        paths = trace_paths_multi(scene, world.position, self.anchors, self.config, self.sensor_id)
        return RangingFrame(paths, {k: measure_range(v) for k, v in paths.items()})

    def evaluate(self, scene: Scene, frame: FrameContext, pose: Pose | None = None) -> RangingFrame:
        return self.measure(scene, pose)
