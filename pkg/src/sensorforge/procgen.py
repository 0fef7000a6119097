"""Seeded grid-based warehouse generation, instantiation and bitmap export.

Every random draw goes through :class:`~sensorforge.rng.SplitMix64`, so a
placement list is a pure function of ``(rules, seed)`` on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import Box, Pose, world_bounds
from .rf import Anchor
from .rng import SplitMix64, derive_seed
from .scene import Material, ObjectInstance, Scene

ENTRY_TYPES = ("wall", "door", "rack", "pallet", "conveyor", "anchor", "fiducial_marker")
BLOCKING = {"wall", "door", "rack", "pallet", "conveyor"}
WALL_POLICIES = ("none", "perimeter", "perimeter+partitions")

EMPTY, WALL, ANCHOR, MARKER = 0, 1, 7, 8
RACK_CODES = range(2, 7)
ENCODABLE = {"wall", "rack", "anchor", "fiducial_marker"}

WALL_HEIGHT = 3.0
ANCHOR_HEIGHT = 2.0

# fallback surface properties, only added when the scene lacks a material of that name
DEFAULT_MATERIALS = {
    "wall": Material("wall", {"*": 0.6}, 3.0, 6.0, 15.0),
    "door": Material("door", {"*": 0.5}, 6.0, 8.0, 6.0),
    "rack": Material("rack", {"*": 0.35}, 2.0, 1.0, 40.0),
    "pallet": Material("pallet", {"*": 0.45}, 8.0, 10.0, 8.0),
    "conveyor": Material("conveyor", {"*": 0.3}, 2.0, 1.0, 40.0),
    "fiducial_marker": Material("fiducial_marker", {"*": 0.9}, 10.0, 10.0, 3.0),
}


class RulesError(ValueError):
    pass


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationRules:
    grid_width: int
    grid_height: int
    cell_size: float = 1.0
    wall_policy: str = "perimeter"
    partitions: int = 0
    rack_density: float = 0.0
    pallet_density: float = 0.0
    rack_height_range: tuple[float, float] = (1.0, 5.0)
    anchor_count: int = 0
    marker_count: int = 0
    allowed_types: frozenset = frozenset(ENTRY_TYPES)

    def __post_init__(self):
        object.__setattr__(self, "rack_height_range", tuple(float(h) for h in self.rack_height_range))
        object.__setattr__(self, "allowed_types", frozenset(self.allowed_types))
        if self.grid_width < 1 or self.grid_height < 1:
            raise RulesError("grid_width and grid_height must be >= 1")
        if not self.cell_size > 0:
            raise RulesError("cell_size must be > 0")
        if self.wall_policy not in WALL_POLICIES:
            raise RulesError(f"wall_policy must be one of {WALL_POLICIES}, got {self.wall_policy!r}")
        if self.partitions < 0 or (self.partitions and self.wall_policy != "perimeter+partitions"):
            raise RulesError("partitions requires wall_policy 'perimeter+partitions' and must be >= 0")
        for name in ("rack_density", "pallet_density"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise RulesError(f"{name} must lie in [0, 1]")
        lo, hi = self.rack_height_range if len(self.rack_height_range) == 2 else (math.nan, math.nan)
        if not 1.0 <= lo <= hi <= 5.0:
            raise RulesError("rack_height_range must satisfy 1 <= low <= high <= 5 (m)")
        if self.anchor_count < 0 or self.marker_count < 0:
            raise RulesError("anchor_count and marker_count must be >= 0")
        unknown = self.allowed_types - set(ENTRY_TYPES)
        if unknown:
            raise RulesError(f"unknown allowed_types: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRules":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise RulesError(f"unknown rules keys: {sorted(extra)}")
        kw = dict(data)
        if "rack_height_range" in kw:
            kw["rack_height_range"] = tuple(kw["rack_height_range"])
        if "allowed_types" in kw:
            kw["allowed_types"] = frozenset(kw["allowed_types"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise RulesError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "grid_width": self.grid_width, "grid_height": self.grid_height, "cell_size": self.cell_size,
            "wall_policy": self.wall_policy, "partitions": self.partitions, "rack_density": self.rack_density,
            "pallet_density": self.pallet_density, "rack_height_range": list(self.rack_height_range),
            "anchor_count": self.anchor_count, "marker_count": self.marker_count,
            "allowed_types": sorted(self.allowed_types),
        }


@dataclass(frozen=True)
class PlacementEntry:
    """One object to place. ``cell`` is ``(i, j)`` = (column along x, row along y).

    Off-grid entries give ``pose = (x, y, yaw)`` instead of a cell.
    """

    type: str
    cell: tuple[int, int] | None
    params: dict = field(default_factory=dict)
    sub_seed: int = 0
    pose: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.type not in ENTRY_TYPES:
            raise PlacementError(f"unknown entry type {self.type!r}")
        if (self.cell is None) == (self.pose is None):
            raise PlacementError("an entry needs exactly one of cell or pose")
        if self.cell is not None:
            object.__setattr__(self, "cell", (int(self.cell[0]), int(self.cell[1])))
        if self.pose is not None:
            object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))

    def to_dict(self) -> dict:
        d = {"type": self.type, "params": dict(self.params), "sub_seed": self.sub_seed}
        if self.cell is not None:
            d["cell"] = list(self.cell)
        else:
            d["pose"] = list(self.pose)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementEntry":
        cell = tuple(d["cell"]) if d.get("cell") is not None else None
        pose = tuple(d["pose"]) if d.get("pose") is not None else None
        return cls(d["type"], cell, dict(d.get("params", {})), int(d.get("sub_seed", 0)), pose)


@dataclass
class PlacementList:
    master_seed: int
    entries: list[PlacementEntry]
    width: int
    height: int
    cell_size: float = 1.0

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, PlacementList) and self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "width": self.width, "height": self.height,
                "cell_size": self.cell_size, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementList":
        return cls(int(d["master_seed"]), [PlacementEntry.from_dict(e) for e in d["entries"]], int(d["width"]),
                   int(d["height"]), float(d.get("cell_size", 1.0)))


@dataclass
class GridBitmap:
    width: int
    height: int
    codes: np.ndarray  # (height, width) uint8, row j is y index j

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.shape != (self.height, self.width):
            raise ValueError(f"codes shape {self.codes.shape} does not match {self.height}x{self.width}")
        if self.codes.size and self.codes.max() > MARKER:
            raise ValueError("bitmap codes must lie in [0, 8]")

    def code_at(self, i: int, j: int) -> int:
        return int(self.codes[j, i])

    def __eq__(self, other):
        return isinstance(other, GridBitmap) and self.codes.shape == other.codes.shape \
            and bool(np.array_equal(self.codes, other.codes))


# randomization ----------------------------------------------------------------

def randomize_changeable(entry_type: str, params: dict, sub_seed: int) -> dict:
    """Concrete state for a changeable object, drawn only from ``sub_seed``.

    door: ``open_fraction`` in [0, 1]. pallet: a stack of 1-6 cartons, each
    with an xy offset, footprint and height.
    """
    rng = SplitMix64(sub_seed)
    if entry_type == "door":
        if "open_fraction" in params:
            f = float(params["open_fraction"])
            if not 0.0 <= f <= 1.0:
                raise PlacementError("door open_fraction must lie in [0, 1]")
            return {"open_fraction": f}
        return {"open_fraction": rng.random()}
    if entry_type == "pallet":
        n = 1 + rng.integer(6)
        boxes = []
        for k in range(n):
            sx, sy = rng.uniform(0.15, 0.3), rng.uniform(0.15, 0.3)
            dx, dy = rng.uniform(sx - 0.35, 0.35 - sx), rng.uniform(sy - 0.35, 0.35 - sy)
            boxes.append({"dx": dx, "dy": dy, "sx": sx, "sy": sy, "sz": rng.uniform(0.15, 0.35)})
        return {"boxes": boxes}
    raise PlacementError(f"entry type {entry_type!r} has no randomizable state")


# generation ---------------------------------------------------------------------

def _partition_lines(rules: GenerationRules, rng: SplitMix64, wall: np.ndarray, doors: list) -> None:
    W, H = rules.grid_width, rules.grid_height
    used_x, used_y = set(), set()
    for _ in range(rules.partitions):
        vertical = rng.random() < 0.5
        lines = [x for x in range(2, W - 2) if all(abs(x - u) > 1 for u in used_x)] if vertical else \
            [y for y in range(2, H - 2) if all(abs(y - u) > 1 for u in used_y)]
        if not lines:
            raise RulesError("partitions: grid too small for the requested partition count")
        pos = lines[rng.integer(len(lines))]
        if vertical:
            used_x.add(pos)
            run = [(pos, j) for j in range(1, H - 1) if not wall[j, pos]]
        else:
            used_y.add(pos)
            run = [(i, pos) for i in range(1, W - 1) if not wall[pos, i]]
        # door gap away from crossings
        gaps = [c for c in run if _straight(wall, c, vertical)]
        for i, j in run:
            wall[j, i] = True
        if gaps:
            gi, gj = gaps[rng.integer(len(gaps))]
            wall[gj, gi] = False
            doors.append((gi, gj, "y" if vertical else "x"))


def _straight(wall, cell, vertical) -> bool:
    i, j = cell
    H, W = wall.shape
    side = [(i - 1, j), (i + 1, j)] if vertical else [(i, j - 1), (i, j + 1)]
    return all(0 <= a < W and 0 <= b < H and not wall[b, a] for a, b in side)


def generate(rules: GenerationRules, seed: int) -> PlacementList:
    """Placement list for ``rules``; a pure function of ``(rules, seed)``."""
    seed &= (1 << 64) - 1
    rng = SplitMix64(seed)
    W, H = rules.grid_width, rules.grid_height
    allowed = rules.allowed_types
    wall = np.zeros((H, W), dtype=bool)
    doors: list = []
    if rules.wall_policy != "none" and "wall" in allowed:
        wall[0, :] = wall[-1, :] = True
        wall[:, 0] = wall[:, -1] = True
        if rules.partitions:
            _partition_lines(rules, rng, wall, doors)
    taken = wall.copy()
    door_cells = {(i, j) for i, j, _ in doors}
    for i, j, _ in doors:
        taken[j, i] = True

    def free_wall_adjacent():
        out = []
        for j in range(H):
            for i in range(W):
                if taken[j, i]:
                    continue
                if any(0 <= a < W and 0 <= b < H and wall[b, a]
                       for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))):
                    out.append((i, j))
        return out

    picks = {}
    for kind, count in (("anchor", rules.anchor_count), ("fiducial_marker", rules.marker_count)):
        if count == 0:
            picks[kind] = []
            continue
        if kind not in allowed:
            raise RulesError(f"{kind.replace('fiducial_', '')}_count > 0 but {kind!r} is not an allowed type")
        cand = free_wall_adjacent()
        if count > len(cand):
            name = "anchor_count" if kind == "anchor" else "marker_count"
            raise RulesError(f"{name}={count} exceeds the {len(cand)} free wall-adjacent cells")
        chosen = sorted(rng.sample(cand, count), key=lambda c: (c[1], c[0]))
        for i, j in chosen:
            taken[j, i] = True
        picks[kind] = chosen

    lo, hi = rules.rack_height_range
    racks, pallets = [], []
    # keep the cells next to a door open so partitions stay passable
    near_door = {(i + di, j + dj) for i, j in door_cells for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))}
    if "rack" in allowed and rules.rack_density > 0:
        for j in range(H):
            for i in range(W):
                if taken[j, i] or (i, j) in near_door:
                    continue
                if rng.random() < rules.rack_density:
                    racks.append((i, j, round(rng.uniform(lo, hi), 3)))
                    taken[j, i] = True
    if "pallet" in allowed and rules.pallet_density > 0:
        for j in range(H):
            for i in range(W):
                if taken[j, i] or (i, j) in near_door:
                    continue
                if rng.random() < rules.pallet_density:
                    pallets.append((i, j))
                    taken[j, i] = True

    raw: list[tuple[str, tuple[int, int], dict]] = []
    raw += [("wall", (i, j), {}) for j in range(H) for i in range(W) if wall[j, i]]
    if "door" in allowed:
        raw += [("door", (i, j), {"axis": axis}) for i, j, axis in sorted(doors, key=lambda d: (d[1], d[0]))]
    raw += [("rack", (i, j), {"height": h}) for i, j, h in racks]
    raw += [("pallet", (i, j), {}) for i, j in pallets]
    raw += [("anchor", c, {}) for c in picks["anchor"]]
    raw += [("fiducial_marker", c, {}) for c in picks["fiducial_marker"]]
    entries = []
    for idx, (kind, cell, params) in enumerate(raw):
        sub = derive_seed(seed, idx)
        if kind == "door":
            params = {**params, **randomize_changeable("door", params, sub)}
        entries.append(PlacementEntry(kind, cell, params, sub))
    return PlacementList(seed, entries, W, H, rules.cell_size)


# bitmap ----------------------------------------------------------------------------

def rack_code(height: float) -> int:
    return 1 + min(5, max(1, int(round(height))))


def to_bitmap(plist: PlacementList, rules: GenerationRules | None = None) -> GridBitmap:
    """Grid codes for the encodable entries (walls, racks, anchors, markers).

    Doors, pallets and conveyors have no code and are left out.
    """
    W = rules.grid_width if rules else plist.width
    H = rules.grid_height if rules else plist.height
    codes = np.zeros((H, W), dtype=np.uint8)
    bad = [k for k, e in enumerate(plist.entries) if e.cell is None]
    if bad:
        raise PlacementError(f"entries not grid-aligned: {bad}")
    for k, e in enumerate(plist.entries):
        i, j = e.cell
        if not (0 <= i < W and 0 <= j < H):
            raise PlacementError(f"entry {k} cell {e.cell} outside {W}x{H} grid")
        if e.type == "wall":
            codes[j, i] = WALL
        elif e.type == "rack":
            codes[j, i] = rack_code(float(e.params.get("height", 1.0)))
        elif e.type == "anchor":
            codes[j, i] = ANCHOR
        elif e.type == "fiducial_marker":
            codes[j, i] = MARKER
    return GridBitmap(W, H, codes)


def from_bitmap(bitmap: GridBitmap, cell_size: float = 1.0, master_seed: int = 0) -> PlacementList:
    """Placement list in generation order (walls, racks, anchors, markers; row-major)."""
    groups = {"wall": [], "rack": [], "anchor": [], "fiducial_marker": []}
    for j in range(bitmap.height):
        for i in range(bitmap.width):
            c = bitmap.code_at(i, j)
            if c == WALL:
                groups["wall"].append(((i, j), {}))
            elif c in RACK_CODES:
                groups["rack"].append(((i, j), {"height": float(c - 1)}))
            elif c == ANCHOR:
                groups["anchor"].append(((i, j), {}))
            elif c == MARKER:
                groups["fiducial_marker"].append(((i, j), {}))
    entries = []
    for kind in ("wall", "rack", "anchor", "fiducial_marker"):
        for cell, params in groups[kind]:
            entries.append(PlacementEntry(kind, cell, params, derive_seed(master_seed, len(entries))))
    return PlacementList(master_seed, entries, bitmap.width, bitmap.height, cell_size)


# instantiation -----------------------------------------------------------------------

@dataclass
class InstantiateResult:
    object_ids: list[int] = field(default_factory=list)
    anchors: list[Anchor] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)  # (entry index, reason)


def _ensure_materials(scene: Scene) -> None:
    for name, mat in DEFAULT_MATERIALS.items():
        if name not in scene.materials:
            scene.add_material(mat)


def _entry_frame(e: PlacementEntry, c: float) -> tuple[float, float, float]:
    if e.cell is not None:
        return (e.cell[0] + 0.5) * c, (e.cell[1] + 0.5) * c, 0.0
    return e.pose


def _yaw_box(half, center, yaw=0.0) -> tuple[Box, Pose]:
    return Box(np.asarray(half, dtype=float)), Pose.from_yaw(center[0], center[1], yaw, center[2])


def _parts(e: PlacementEntry, c: float, walls: set) -> list[tuple[Box, Pose]]:
    """Box primitives making up one entry, in world coordinates."""
    x, y, yaw = _entry_frame(e, c)
    cs, sn = math.cos(yaw), math.sin(yaw)

    def at(dx, dy):
        return x + cs * dx - sn * dy, y + sn * dx + cs * dy

    h2 = 0.5 * c
    if e.type == "wall":
        h = float(e.params.get("height", WALL_HEIGHT))
        return [_yaw_box((h2, h2, h / 2), (x, y, h / 2), yaw)]
    if e.type == "rack":
        h = float(e.params.get("height", 1.0))
        n = max(1, math.ceil(h - 1e-9))
        post = 0.04 * c
        parts = []
        # end frames along x, shelves in between
        for sx in (-1, 1):
            px, py = at(sx * (h2 - post), 0.0)
            parts.append(_yaw_box((post, 0.45 * c, h / 2), (px, py, h / 2), yaw))
        for k in range(n + 1):
            z = 0.1 + (h - 0.1) * k / n if k else 0.1
            parts.append(_yaw_box((h2 - 2 * post, 0.45 * c, 0.025), (x, y, z - 0.025), yaw))
        return parts
    if e.type == "pallet":
        st = randomize_changeable("pallet", e.params, e.sub_seed)
        parts = [_yaw_box((0.4 * c, 0.4 * c, 0.075), (x, y, 0.075), yaw)]
        z = 0.15
        for b in st["boxes"]:
            px, py = at(b["dx"] * c, b["dy"] * c)
            parts.append(_yaw_box((b["sx"] * c, b["sy"] * c, b["sz"] / 2), (px, py, z + b["sz"] / 2), yaw))
            z += b["sz"]
        return parts
    if e.type == "door":
        f = randomize_changeable("door", e.params, e.sub_seed)["open_fraction"]
        h = float(e.params.get("height", 2.2))
        axis_yaw = 0.0 if e.params.get("axis", "x") == "x" else math.pi / 2
        a = axis_yaw + yaw
        # panel hinged at one cell edge, swung open by f * 90 degrees
        hx, hy = x - (h2 - 0.03) * math.cos(a), y - (h2 - 0.03) * math.sin(a)
        swing = a + f * math.pi / 2
        w = 0.5 * c - 0.035
        cx, cy = hx + (w + 0.005) * math.cos(swing), hy + (w + 0.005) * math.sin(swing)
        return [_yaw_box((w, 0.02, h / 2), (cx, cy, h / 2), swing)]
    if e.type == "conveyor":
        return [_yaw_box((h2, 0.3 * c, 0.4), (x, y, 0.4), yaw)]
    if e.type == "fiducial_marker":
        z = float(e.params.get("height", 1.5))
        if e.cell is not None:
            i, j = e.cell
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if (i + di, j + dj) in walls:
                    # flush against the neighbouring wall face
                    mx, my = x + di * (h2 - 0.005), y + dj * (h2 - 0.005)
                    half = (0.005, 0.15, 0.15) if di else (0.15, 0.005, 0.15)
                    return [_yaw_box(half, (mx, my, z), 0.0)]
        return [_yaw_box((0.15, 0.005, 0.15), (x, y, z), yaw)]
    return []


def instantiate(scene: Scene, plist: PlacementList, *, check_collisions: bool = True,
                anchor_height: float = ANCHOR_HEIGHT) -> InstantiateResult:
    """Add every entry to ``scene`` at runtime; anchors come back as RF anchors."""
    _ensure_materials(scene)
    c = plist.cell_size
    out = InstantiateResult()
    walls = {e.cell for e in plist.entries if e.type == "wall" and e.cell is not None}
    lo_list, hi_list = [], []
    if check_collisions:
        for o in scene.objects:
            wb = world_bounds(o.geometry, o.pose)
            if wb is not None:
                lo_list.append(wb[0])
                hi_list.append(wb[1])
    shrink = 1e-6
    for idx, e in enumerate(plist.entries):
        if e.type == "anchor":
            x, y, _ = _entry_frame(e, c)
            z = float(e.params.get("height", anchor_height))
            out.anchors.append(Anchor(f"anchor{len(out.anchors)}", [x, y, z]))
            continue
        parts = _parts(e, c, walls)
        bounds = [world_bounds(g, p) for g, p in parts]
        if check_collisions and lo_list:
            lo_a, hi_a = np.array(lo_list), np.array(hi_list)
            clash = False
            for blo, bhi in bounds:
                ov = np.all((lo_a < bhi - shrink) & (hi_a > blo + shrink), axis=1)
                if ov.any():
                    clash = True
                    break
            if clash:
                out.skipped.append((idx, f"{e.type} at {e.cell or e.pose} overlaps existing geometry"))
                continue
        label = scene.labels.register(scene.labels.unique_name(e.type))
        for k, (g, p) in enumerate(parts):
            oid = scene.add_object(ObjectInstance(0, f"{e.type}[{idx}].{k}", g, p, material_id=e.type,
                                                  label_id=label))
            out.object_ids.append(oid)
        for blo, bhi in bounds:
            lo_list.append(blo)
            hi_list.append(bhi)
    scene.commit()
    return out


def blocking_cells(plist: PlacementList) -> dict[tuple[int, int], int]:
    """Map cell -> number of blocking entries in it (for legality checks)."""
    counts: dict[tuple[int, int], int] = {}
    for e in plist.entries:
        if e.type in BLOCKING and e.cell is not None:
            counts[e.cell] = counts.get(e.cell, 0) + 1
    return counts


def iter_entries(plist: PlacementList, kind: str) -> Iterable[PlacementEntry]:
    return (e for e in plist.entries if e.type == kind)
