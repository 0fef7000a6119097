"""File formats: scenes, placement lists, bitmaps/matrices, sensor outputs.

Every writer has a paired reader that round-trips losslessly; floats are
written with 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from .echo import Echo
from .geometry import Box, Mesh, Plane, Pose, Sphere
from .lidar import LIDAR_DTYPE
from .motion import Trajectory
from .procgen import GenerationRules, GridBitmap, PlacementList
from .rf import Anchor, RfPath, direction_angles
from .scene import DynamicsClass, LabelRegistry, Material, ObjectInstance, Scene, SceneError

FLOAT = "%.17g"


class FormatError(ValueError):
    pass


def _f(x: float) -> str:
    return FLOAT % x


def load_structured(path) -> dict:
    """YAML or JSON document (JSON is a YAML subset)."""
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{p}: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{p}: expected a mapping at the top level")
    return data


def dump_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


# matrices and bitmaps -------------------------------------------------------------

def write_matrix(path, values: np.ndarray) -> None:
    """``W H`` header, then ``H`` rows of ``W`` whitespace-separated values."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise FormatError("matrix must be 2-D")
    h, w = v.shape
    lines = [f"{w} {h}"]
    if np.issubdtype(v.dtype, np.integer):
        lines += [" ".join(str(int(x)) for x in row) for row in v]
    else:
        lines += [" ".join("nan" if math.isnan(x) else _f(x) for x in row) for row in v]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path, dtype=float) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty matrix file")
    try:
        w, h = (int(t) for t in lines[0].split())
    except ValueError:
        raise FormatError(f"{path}: header must be 'W H'") from None
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != h or any(len(r) != w for r in rows):
        raise FormatError(f"{path}: expected {h} rows of {w} values")
    return np.array([[dtype(t) for t in r] for r in rows], dtype=dtype).reshape(h, w)


def write_bitmap(path, bitmap: GridBitmap) -> None:
    write_matrix(path, bitmap.codes.astype(np.int64))


def read_bitmap(path) -> GridBitmap:
    codes = read_matrix(path, int)
    try:
        return GridBitmap(codes.shape[1], codes.shape[0], codes)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# placement lists and rules ----------------------------------------------------------

def write_placement(path, plist: PlacementList) -> None:
    dump_json(plist.to_dict(), path)


def read_placement(path) -> PlacementList:
    try:
        return PlacementList.from_dict(load_structured(path))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed placement list ({exc})") from None


def read_rules(path) -> GenerationRules:
    return GenerationRules.from_dict(load_structured(path))


# scenes ------------------------------------------------------------------------------

def geometry_from_dict(d: dict):
    kind = d.get("type")
    if kind == "box":
        return Box(np.asarray(d["half_extents"], dtype=float))
    if kind == "sphere":
        return Sphere(float(d["radius"]))
    if kind == "plane":
        return Plane(np.asarray(d["normal"], dtype=float), float(d.get("offset", 0.0)))
    if kind == "mesh":
        return Mesh(np.asarray(d["vertices"], dtype=float), np.asarray(d["triangles"], dtype=np.int64))
    raise FormatError(f"unknown geometry type {kind!r}")


def geometry_to_dict(g) -> dict:
    if isinstance(g, Box):
        return {"type": "box", "half_extents": list(g.half_extents)}
    if isinstance(g, Sphere):
        return {"type": "sphere", "radius": g.radius}
    if isinstance(g, Plane):
        return {"type": "plane", "normal": list(g.normal), "offset": g.offset}
    if isinstance(g, Mesh):
        return {"type": "mesh", "vertices": g.vertices.tolist(), "triangles": g.triangles.tolist()}
    raise FormatError(f"cannot serialize geometry {type(g).__name__}")


def pose_from_dict(d) -> Pose:
    if d is None:
        return Pose()
    pos = d.get("position", [0.0, 0.0, 0.0])
    if "orientation" in d:
        return Pose.normalized(pos, d["orientation"])
    return Pose.from_euler(pos, math.radians(d.get("roll", 0.0)), math.radians(d.get("pitch", 0.0)),
                           math.radians(d.get("yaw", 0.0)))


def pose_to_dict(p: Pose) -> dict:
    return {"position": p.position.tolist(), "orientation": p.orientation.tolist()}


def material_from_dict(d: dict) -> Material:
    return Material(d["name"], dict(d.get("optical_reflectance", {})), float(d.get("acoustic_reflection_loss", 0.0)),
                    float(d.get("rf_reflection_loss", 0.0)), float(d.get("rf_transmission_loss", 0.0)))


def material_to_dict(m: Material) -> dict:
    return {"name": m.name, "optical_reflectance": dict(m.optical_reflectance),
            "acoustic_reflection_loss": m.acoustic_reflection_loss, "rf_reflection_loss": m.rf_reflection_loss,
            "rf_transmission_loss": m.rf_transmission_loss}


def scene_from_dict(data: dict, base: Path | None = None) -> tuple[Scene, list[Anchor]]:
    """Scene plus RF anchors (inline ``anchors`` and those from a ``placement`` list)."""
    from .procgen import instantiate

    try:
        scene = Scene([material_from_dict(m) for m in data.get("materials", [])])
        for k, o in enumerate(data.get("objects", [])):
            label = o.get("label")
            label_id = None
            if label is not None:
                reg = scene.labels
                label_id = reg.id_for(label) if reg.has_name(label) else reg.register(label)
            scene.add_object(ObjectInstance(
                int(o.get("id", 0)), o.get("name", f"object{k}"), geometry_from_dict(o["geometry"]),
                pose_from_dict(o.get("pose")), o.get("material", "default"), label_id,
                DynamicsClass(o.get("dynamics", "static")), frozenset(o.get("invisible_to", ())),
            ))
        anchors = [Anchor(a["id"], a["position"]) for a in data.get("anchors", [])]
        if data.get("placement"):
            p = Path(data["placement"])
            if base is not None and not p.is_absolute():
                p = base / p
            res = instantiate(scene, read_placement(p))
            anchors += res.anchors
    except KeyError as exc:
        raise FormatError(f"scene: missing key {exc}") from None
    except SceneError as exc:
        raise FormatError(f"scene: {exc}") from None
    scene.commit()
    return scene, anchors


def load_scene(path) -> tuple[Scene, list[Anchor]]:
    p = Path(path)
    return scene_from_dict(load_structured(p), p.parent)


def scene_to_dict(scene: Scene, anchors: Iterable[Anchor] = ()) -> dict:
    objs = []
    for o in scene.objects:
        objs.append({"id": o.object_id, "name": o.name, "geometry": geometry_to_dict(o.geometry),
                     "pose": pose_to_dict(o.pose), "material": o.material_id, "label": scene.labels.name(o.label_id),
                     "dynamics": o.dynamics_class.value, "invisible_to": sorted(o.invisible_to)})
    mats = [material_to_dict(m) for k, m in sorted(scene.materials.items()) if k != "default"]
    out = {"materials": mats, "objects": objs}
    anchors = list(anchors)
    if anchors:
        out["anchors"] = [{"id": a.anchor_id, "position": a.position.tolist()} for a in anchors]
    return out


def save_scene(path, scene: Scene, anchors: Iterable[Anchor] = ()) -> None:
    dump_json(scene_to_dict(scene, anchors), path)


# labels ----------------------------------------------------------------------------

def write_labels(path, registry: LabelRegistry) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "label_id", "r", "g", "b"])
        for label_id, name, (r, g, b) in registry.items():
            w.writerow([name, label_id, r, g, b])


def read_labels(path) -> LabelRegistry:
    reg = LabelRegistry()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label_id = int(row["label_id"])
            reg.register_as(label_id, row["name"])
            if reg.color(label_id) != (int(row["r"]), int(row["g"]), int(row["b"])):
                raise FormatError(f"{path}: color of label {label_id} does not match its id")
    return reg


# lidar points ------------------------------------------------------------------------

_POINT_FIELDS = LIDAR_DTYPE.names


def write_points(path, points: np.ndarray) -> None:
    """ASCII point cloud, one ``x y z intensity label_id timestamp`` per line."""
    lines = ["# " + " ".join(_POINT_FIELDS)]
    for p in points:
        lines.append(f"{_f(p['x'])} {_f(p['y'])} {_f(p['z'])} {_f(p['intensity'])} {int(p['label_id'])} "
                     f"{_f(p['timestamp'])}")
    Path(path).write_text("\n".join(lines) + "\n")


def _points_from_rows(rows: list[list[str]]) -> np.ndarray:
    out = np.empty(len(rows), dtype=LIDAR_DTYPE)
    for k, r in enumerate(rows):
        if len(r) != 6:
            raise FormatError(f"point row {k}: expected 6 fields, got {len(r)}")
        out[k] = (float(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]), float(r[5]))
    return out


def read_points(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    return _points_from_rows(rows)


def write_pcd(path, points: np.ndarray) -> None:
    n = len(points)
    header = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        "FIELDS " + " ".join(_POINT_FIELDS),
        "SIZE 8 8 8 8 4 8",
        "TYPE F F F F U F",
        "COUNT 1 1 1 1 1 1",
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        "DATA ascii",
    ]
    body = [f"{_f(p['x'])} {_f(p['y'])} {_f(p['z'])} {_f(p['intensity'])} {int(p['label_id'])} {_f(p['timestamp'])}"
            for p in points]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_pcd(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    fields, data_at = None, None
    for k, ln in enumerate(lines):
        if ln.startswith("FIELDS"):
            fields = ln.split()[1:]
        if ln.startswith("DATA"):
            if ln.split()[1] != "ascii":
                raise FormatError(f"{path}: only ascii PCD is supported")
            data_at = k + 1
            break
    if fields != list(_POINT_FIELDS) or data_at is None:
        raise FormatError(f"{path}: unexpected PCD header")
    return _points_from_rows([ln.split() for ln in lines[data_at:] if ln.strip()])


# echoes ------------------------------------------------------------------------------

ECHO_COLUMNS = ["x", "y", "z", "total_path_m", "power_db", "bounces"]


def write_echoes(path, echoes: Iterable[Echo]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ECHO_COLUMNS)
        for e in echoes:
            w.writerow([_f(e.point[0]), _f(e.point[1]), _f(e.point[2]), _f(e.total_path_length), _f(e.power),
                        e.bounce_count])


def read_echoes(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "bounces" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# anchors and rf paths ---------------------------------------------------------------------

def write_anchors(path, anchors: Iterable[Anchor]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor_id", "x", "y", "z"])
        for a in anchors:
            w.writerow([a.anchor_id, _f(a.position[0]), _f(a.position[1]), _f(a.position[2])])


def read_anchors(path) -> list[Anchor]:
    out, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["anchor_id", "x", "y", "z"]:
            raise FormatError(f"{path}: header must be anchor_id,x,y,z")
        for row in reader:
            if row["anchor_id"] in seen:
                raise FormatError(f"{path}: duplicate anchor id {row['anchor_id']!r}")
            seen.add(row["anchor_id"])
            try:
                out.append(Anchor(row["anchor_id"], [float(row["x"]), float(row["y"]), float(row["z"])]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}: bad coordinates for anchor {row['anchor_id']!r}") from None
    return out


PATH_COLUMNS = ["anchor_id", "tof_s", "aod_az", "aod_el", "aoa_az", "aoa_el", "loss_db", "phase_rad", "interactions"]


def write_paths(path, paths: Iterable[RfPath]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for p in paths:
            w.writerow([p.anchor_id, _f(p.tof), *map(_f, direction_angles(p.aod)), *map(_f, direction_angles(p.aoa)),
                        _f(p.path_loss), _f(p.phase), p.interaction_count])


def read_paths(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({k: (v if k == "anchor_id" else int(v) if k == "interactions" else float(v))
                         for k, v in row.items()})
        return rows


# trajectories ---------------------------------------------------------------------------

TRAJ_COLUMNS = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for t, p in traj.samples:
            w.writerow([_f(t), *map(_f, p.position), *map(_f, p.orientation)])


def read_trajectory(path) -> Trajectory:
    traj = Trajectory()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            v = [float(row[c]) for c in TRAJ_COLUMNS]
            traj.record(v[0], Pose(np.array(v[1:4]), np.array(v[4:8])))
    return traj
