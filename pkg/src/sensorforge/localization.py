"""Range-based multilateration and localization-error maps over a grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rf import Anchor, RfConfig, measure_range, trace_paths_multi
from .scene import Scene

DEGENERATE_COND = 1e12
STEP_TOL = 1e-9
MAX_ITER = 100
RESIDUAL_TOL = 1e-9  # relative RMS residual treated as an exact fit

UNREACHABLE = math.nan
OCCUPIED = -1.0


@dataclass(frozen=True)
class Estimate:
    position: np.ndarray
    residual: float  # RMS of range residuals, m
    iterations: int
    converged: bool
    degenerate: bool = False


def degenerate_geometry(anchors: np.ndarray, dims: int) -> bool:
    centered = anchors - anchors.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if len(sv) < dims or sv[0] == 0:
        return True
    return sv[0] > DEGENERATE_COND * sv[dims - 1]


def _linear_guess(A: np.ndarray, r: np.ndarray, dims: int, z: float | None) -> np.ndarray:
    """Closed-form start from differencing the squared range equations against anchor 0."""
    x = A.mean(axis=0)
    rhs = (A[1:] ** 2).sum(axis=1) - (A[0] ** 2).sum() - r[1:] ** 2 + r[0] ** 2
    M = 2.0 * (A[1:] - A[0])
    if z is not None:
        rhs = rhs - M[:, 2] * z
        x[2] = z
    x[:dims] = np.linalg.lstsq(M[:, :dims], rhs, rcond=None)[0]
    return x


def _gauss_newton(A: np.ndarray, r: np.ndarray, x: np.ndarray, dims: int) -> Estimate:
    converged = False
    it = 0
    for it in range(MAX_ITER + 1):
        diff = x - A
        dist = np.linalg.norm(diff, axis=1)
        res = dist - r
        J = diff[:, :dims] / np.maximum(dist, 1e-12)[:, None]
        if np.linalg.cond(J) > DEGENERATE_COND:
            return Estimate(x, float(np.sqrt(np.mean(res**2))), it, False, True)
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        if np.linalg.norm(step) < STEP_TOL:
            converged = True
            break
        if it == MAX_ITER:
            break
        # halve the step until the cost stops rising; keeps inconsistent (NLOS) ranges from diverging
        cost = res @ res
        for _ in range(40):
            trial = x.copy()
            trial[:dims] += step
            tr = np.linalg.norm(trial - A, axis=1) - r
            if tr @ tr <= cost:
                break
            step = 0.5 * step
        else:
            converged = True
            break
        x = trial
    res = np.linalg.norm(x - A, axis=1) - r
    return Estimate(x, float(np.sqrt(np.mean(res**2))), it, converged)


def multilaterate(anchors, ranges, *, planar_z: float | None = None, x0=None) -> Estimate:
    """Gauss-Newton fit of ``sum (|x - a_i| - r_i)**2``.

    With ``planar_z`` set the height is fixed and only x, y are solved (needs 3
    non-collinear anchors); otherwise 4 non-coplanar anchors are required.
    Starts from the anchor centroid (or ``x0``); when that run ends with a
    nonzero residual it is repeated from the closed-form linearised solution
    and the better fit is kept, since the centroid can sit in the basin of a
    mirror-image local minimum.
    """
    A = np.asarray(anchors, dtype=float).reshape(-1, 3)
    r = np.asarray(ranges, dtype=float).reshape(-1)
    if len(A) != len(r):
        raise ValueError("anchors and ranges differ in length")
    dims = 3 if planar_z is None else 2
    nan = np.full(3, np.nan)
    if len(A) < dims + 1 or degenerate_geometry(A[:, :dims], dims):
        return Estimate(nan, math.nan, 0, False, True)
    x = A.mean(axis=0) if x0 is None else np.asarray(x0, dtype=float).copy()
    if planar_z is not None:
        x[2] = planar_z
    est = _gauss_newton(A, r, x, dims)
    if est.degenerate or est.residual <= RESIDUAL_TOL * max(1.0, float(np.max(np.abs(r)))):
        return est
    alt = _gauss_newton(A, r, _linear_guess(A, r, dims, planar_z), dims)
    if not alt.degenerate and alt.residual < est.residual:
        return Estimate(alt.position, alt.residual, est.iterations + alt.iterations, alt.converged)
    return est


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred evaluation grid in the horizontal plane at height ``z``."""

    x0: float
    y0: float
    cell: float
    nx: int
    ny: int
    z: float = 1.0

    def __post_init__(self):
        if not self.cell > 0:
            raise ValueError("cell size must be > 0")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")

    def center(self, i: int, j: int) -> np.ndarray:
        """Center of row ``i`` (y), column ``j`` (x)."""
        return np.array([self.x0 + (j + 0.5) * self.cell, self.y0 + (i + 0.5) * self.cell, self.z])

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """``x0=..,y0=..,cell=..,nx=..,ny=..[,z=..]``"""
        kv = {}
        for part in text.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ValueError(f"grid spec entry {part!r} is not key=value")
            k, v = part.split("=", 1)
            kv[k.strip()] = v.strip()
        unknown = set(kv) - {"x0", "y0", "cell", "nx", "ny", "z"}
        if unknown:
            raise ValueError(f"unknown grid spec keys: {sorted(unknown)}")
        missing = {"x0", "y0", "cell", "nx", "ny"} - set(kv)
        if missing:
            raise ValueError(f"grid spec missing keys: {sorted(missing)}")
        return cls(float(kv["x0"]), float(kv["y0"]), float(kv["cell"]), int(kv["nx"]), int(kv["ny"]),
                   float(kv.get("z", 1.0)))


@dataclass
class ErrorMap:
    """Per-cell localization error (m); NaN = unreachable, -1 = occupied."""

    grid: GridSpec
    values: np.ndarray  # (ny, nx)

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values >= 0)

    def summary(self) -> dict:
        v = self.values[self.reachable]
        out = {"cells": int(self.values.size), "reachable": int(v.size),
               "unreachable": int(np.isnan(self.values).sum()), "occupied": int((self.values == OCCUPIED).sum())}
        if v.size:
            out.update(mean=float(v.mean()), median=float(np.median(v)), p95=float(np.percentile(v, 95)),
                       max=float(v.max()))
        return out


def localization_error_map(scene: Scene, anchors: Sequence[Anchor], grid: GridSpec, config: RfConfig,
                           planar: bool = True, sensor_id=None) -> ErrorMap:
    """Trace, range and multilaterate at every free cell center."""
    vals = np.full((grid.ny, grid.nx), np.nan)
    anchors = list(anchors)
    for i in range(grid.ny):
        for j in range(grid.nx):
            p = grid.center(i, j)
            if scene.contains_point(p):
                vals[i, j] = OCCUPIED
                continue
            paths = trace_paths_multi(scene, p, anchors, config, sensor_id)
            pos, rng = [], []
            for a in anchors:
                r = measure_range(paths[a.anchor_id])
                if r is not None:
                    pos.append(a.position)
                    rng.append(r)
            need = 3 if planar else 4
            if len(rng) < need:
                continue
            est = multilaterate(pos, rng, planar_z=grid.z if planar else None)
            if est.degenerate or not np.all(np.isfinite(est.position)):
                continue
            vals[i, j] = float(np.linalg.norm(est.position - p))
    return ErrorMap(grid, vals)
