"""Compiled BVH construction and two-level ray traversal.

Top level: one BVH over object bounds (boxes, spheres, meshes). Infinite planes
are tested linearly. Bottom level: one BVH per distinct mesh, stored in the
mesh's local frame, so moving a mesh object only touches the top level.
"""

from __future__ import annotations

import os

import numba
import numpy as np
from numba import njit, prange

numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

KIND_BOX = 0
KIND_SPHERE = 1
KIND_MESH = 2
KIND_PLANE = 3

T_MIN = 1e-9
_N_BINS = 16
_STACK = 256
_BIG = 1e300


def configure_threads() -> int:
    """Apply ``SENSORFORGE_THREADS`` (0 or unset = all available)."""
    raw = os.environ.get("SENSORFORGE_THREADS", "0").strip() or "0"
    try:
        want = int(raw)
    except ValueError:
        raise ValueError(f"SENSORFORGE_THREADS must be an integer, got {raw!r}") from None
    avail = numba.config.NUMBA_NUM_THREADS
    n = avail if want <= 0 else min(want, avail)
    numba.set_num_threads(n)
    return n


@njit(cache=True)
def _area(lo, hi):
    dx = hi[0] - lo[0]
    dy = hi[1] - lo[1]
    dz = hi[2] - lo[2]
    if dx < 0.0 or dy < 0.0 or dz < 0.0:
        return 0.0
    return 2.0 * (dx * dy + dy * dz + dz * dx)


@njit(cache=True)
def build_bvh(lo, hi, leaf_size):
    """Binned-SAH BVH over items with bounds ``lo``/``hi`` (n, 3).

    Returns ``(node_min, node_max, left, right, start, count, items)``; a node is
    a leaf when ``left < 0`` and then covers ``items[start:start + count]``.
    """
    n = lo.shape[0]
    cap = max(2 * n - 1, 1)
    nmin = np.empty((cap, 3))
    nmax = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    items = np.arange(n)
    if n == 0:
        return nmin[:0], nmax[:0], left[:0], right[:0], start[:0], count[:0], items
    cent = 0.5 * (lo + hi)
    st_node = np.empty(cap, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    sp = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    sp = 1
    n_nodes = 1
    bcnt = np.zeros(_N_BINS, np.int64)
    bmin = np.empty((_N_BINS, 3))
    bmax = np.empty((_N_BINS, 3))
    rarea = np.zeros(_N_BINS)
    rcnt = np.zeros(_N_BINS, np.int64)
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_s[sp]
        e = st_e[sp]
        lo3 = np.full(3, np.inf)
        hi3 = np.full(3, -np.inf)
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for k in range(s, e):
            it = items[k]
            for a in range(3):
                if lo[it, a] < lo3[a]:
                    lo3[a] = lo[it, a]
                if hi[it, a] > hi3[a]:
                    hi3[a] = hi[it, a]
                if cent[it, a] < clo[a]:
                    clo[a] = cent[it, a]
                if cent[it, a] > chi[a]:
                    chi[a] = cent[it, a]
        nmin[node] = lo3
        nmax[node] = hi3
        start[node] = s
        count[node] = e - s
        cnt = e - s
        if cnt <= leaf_size:
            continue
        axis = 0
        ext = chi[0] - clo[0]
        for a in range(1, 3):
            if chi[a] - clo[a] > ext:
                ext = chi[a] - clo[a]
                axis = a
        if ext <= 0.0:
            continue
        bcnt[:] = 0
        bmin[:, :] = np.inf
        bmax[:, :] = -np.inf
        scale = _N_BINS / ext
        for k in range(s, e):
            it = items[k]
            b = int((cent[it, axis] - clo[axis]) * scale)
            if b >= _N_BINS:
                b = _N_BINS - 1
            bcnt[b] += 1
            for a in range(3):
                if lo[it, a] < bmin[b, a]:
                    bmin[b, a] = lo[it, a]
                if hi[it, a] > bmax[b, a]:
                    bmax[b, a] = hi[it, a]
        # right sweep
        acc_lo = np.full(3, np.inf)
        acc_hi = np.full(3, -np.inf)
        acc_n = 0
        for b in range(_N_BINS - 1, 0, -1):
            for a in range(3):
                acc_lo[a] = min(acc_lo[a], bmin[b, a])
                acc_hi[a] = max(acc_hi[a], bmax[b, a])
            acc_n += bcnt[b]
            rarea[b] = _area(acc_lo, acc_hi)
            rcnt[b] = acc_n
        acc_lo[:] = np.inf
        acc_hi[:] = -np.inf
        acc_n = 0
        best_cost = np.inf
        best_b = -1
        for b in range(0, _N_BINS - 1):
            for a in range(3):
                acc_lo[a] = min(acc_lo[a], bmin[b, a])
                acc_hi[a] = max(acc_hi[a], bmax[b, a])
            acc_n += bcnt[b]
            if acc_n == 0 or rcnt[b + 1] == 0:
                continue
            cost = _area(acc_lo, acc_hi) * acc_n + rarea[b + 1] * rcnt[b + 1]
            if cost < best_cost:
                best_cost = cost
                best_b = b
        if best_b < 0:
            continue
        # partition by bin
        i = s
        j = e - 1
        while i <= j:
            it = items[i]
            b = int((cent[it, axis] - clo[axis]) * scale)
            if b >= _N_BINS:
                b = _N_BINS - 1
            if b <= best_b:
                i += 1
            else:
                items[i] = items[j]
                items[j] = it
                j -= 1
        mid = i
        if mid == s or mid == e:
            mid = (s + e) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        st_node[sp] = lc
        st_s[sp] = s
        st_e[sp] = mid
        sp += 1
        st_node[sp] = rc
        st_s[sp] = mid
        st_e[sp] = e
        sp += 1
    return (
        nmin[:n_nodes].copy(),
        nmax[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        start[:n_nodes].copy(),
        count[:n_nodes].copy(),
        items,
    )


@njit(cache=True, inline="always")
def _slab(nmin, nmax, node, ox, oy, oz, ix, iy, iz, tmax):
    t1 = (nmin[node, 0] - ox) * ix
    t2 = (nmax[node, 0] - ox) * ix
    tn = min(t1, t2)
    tf = max(t1, t2)
    t1 = (nmin[node, 1] - oy) * iy
    t2 = (nmax[node, 1] - oy) * iy
    tn = max(tn, min(t1, t2))
    tf = min(tf, max(t1, t2))
    t1 = (nmin[node, 2] - oz) * iz
    t2 = (nmax[node, 2] - oz) * iz
    tn = max(tn, min(t1, t2))
    tf = min(tf, max(t1, t2))
    if tf >= max(tn, 0.0) and tn <= tmax:
        return tn
    return np.inf


@njit(cache=True, inline="always")
def _inv(d):
    if d == 0.0:
        return _BIG
    return 1.0 / d


@njit(cache=True)
def _mesh_hit(ox, oy, oz, dx, dy, dz, root, best, bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2):
    """Nearest triangle hit below ``best`` in one bottom-level BVH."""
    ix = _inv(dx)
    iy = _inv(dy)
    iz = _inv(dz)
    stack = np.empty(_STACK, np.int64)
    sp = 0
    stack[0] = root
    sp = 1
    hit_tri = -1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _slab(bl_min, bl_max, node, ox, oy, oz, ix, iy, iz, best) == np.inf:
            continue
        lc = bl_left[node]
        if lc < 0:
            s = bl_start[node]
            for k in range(s, s + bl_count[node]):
                tri = bl_items[k]
                ax = e1[tri, 0]
                ay = e1[tri, 1]
                az = e1[tri, 2]
                bx = e2[tri, 0]
                by = e2[tri, 1]
                bz = e2[tri, 2]
                px = dy * bz - dz * by
                py = dz * bx - dx * bz
                pz = dx * by - dy * bx
                det = ax * px + ay * py + az * pz
                if abs(det) < 1e-18:
                    continue
                inv_det = 1.0 / det
                tx = ox - v0[tri, 0]
                ty = oy - v0[tri, 1]
                tz = oz - v0[tri, 2]
                u = (tx * px + ty * py + tz * pz) * inv_det
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * az - tz * ay
                qy = tz * ax - tx * az
                qz = tx * ay - ty * ax
                v = (dx * qx + dy * qy + dz * qz) * inv_det
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (bx * qx + by * qy + bz * qz) * inv_det
                if t > T_MIN and t < best:
                    best = t
                    hit_tri = tri
        else:
            rc = bl_right[node]
            tl = _slab(bl_min, bl_max, lc, ox, oy, oz, ix, iy, iz, best)
            tr = _slab(bl_min, bl_max, rc, ox, oy, oz, ix, iy, iz, best)
            if tl <= tr:
                if tr != np.inf:
                    stack[sp] = rc
                    sp += 1
                if tl != np.inf:
                    stack[sp] = lc
                    sp += 1
            else:
                if tl != np.inf:
                    stack[sp] = lc
                    sp += 1
                if tr != np.inf:
                    stack[sp] = rc
                    sp += 1
    return best, hit_tri


@njit(cache=True)
def _object_hit(obj, ox, oy, oz, dx, dy, dz, best, kind, pos, rot, half, mesh_root,
                bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2):
    # ray into the object's local frame (rot is world-from-local)
    rx = ox - pos[obj, 0]
    ry = oy - pos[obj, 1]
    rz = oz - pos[obj, 2]
    lox = rot[obj, 0, 0] * rx + rot[obj, 1, 0] * ry + rot[obj, 2, 0] * rz
    loy = rot[obj, 0, 1] * rx + rot[obj, 1, 1] * ry + rot[obj, 2, 1] * rz
    loz = rot[obj, 0, 2] * rx + rot[obj, 1, 2] * ry + rot[obj, 2, 2] * rz
    ldx = rot[obj, 0, 0] * dx + rot[obj, 1, 0] * dy + rot[obj, 2, 0] * dz
    ldy = rot[obj, 0, 1] * dx + rot[obj, 1, 1] * dy + rot[obj, 2, 1] * dz
    ldz = rot[obj, 0, 2] * dx + rot[obj, 1, 2] * dy + rot[obj, 2, 2] * dz
    k = kind[obj]
    if k == KIND_BOX:
        tn = -np.inf
        tf = np.inf
        for a in range(3):
            if a == 0:
                o = lox
                d = ldx
            elif a == 1:
                o = loy
                d = ldy
            else:
                o = loz
                d = ldz
            h = half[obj, a]
            if d == 0.0:
                if o < -h or o > h:
                    return best, -2
                continue
            inv = 1.0 / d
            t1 = (-h - o) * inv
            t2 = (h - o) * inv
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tn:
                tn = t1
            if t2 < tf:
                tf = t2
        if tn > tf:
            return best, -2
        if tn > T_MIN:
            t = tn
        elif tf > T_MIN:
            t = tf
        else:
            return best, -2
        if t < best:
            return t, -1
        return best, -2
    if k == KIND_SPHERE:
        r = half[obj, 0]
        b = lox * ldx + loy * ldy + loz * ldz
        c = lox * lox + loy * loy + loz * loz - r * r
        disc = b * b - c
        if disc < 0.0:
            return best, -2
        sq = np.sqrt(disc)
        t = -b - sq
        if t <= T_MIN:
            t = -b + sq
            if t <= T_MIN:
                return best, -2
        if t < best:
            return t, -1
        return best, -2
    if k == KIND_MESH:
        t, tri = _mesh_hit(lox, loy, loz, ldx, ldy, ldz, mesh_root[obj], best,
                           bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2)
        if tri >= 0:
            return t, tri
        return best, -2
    return best, -2


@njit(cache=True)
def _cast_one(ox, oy, oz, dx, dy, dz, tmax, skip,
              kind, pos, rot, half, plane, mesh_root, plane_objs,
              tl_min, tl_max, tl_left, tl_right, tl_start, tl_count, tl_items,
              bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2):
    best = tmax
    best_obj = -1
    best_tri = -1
    for p in range(plane_objs.shape[0]):
        obj = plane_objs[p]
        if skip[obj]:
            continue
        denom = plane[obj, 0] * dx + plane[obj, 1] * dy + plane[obj, 2] * dz
        if abs(denom) < 1e-15:
            continue
        t = (plane[obj, 3] - (plane[obj, 0] * ox + plane[obj, 1] * oy + plane[obj, 2] * oz)) / denom
        if t > T_MIN and t < best:
            best = t
            best_obj = obj
            best_tri = -1
    if tl_min.shape[0] == 0:
        return best, best_obj, best_tri
    ix = _inv(dx)
    iy = _inv(dy)
    iz = _inv(dz)
    stack = np.empty(_STACK, np.int64)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _slab(tl_min, tl_max, node, ox, oy, oz, ix, iy, iz, best) == np.inf:
            continue
        lc = tl_left[node]
        if lc < 0:
            s = tl_start[node]
            for k in range(s, s + tl_count[node]):
                obj = tl_items[k]
                if skip[obj]:
                    continue
                t, tri = _object_hit(obj, ox, oy, oz, dx, dy, dz, best, kind, pos, rot, half, mesh_root,
                                     bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2)
                if tri != -2:
                    best = t
                    best_obj = obj
                    best_tri = tri
        else:
            rc = tl_right[node]
            tl = _slab(tl_min, tl_max, lc, ox, oy, oz, ix, iy, iz, best)
            tr = _slab(tl_min, tl_max, rc, ox, oy, oz, ix, iy, iz, best)
            if tl <= tr:
                if tr != np.inf:
                    stack[sp] = rc
                    sp += 1
                if tl != np.inf:
                    stack[sp] = lc
                    sp += 1
            else:
                if tl != np.inf:
                    stack[sp] = lc
                    sp += 1
                if tr != np.inf:
                    stack[sp] = rc
                    sp += 1
    return best, best_obj, best_tri


@njit(cache=True, parallel=True)
def cast_rays(origins, dirs, tmax, skip,
              kind, pos, rot, half, plane, mesh_root, plane_objs,
              tl_min, tl_max, tl_left, tl_right, tl_start, tl_count, tl_items,
              bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2):
    """Nearest hit for each ray; ``obj = -1`` marks a miss."""
    n = origins.shape[0]
    out_t = np.empty(n)
    out_obj = np.empty(n, np.int64)
    out_tri = np.empty(n, np.int64)
    for i in prange(n):
        t, obj, tri = _cast_one(origins[i, 0], origins[i, 1], origins[i, 2], dirs[i, 0], dirs[i, 1], dirs[i, 2],
                                tmax[i], skip, kind, pos, rot, half, plane, mesh_root, plane_objs,
                                tl_min, tl_max, tl_left, tl_right, tl_start, tl_count, tl_items,
                                bl_min, bl_max, bl_left, bl_right, bl_start, bl_count, bl_items, v0, e1, e2)
        out_t[i] = t if obj >= 0 else np.inf
        out_obj[i] = obj
        out_tri[i] = tri
    return out_t, out_obj, out_tri
