"""Compiled traversal kernels for the boundary-query tree.

The pure-Python stack traversals in `snch` are kept as the readable reference
(and as the instrumented path that counts visited nodes), but their per-call
overhead dominates walk time. These kernels reimplement the same four
traversals under numba with every per-element arithmetic expression written
operation for operation like the vectorized forms in `primitives`, so the
results -- distances, closest points, hit parameters, and the
(value, element-id) tie-breaks -- are bit-identical to both the reference
traversals and the exhaustive scans in `brute`. That equality is asserted by
tests rather than assumed.

All kernels use IEEE division semantics (`error_model="numpy"`) because the
reference expressions lean on inf/nan propagation for degenerate denominators,
and none enable fastmath: reassociation would break the bit-exactness
guarantee. One quirk that matters: numpy's einsum reduces length-3 inner
products in SIMD-pair order, (x0 + x2) + x1, not left to right, so every
three-term dot product below is spelled in that order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .primitives import RAY_T_MIN

_INF = np.inf
_F64_MAX = float(np.finfo(np.float64).max)
_HALF_PI = 0.5 * math.pi


@njit(cache=True, inline="always", error_model="numpy")
def _clip01_zero_nan(t):
    # matches nan_to_num(clip(t, 0, 1)): +inf -> 1, -inf -> 0, nan -> 0
    if t > 1.0:
        return 1.0
    if t < 0.0:
        return 0.0
    if t == t:
        return t
    return 0.0


@njit(cache=True, inline="always", error_model="numpy")
def _nan_to_num(x):
    if x != x:
        return 0.0
    if x == _INF:
        return _F64_MAX
    if x == -_INF:
        return -_F64_MAX
    return x


@njit(cache=True, inline="always", error_model="numpy")
def _box_d2(lo, hi, nid, p):
    s = 0.0
    for k in range(p.shape[0]):
        x = p[k]
        l = lo[nid, k]
        if x < l:
            d = l - x
            s += d * d
        else:
            h = hi[nid, k]
            if x > h:
                d = x - h
                s += d * d
    return s


@njit(cache=True, inline="always", error_model="numpy")
def _ray_box(lo, hi, nid, o, d, cap):
    tn = 0.0
    tf = cap
    for k in range(o.shape[0]):
        dk = d[k]
        ok = o[k]
        if dk != 0.0:
            inv = 1.0 / dk
            t0 = (lo[nid, k] - ok) * inv
            t1 = (hi[nid, k] - ok) * inv
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tn:
                tn = t0
            if t1 < tf:
                tf = t1
            if tn > tf:
                return _INF
        elif ok < lo[nid, k] or ok > hi[nid, k]:
            return _INF
    return tn


@njit(cache=True, inline="always", error_model="numpy")
def _seg_cp(a, b, j, p):
    """Closest point on segment j to p: (d2, qx, qy, qz). qz is 0 in 2D."""
    e0 = b[j, 0] - a[j, 0]
    e1 = b[j, 1] - a[j, 1]
    ap0 = p[0] - a[j, 0]
    ap1 = p[1] - a[j, 1]
    if p.shape[0] == 2:
        ee = e0 * e0 + e1 * e1
        tn = ap0 * e0 + ap1 * e1
        if ee > 0.0:
            t = tn / ee
        else:
            t = 0.0
        if t > 1.0:
            t = 1.0
        elif t < 0.0:
            t = 0.0
        q0 = a[j, 0] + t * e0
        q1 = a[j, 1] + t * e1
        d0 = p[0] - q0
        d1 = p[1] - q1
        return d0 * d0 + d1 * d1, q0, q1, 0.0
    e2 = b[j, 2] - a[j, 2]
    ap2 = p[2] - a[j, 2]
    ee = (e0 * e0 + e2 * e2) + e1 * e1
    tn = (ap0 * e0 + ap2 * e2) + ap1 * e1
    if ee > 0.0:
        t = tn / ee
    else:
        t = 0.0
    if t > 1.0:
        t = 1.0
    elif t < 0.0:
        t = 0.0
    q0 = a[j, 0] + t * e0
    q1 = a[j, 1] + t * e1
    q2 = a[j, 2] + t * e2
    d0 = p[0] - q0
    d1 = p[1] - q1
    d2 = p[2] - q2
    return (d0 * d0 + d2 * d2) + d1 * d1, q0, q1, q2


@njit(cache=True, inline="always", error_model="numpy")
def _tri_cp(c0, c1, c2, j, p):
    """Closest point on triangle j to p (region test): (d2, qx, qy, qz)."""
    a0 = c0[j, 0]
    a1 = c0[j, 1]
    a2 = c0[j, 2]
    b0 = c1[j, 0]
    b1 = c1[j, 1]
    b2 = c1[j, 2]
    cc0 = c2[j, 0]
    cc1 = c2[j, 1]
    cc2 = c2[j, 2]
    ab0 = b0 - a0
    ab1 = b1 - a1
    ab2 = b2 - a2
    ac0 = cc0 - a0
    ac1 = cc1 - a1
    ac2 = cc2 - a2
    ap0 = p[0] - a0
    ap1 = p[1] - a1
    ap2 = p[2] - a2
    d1 = (ab0 * ap0 + ab2 * ap2) + ab1 * ap1
    d2 = (ac0 * ap0 + ac2 * ap2) + ac1 * ap1
    bp0 = p[0] - b0
    bp1 = p[1] - b1
    bp2 = p[2] - b2
    d3 = (ab0 * bp0 + ab2 * bp2) + ab1 * bp1
    d4 = (ac0 * bp0 + ac2 * bp2) + ac1 * bp1
    cp0 = p[0] - cc0
    cp1 = p[1] - cc1
    cp2 = p[2] - cc2
    d5 = (ab0 * cp0 + ab2 * cp2) + ab1 * cp1
    d6 = (ac0 * cp0 + ac2 * cp2) + ac1 * cp1
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    if d1 <= 0.0 and d2 <= 0.0:
        q0 = a0
        q1 = a1
        q2 = a2
    elif d3 >= 0.0 and d4 <= d3:
        q0 = b0
        q1 = b1
        q2 = b2
    elif d6 >= 0.0 and d5 <= d6:
        q0 = cc0
        q1 = cc1
        q2 = cc2
    elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = _clip01_zero_nan(d1 / (d1 - d3))
        q0 = a0 + t * ab0
        q1 = a1 + t * ab1
        q2 = a2 + t * ab2
    elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = _clip01_zero_nan(d2 / (d2 - d6))
        q0 = a0 + t * ac0
        q1 = a1 + t * ac1
        q2 = a2 + t * ac2
    elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = _clip01_zero_nan((d4 - d3) / ((d4 - d3) + (d5 - d6)))
        q0 = b0 + t * (cc0 - b0)
        q1 = b1 + t * (cc1 - b1)
        q2 = b2 + t * (cc2 - b2)
    else:
        denom = va + vb + vc
        v_f = _nan_to_num(vb / denom)
        w_f = _nan_to_num(vc / denom)
        q0 = a0 + v_f * ab0 + w_f * ac0
        q1 = a1 + v_f * ab1 + w_f * ac1
        q2 = a2 + v_f * ab2 + w_f * ac2
    dx = p[0] - q0
    dy = p[1] - q1
    dz = p[2] - q2
    return (dx * dx + dz * dz) + dy * dy, q0, q1, q2


@njit(cache=True, inline="always", error_model="numpy")
def _has_sil(center, rb, axis, half, nid, p):
    h = half[nid]
    if h >= _HALF_PI:
        return True
    dim = p.shape[0]
    l2 = 0.0
    dot = 0.0
    for k in range(dim):
        v = center[nid, k] - p[k]
        l2 += v * v
        dot += axis[nid, k] * v
    l = math.sqrt(l2)
    if l < 1e-300:
        return True
    x = dot / l
    if x < -1.0:
        x = -1.0
    if x > 1.0:
        x = 1.0
    phi = math.acos(x)
    # 1e-8 = primitives.CONE_TEST_SLACK (kept literal for numba cache hygiene)
    if (phi - h) <= _HALF_PI + 1e-8 and _HALF_PI - 1e-8 <= (phi + h):
        return True
    r = rb[nid]
    if l <= r:
        return True
    s = r / l
    if s > 1.0:
        s = 1.0
    ts = h + math.asin(s)
    if ts >= _HALF_PI - 1e-8:
        return True
    return (phi - ts) <= _HALF_PI + 1e-8 and _HALF_PI - 1e-8 <= (phi + ts)


@njit(cache=True, error_model="numpy")
def closest_query(lo, hi, left, start, count, prim, two_d, c0, c1, c2, p, q_out):
    """Closest boundary point: returns (squared distance, element id).

    Ties in distance go to the smallest element id; q_out receives the
    winning point.
    """
    n = left.shape[0]
    dim = p.shape[0]
    stk_d = np.empty(n + 1, np.float64)
    stk_i = np.empty(n + 1, np.int64)
    stk_d[0] = 0.0
    stk_i[0] = 0
    sp = 1
    best_d2 = _INF
    best_id = np.int64(-1)
    while sp > 0:
        sp -= 1
        dbox = stk_d[sp]
        nid = stk_i[sp]
        # (1.0 + 1e-14) = primitives.PRUNE_BOUND_SLACK (literal for cache
        # hygiene): keeps leaves holding exact distance ties reachable when
        # the box bound rounds a few ulps above the tied best.
        if dbox > best_d2 * (1.0 + 1e-14):
            continue
        l = left[nid]
        if l == -1:
            s = start[nid]
            e = s + count[nid]
            for j in range(s, e):
                if two_d:
                    d2j, q0, q1, q2 = _seg_cp(c0, c1, j, p)
                else:
                    d2j, q0, q1, q2 = _tri_cp(c0, c1, c2, j, p)
                eid = prim[j]
                if d2j < best_d2 or (d2j == best_d2 and eid < best_id):
                    best_d2 = d2j
                    best_id = eid
                    q_out[0] = q0
                    q_out[1] = q1
                    if dim == 3:
                        q_out[2] = q2
        else:
            dl = _box_d2(lo, hi, l, p)
            dr = _box_d2(lo, hi, l + 1, p)
            if dl > dr:
                if dl <= best_d2 * (1.0 + 1e-14):
                    stk_d[sp] = dl
                    stk_i[sp] = l
                    sp += 1
                stk_d[sp] = dr
                stk_i[sp] = l + 1
                sp += 1
            else:
                if dr <= best_d2 * (1.0 + 1e-14):
                    stk_d[sp] = dr
                    stk_i[sp] = l + 1
                    sp += 1
                stk_d[sp] = dl
                stk_i[sp] = l
                sp += 1
    return best_d2, best_id


@njit(cache=True, error_model="numpy")
def silhouette_query(lo, hi, left, center, rb, axis, half,
                     lc_off, lc_cid, lc_a, lc_b, lc_n1, lc_n2, lc_open, lc_many,
                     ce_off, ce_flat, normals, p, r_lim):
    """Nearest silhouette candidate within sqrt(r_lim): (squared distance, id)."""
    n = left.shape[0]
    dim = p.shape[0]
    stk_d = np.empty(n + 1, np.float64)
    stk_i = np.empty(n + 1, np.int64)
    stk_d[0] = 0.0
    stk_i[0] = 0
    sp = 1
    best_d2 = _INF
    best_c = np.int64(-1)
    while sp > 0:
        sp -= 1
        dbox = stk_d[sp]
        nid = stk_i[sp]
        # (1.0 + 1e-14) = primitives.PRUNE_BOUND_SLACK (literal for cache
        # hygiene): keeps leaves holding exact distance ties reachable when
        # the box bound rounds a few ulps above the tied best.
        if dbox > best_d2 * (1.0 + 1e-14) or dbox > r_lim * (1.0 + 1e-14):
            continue
        if dbox > 0.0 and not _has_sil(center, rb, axis, half, nid, p):
            continue
        l = left[nid]
        if l == -1:
            for idx in range(lc_off[nid], lc_off[nid + 1]):
                d2j, q0, q1, q2 = _seg_cp(lc_a, lc_b, idx, p)
                v0 = q0 - p[0]
                v1 = q1 - p[1]
                v2 = 0.0
                if dim == 3:
                    v2 = q2 - p[2]
                # 1e-18 = primitives.GRAZING_DOT_TOL2 (literal for cache hygiene)
                thr = 1e-18 * d2j
                if lc_open[idx]:
                    sil = True
                else:
                    if dim == 3:
                        dot1 = (lc_n1[idx, 0] * v0 + lc_n1[idx, 2] * v2) + lc_n1[idx, 1] * v1
                        dot2 = (lc_n2[idx, 0] * v0 + lc_n2[idx, 2] * v2) + lc_n2[idx, 1] * v1
                    else:
                        dot1 = lc_n1[idx, 0] * v0 + lc_n1[idx, 1] * v1
                        dot2 = lc_n2[idx, 0] * v0 + lc_n2[idx, 1] * v1
                    if dot1 * dot1 <= thr:
                        dot1 = 0.0
                    if dot2 * dot2 <= thr:
                        dot2 = 0.0
                    sil = dot1 * dot2 <= 0.0
                cid = lc_cid[idx]
                if lc_many[idx]:
                    o0 = ce_off[cid]
                    o1 = ce_off[cid + 1]
                    if o1 - o0 < 2:
                        sil = True
                    else:
                        mn = _INF
                        mx = -_INF
                        for knc in range(o0, o1):
                            eid = ce_flat[knc]
                            if dim == 3:
                                dt = (normals[eid, 0] * v0 + normals[eid, 2] * v2) + normals[eid, 1] * v1
                            else:
                                dt = normals[eid, 0] * v0 + normals[eid, 1] * v1
                            if dt * dt <= thr:
                                dt = 0.0
                            if dt < mn:
                                mn = dt
                            if dt > mx:
                                mx = dt
                        sil = mn * mx <= 0.0
                if not sil:
                    continue
                if d2j > r_lim:
                    continue
                if d2j < best_d2 or (d2j == best_d2 and cid < best_c):
                    best_d2 = d2j
                    best_c = cid
        else:
            dl = _box_d2(lo, hi, l, p)
            dr = _box_d2(lo, hi, l + 1, p)
            lim = best_d2 if best_d2 < r_lim else r_lim
            lim = lim * (1.0 + 1e-14)
            if dl > dr:
                if dl <= lim:
                    stk_d[sp] = dl
                    stk_i[sp] = l
                    sp += 1
                stk_d[sp] = dr
                stk_i[sp] = l + 1
                sp += 1
            else:
                if dr <= lim:
                    stk_d[sp] = dr
                    stk_i[sp] = l + 1
                    sp += 1
                stk_d[sp] = dl
                stk_i[sp] = l
                sp += 1
    return best_d2, best_c


@njit(cache=True, inline="always", error_model="numpy")
def _samp_w(lo, hi, center, nid, p, r2):
    if _box_d2(lo, hi, nid, p) > r2:
        return 0.0
    l2 = 0.0
    for k in range(p.shape[0]):
        v = center[nid, k] - p[k]
        l2 += v * v
    sl = math.sqrt(l2)
    if sl < 1e-300:
        sl = 1e-300
    return 1.0 / (4.0 * math.pi * sl)


@njit(cache=True, error_model="numpy")
def sample_query(lo, hi, left, start, count, prim, two_d, c0, c1, c2, center,
                 sizes, m0, m1, m2, p, r, rng, out_point):
    """Hierarchical area-weighted boundary sample: (element id, pdf).

    Root-to-leaf descent with one uniform draw per level, a reservoir draw per
    in-radius leaf element, then the uniform point draws; byte-identical to the
    Python traversal including the draw sequence. element id -1 = dead end
    (no randomness consumed past the last live branch).
    """
    r2 = r * r
    if _box_d2(lo, hi, 0, p) > r2:
        return np.int64(-1), 0.0
    dim = p.shape[0]
    pdf_path = 1.0
    nid = 0
    while True:
        l = left[nid]
        if l == -1:
            s = start[nid]
            e = s + count[nid]
            total = 0.0
            pick = np.int64(-1)
            for j in range(s, e):
                if two_d:
                    d2j, q0, q1, q2 = _seg_cp(c0, c1, j, p)
                else:
                    d2j, q0, q1, q2 = _tri_cp(c0, c1, c2, j, p)
                if d2j <= r2:
                    a = sizes[j]
                    total += a
                    if rng.random() * total < a:
                        pick = j
            if pick < 0:
                return np.int64(-1), 0.0
            elem = prim[pick]
            if two_d:
                u = rng.random()
                for k in range(dim):
                    out_point[k] = m0[elem, k] + u * (m1[elem, k] - m0[elem, k])
            else:
                su = math.sqrt(rng.random())
                w = rng.random()
                for k in range(dim):
                    out_point[k] = ((1.0 - su) * m0[elem, k]
                                    + su * (1.0 - w) * m1[elem, k]) + su * w * m2[elem, k]
            return elem, pdf_path / total
        wl = _samp_w(lo, hi, center, l, p, r2)
        wr = _samp_w(lo, hi, center, l + 1, p, r2)
        tot = wl + wr
        if tot <= 0.0:
            return np.int64(-1), 0.0
        if rng.random() * tot < wl:
            pdf_path *= wl / tot
            nid = l
        else:
            pdf_path *= wr / tot
            nid = l + 1


@njit(cache=True, error_model="numpy")
def ray_first_query(lo, hi, left, start, count, prim, two_d, c0, c1, c2, o, d, t_max):
    """First ray hit with t <= t_max: (t, element id); id -1 means no hit."""
    best_t = t_max
    best_id = np.int64(-1)
    n = left.shape[0]
    entry = _ray_box(lo, hi, 0, o, d, best_t)
    if not math.isfinite(entry):
        return best_t, best_id
    stk_t = np.empty(n + 1, np.float64)
    stk_i = np.empty(n + 1, np.int64)
    stk_t[0] = entry
    stk_i[0] = 0
    sp = 1
    kz = 0
    kx = 1
    ky = 2
    sx = 0.0
    sy = 0.0
    sz = 0.0
    if not two_d:
        best_ax = abs(d[0])
        if abs(d[1]) > best_ax:
            kz = 1
            best_ax = abs(d[1])
        if abs(d[2]) > best_ax:
            kz = 2
        kx = (kz + 1) % 3
        ky = (kx + 1) % 3
        if d[kz] < 0.0:
            kx, ky = ky, kx
        sx = d[kx] / d[kz]
        sy = d[ky] / d[kz]
        sz = 1.0 / d[kz]
    while sp > 0:
        sp -= 1
        tn = stk_t[sp]
        nid = stk_i[sp]
        if tn > best_t:
            continue
        l = left[nid]
        if l == -1:
            s = start[nid]
            e = s + count[nid]
            for j in range(s, e):
                if two_d:
                    a0 = c0[j, 0]
                    a1 = c0[j, 1]
                    e0 = c1[j, 0] - a0
                    e1 = c1[j, 1] - a1
                    den = d[0] * e1 - d[1] * e0
                    if den == 0.0:
                        continue
                    ao0 = a0 - o[0]
                    ao1 = a1 - o[1]
                    tj = (ao0 * e1 - ao1 * e0) / den
                    sj = (ao0 * d[1] - ao1 * d[0]) / den
                    if sj < 0.0 or sj > 1.0 or tj <= RAY_T_MIN or tj > best_t:
                        continue
                else:
                    avz = c0[j, kz] - o[kz]
                    bvz = c1[j, kz] - o[kz]
                    cvz = c2[j, kz] - o[kz]
                    ax = (c0[j, kx] - o[kx]) - sx * avz
                    ay = (c0[j, ky] - o[ky]) - sy * avz
                    bx = (c1[j, kx] - o[kx]) - sx * bvz
                    by = (c1[j, ky] - o[ky]) - sy * bvz
                    cx = (c2[j, kx] - o[kx]) - sx * cvz
                    cy = (c2[j, ky] - o[ky]) - sy * cvz
                    u = cx * by - cy * bx
                    v = ax * cy - ay * cx
                    w = bx * ay - by * ax
                    inside = ((u >= 0.0 and v >= 0.0 and w >= 0.0)
                              or (u <= 0.0 and v <= 0.0 and w <= 0.0))
                    if not inside:
                        continue
                    det = u + v + w
                    if det == 0.0:
                        continue
                    az = sz * avz
                    bz = sz * bvz
                    cz = sz * cvz
                    tj = (u * az + v * bz + w * cz) / det
                    if tj <= RAY_T_MIN or tj > best_t:
                        continue
                eid = prim[j]
                if tj < best_t or best_id == -1 or eid < best_id:
                    best_t = tj
                    best_id = eid
        else:
            tl = _ray_box(lo, hi, l, o, d, best_t)
            tr = _ray_box(lo, hi, l + 1, o, d, best_t)
            if tl > tr:
                if math.isfinite(tl):
                    stk_t[sp] = tl
                    stk_i[sp] = l
                    sp += 1
                if math.isfinite(tr):
                    stk_t[sp] = tr
                    stk_i[sp] = l + 1
                    sp += 1
            else:
                if math.isfinite(tr):
                    stk_t[sp] = tr
                    stk_i[sp] = l + 1
                    sp += 1
                if math.isfinite(tl):
                    stk_t[sp] = tl
                    stk_i[sp] = l
                    sp += 1
    return best_t, best_id


@njit(cache=True, error_model="numpy")
def ray_all_query(lo, hi, left, start, count, prim, two_d, c0, c1, c2, o, d,
                  t_max, ts_out, ids_out):
    """All ray hits with t <= t_max, unordered; returns the hit count."""
    n = left.shape[0]
    cnt = 0
    entry = _ray_box(lo, hi, 0, o, d, t_max)
    if not math.isfinite(entry):
        return cnt
    stk = np.empty(n + 1, np.int64)
    stk[0] = 0
    sp = 1
    kz = 0
    kx = 1
    ky = 2
    sx = 0.0
    sy = 0.0
    sz = 0.0
    if not two_d:
        best_ax = abs(d[0])
        if abs(d[1]) > best_ax:
            kz = 1
            best_ax = abs(d[1])
        if abs(d[2]) > best_ax:
            kz = 2
        kx = (kz + 1) % 3
        ky = (kx + 1) % 3
        if d[kz] < 0.0:
            kx, ky = ky, kx
        sx = d[kx] / d[kz]
        sy = d[ky] / d[kz]
        sz = 1.0 / d[kz]
    while sp > 0:
        sp -= 1
        nid = stk[sp]
        l = left[nid]
        if l == -1:
            s = start[nid]
            e = s + count[nid]
            for j in range(s, e):
                if two_d:
                    a0 = c0[j, 0]
                    a1 = c0[j, 1]
                    e0 = c1[j, 0] - a0
                    e1 = c1[j, 1] - a1
                    den = d[0] * e1 - d[1] * e0
                    if den == 0.0:
                        continue
                    ao0 = a0 - o[0]
                    ao1 = a1 - o[1]
                    tj = (ao0 * e1 - ao1 * e0) / den
                    sj = (ao0 * d[1] - ao1 * d[0]) / den
                    if sj < 0.0 or sj > 1.0 or tj <= RAY_T_MIN or tj > t_max:
                        continue
                else:
                    avz = c0[j, kz] - o[kz]
                    bvz = c1[j, kz] - o[kz]
                    cvz = c2[j, kz] - o[kz]
                    ax = (c0[j, kx] - o[kx]) - sx * avz
                    ay = (c0[j, ky] - o[ky]) - sy * avz
                    bx = (c1[j, kx] - o[kx]) - sx * bvz
                    by = (c1[j, ky] - o[ky]) - sy * bvz
                    cx = (c2[j, kx] - o[kx]) - sx * cvz
                    cy = (c2[j, ky] - o[ky]) - sy * cvz
                    u = cx * by - cy * bx
                    v = ax * cy - ay * cx
                    w = bx * ay - by * ax
                    inside = ((u >= 0.0 and v >= 0.0 and w >= 0.0)
                              or (u <= 0.0 and v <= 0.0 and w <= 0.0))
                    if not inside:
                        continue
                    det = u + v + w
                    if det == 0.0:
                        continue
                    az = sz * avz
                    bz = sz * bvz
                    cz = sz * cvz
                    tj = (u * az + v * bz + w * cz) / det
                    if tj <= RAY_T_MIN or tj > t_max:
                        continue
                ts_out[cnt] = tj
                ids_out[cnt] = prim[j]
                cnt += 1
        else:
            if math.isfinite(_ray_box(lo, hi, l, o, d, t_max)):
                stk[sp] = l
                sp += 1
            if math.isfinite(_ray_box(lo, hi, l + 1, o, d, t_max)):
                stk[sp] = l + 1
                sp += 1
    return cnt
