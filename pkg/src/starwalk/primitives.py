"""Vectorized geometric primitive math shared by the exhaustive scans and tree leaves.

All functions operate on batches of elements against a single query point or
ray, in float64 throughout. Misses are reported as +inf distances so callers
can reduce with argmin/min without masking gymnastics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Parametric hits closer than this are treated as the ray origin touching the
# surface and rejected (self-hit guard; t is in units of |direction|).
RAY_T_MIN = 1e-12

# Silhouette grazing tolerance: a normal dot product d with d*d <= tol2 * |view|^2
# is treated as exactly zero before the sign test. Query points sitting on the
# boundary see their own element edge-on, and the sign of that dot is float
# rounding noise; snapping it restores the exact-arithmetic answer (a grazing
# candidate straddles the view) deterministically. The compiled kernels repeat
# this value as a literal so their on-disk cache stays in sync with the code.
GRAZING_DOT_TOL2 = 1e-18

# Normal-cone culling slack (radians). The cone test may only err on the side
# of visiting more nodes; widening the orthogonality window by more than the
# grazing tolerance guarantees it never culls a snapped-grazing candidate.
CONE_TEST_SLACK = 1e-8

# Distance-prune slack for closest-point/silhouette traversals. Box bounds and
# element distances round differently (different summation orders), so a node
# whose content ties the current best exactly can bound a few ulps above it
# and get pruned, losing the smallest-id tie-break. Pruning only when the
# bound exceeds best * this factor keeps exact ties reachable; it admits at
# most nodes within 1e-14 relative of the best, so traversal cost is
# unchanged. The compiled kernels repeat the value as a literal.
PRUNE_BOUND_SLACK = 1.0 + 1e-14


@dataclass(frozen=True)
class RayHit:
    """First-intersection record. t is in units of the ray direction length."""

    t: float
    point: np.ndarray
    normal: np.ndarray
    element: int


def closest_point_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Closest points on a batch of segments [a_i, b_i] to point p.

    Degenerate segments (a == b) are fine: they act as points.
    Returns (points (n,dim), squared distances (n,)).
    """
    e = b - a
    ee = np.einsum("ij,ij->i", e, e)
    ap = p[None, :] - a
    t = np.einsum("ij,ij->i", ap, e)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(ee > 0.0, t / ee, 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * e
    d = p[None, :] - q
    return q, np.einsum("ij,ij->i", d, d)


def closest_point_triangles(p: np.ndarray, v0: np.ndarray, v1: np.ndarray, v2: np.ndarray):
    """Closest points on a batch of triangles to point p (Ericson's region test).

    Returns (points (n,3), squared distances (n,)).
    """
    ab = v1 - v0
    ac = v2 - v0
    ap = p[None, :] - v0

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)

    bp = p[None, :] - v1
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)

    cp = p[None, :] - v2
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(invalid="ignore", divide="ignore"):
        # Edge AB
        t_ab = d1 / (d1 - d3)
        # Edge AC
        t_ac = d2 / (d2 - d6)
        # Edge BC
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        # Face interior
        denom = va + vb + vc
        v_f = vb / denom
        w_f = vc / denom

    t_ab = np.nan_to_num(np.clip(t_ab, 0.0, 1.0))
    t_ac = np.nan_to_num(np.clip(t_ac, 0.0, 1.0))
    t_bc = np.nan_to_num(np.clip(t_bc, 0.0, 1.0))
    v_f = np.nan_to_num(v_f)
    w_f = np.nan_to_num(w_f)

    q = v0 + v_f[:, None] * ab + w_f[:, None] * ac  # default: face interior

    on_bc = (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)
    q = np.where(on_bc[:, None], v1 + t_bc[:, None] * (v2 - v1), q)

    on_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
    q = np.where(on_ac[:, None], v0 + t_ac[:, None] * ac, q)

    on_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    q = np.where(on_ab[:, None], v0 + t_ab[:, None] * ab, q)

    near_c = (d6 >= 0.0) & (d5 <= d6)
    q = np.where(near_c[:, None], v2, q)

    near_b = (d3 >= 0.0) & (d4 <= d3)
    q = np.where(near_b[:, None], v1, q)

    near_a = (d1 <= 0.0) & (d2 <= 0.0)
    q = np.where(near_a[:, None], v0, q)

    d = p[None, :] - q
    return q, np.einsum("ij,ij->i", d, d)


def ray_segments(o: np.ndarray, d: np.ndarray, a: np.ndarray, b: np.ndarray,
                 t_max: float) -> np.ndarray:
    """Parametric hit distances of ray o + t*d against 2D segments.

    d need not be unit length; t is in units of |d|. Returns +inf for misses.
    Endpoint hits (s == 0 or 1) count for both segments sharing the vertex, so
    closed polylines have no cracks.
    """
    e = b - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    ao = a - o[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (ao[:, 0] * e[:, 1] - ao[:, 1] * e[:, 0]) / denom
        s = (ao[:, 0] * d[1] - ao[:, 1] * d[0]) / denom
    valid = (denom != 0.0) & (s >= 0.0) & (s <= 1.0) & (t > RAY_T_MIN) & (t <= t_max)
    return np.where(valid, t, np.inf)


def ray_triangles(o: np.ndarray, d: np.ndarray, v0: np.ndarray, v1: np.ndarray,
                  v2: np.ndarray, t_max: float) -> np.ndarray:
    """Watertight-style ray/triangle intersection via projected edge functions.

    Shared edges are hit consistently (boundary hits count for both faces),
    so closed meshes do not leak rays through seams. d need not be unit; t is
    in units of |d|. Returns +inf for misses.
    """
    kz = int(np.argmax(np.abs(d)))
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0.0:
        kx, ky = ky, kx

    sx = d[kx] / d[kz]
    sy = d[ky] / d[kz]
    sz = 1.0 / d[kz]

    av = v0 - o[None, :]
    bv = v1 - o[None, :]
    cv = v2 - o[None, :]

    ax = av[:, kx] - sx * av[:, kz]
    ay = av[:, ky] - sy * av[:, kz]
    bx = bv[:, kx] - sx * bv[:, kz]
    by = bv[:, ky] - sy * bv[:, kz]
    cx = cv[:, kx] - sx * cv[:, kz]
    cy = cv[:, ky] - sy * cv[:, kz]

    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax

    inside = ((u >= 0.0) & (v >= 0.0) & (w >= 0.0)) | ((u <= 0.0) & (v <= 0.0) & (w <= 0.0))
    det = u + v + w

    az = sz * av[:, kz]
    bz = sz * bv[:, kz]
    cz = sz * cv[:, kz]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (u * az + v * bz + w * cz) / det

    valid = inside & (det != 0.0) & (t > RAY_T_MIN) & (t <= t_max)
    return np.where(valid, t, np.inf)


def point_aabb_distance(p: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Distance from p to a batch of axis-aligned boxes (0 when inside)."""
    d = np.maximum(np.maximum(lo - p[None, :], p[None, :] - hi), 0.0)
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def ray_aabb(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray,
             t_max: float):
    """Slab test of ray o + t*d against boxes; returns (hit mask, entry t).

    Zero direction components are handled by the inf semantics of IEEE
    division: the slab collapses to a containment test on that axis.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = 1.0 / d
        t0 = (lo - o[None, :]) * inv[None, :]
        t1 = (hi - o[None, :]) * inv[None, :]
    # 0 * inf produces NaN when the origin sits on a slab with zero direction;
    # treat that slab as pass-through.
    t0 = np.nan_to_num(t0, nan=-np.inf, posinf=np.inf, neginf=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf, posinf=np.inf, neginf=-np.inf)
    t_near = np.max(np.minimum(t0, t1), axis=1)
    t_far = np.min(np.maximum(t0, t1), axis=1)
    hit = (t_near <= t_far) & (t_far > 0.0) & (t_near <= t_max)
    return hit, np.maximum(t_near, 0.0)
