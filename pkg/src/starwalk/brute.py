"""Exhaustive reference implementations of the geometric queries.

Every function scans all elements (or all silhouette candidates) directly,
with no acceleration structure. These are the ground truth the tree-based
queries are checked against, and what `starwalk validate` runs; they are kept
deliberately simple.
"""

from __future__ import annotations

import numpy as np

from .mesh import BoundaryMesh
from .primitives import (RayHit, closest_point_segments, closest_point_triangles,
                         ray_segments, ray_triangles)


def closest_point(mesh: BoundaryMesh, p: np.ndarray):
    """(distance, point, element) of the closest boundary point, or None if empty.

    Ties in distance go to the smallest element index.
    """
    if mesh.is_empty:
        return None
    p = np.asarray(p, dtype=np.float64)
    if mesh.dimension == 2:
        q, d2 = closest_point_segments(p, mesh.corners[0], mesh.corners[1])
    else:
        q, d2 = closest_point_triangles(p, *mesh.corners)
    i = int(np.argmin(d2))  # first occurrence = smallest index on ties
    return float(np.sqrt(d2[i])), q[i], i


def closest_silhouette(mesh: BoundaryMesh, p: np.ndarray, r_max: float = np.inf):
    """(distance, candidate index) of the nearest silhouette candidate.

    A candidate (edge in 3D, vertex in 2D) counts as a silhouette seen from p
    when its incident element normals straddle the direction toward its closest
    point, or when it has fewer than two incident elements. Returns
    (inf, -1) when no silhouette lies within r_max.
    """
    if mesh.n_candidates == 0:
        return np.inf, -1
    p = np.asarray(p, dtype=np.float64)
    q, d2 = closest_point_segments(p, mesh.cand_a, mesh.cand_b)
    v = q - p[None, :]
    v_per_incidence = v[np.repeat(np.arange(mesh.n_candidates),
                                  np.diff(mesh.cand_offsets))]
    dots = np.einsum("ij,ij->i", mesh.normals[mesh.cand_elems], v_per_incidence)
    sil = mesh.candidate_silhouette_flags(dots, d2)
    ok = sil & (d2 <= r_max * r_max)
    if not np.any(ok):
        return np.inf, -1
    d2_masked = np.where(ok, d2, np.inf)
    i = int(np.argmin(d2_masked))
    return float(np.sqrt(d2_masked[i])), i


def ray_first_hit(mesh: BoundaryMesh, o: np.ndarray, d: np.ndarray,
                  t_max: float = np.inf):
    """First intersection of the ray o + t*d with the mesh, or None.

    t is measured in units of |d|. Ties in t go to the smallest element index.
    """
    if mesh.is_empty:
        return None
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if mesh.dimension == 2:
        t = ray_segments(o, d, mesh.corners[0], mesh.corners[1], t_max)
    else:
        t = ray_triangles(o, d, *mesh.corners, t_max)
    i = int(np.argmin(t))
    if not np.isfinite(t[i]):
        return None
    return RayHit(t=float(t[i]), point=o + t[i] * d, normal=mesh.normals[i].copy(),
                  element=i)


def ray_all_hits(mesh: BoundaryMesh, o: np.ndarray, d: np.ndarray,
                 t_max: float = np.inf):
    """Every intersection with t <= t_max, sorted by (t, element index)."""
    if mesh.is_empty:
        return []
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if mesh.dimension == 2:
        t = ray_segments(o, d, mesh.corners[0], mesh.corners[1], t_max)
    else:
        t = ray_triangles(o, d, *mesh.corners, t_max)
    ids = np.where(np.isfinite(t))[0]
    order = np.lexsort((ids, t[ids]))
    return [RayHit(t=float(t[i]), point=o + t[i] * d, normal=mesh.normals[i].copy(),
                   element=int(i)) for i in ids[order]]
