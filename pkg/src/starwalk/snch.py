"""Bounding-volume hierarchy with normal cones over a boundary mesh.

One tree serves four queries: closest boundary point, closest silhouette
candidate, first ray intersection, and distance-weighted boundary point
sampling. Each deterministic query has two interchangeable paths: compiled
kernels in `accel` (the default), and plain Python stack loops over the same
node arrays, selected by passing a `stats` dict (which also counts visited
nodes). Both paths evaluate element math with expressions mirroring the
primitive functions used by the exhaustive reference scans in `brute`, so all
three agree bit for bit, including distance ties broken by element id.

The normal cone of a node bounds not just the normals of the elements in its
subtree but also the normals of elements *adjacent* to them through a shared
silhouette candidate (edge/vertex). Without the adjacent ring, a candidate
whose two incident elements live in different subtrees can be missed: each
subtree's own normals may stay strictly on one side of a view direction even
though the pair straddles it. Widening by the one-ring keeps the
can-this-node-hold-a-silhouette test conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import accel
from .mesh import BoundaryMesh
from .primitives import (CONE_TEST_SLACK, GRAZING_DOT_TOL2, PRUNE_BOUND_SLACK,
                         RayHit, closest_point_segments,
                         closest_point_triangles, ray_segments, ray_triangles)

_SAH_BINS = 16
_HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class NormalCone:
    """Axis + half-angle bound on a set of unit normals."""

    axis: np.ndarray
    half_angle: float


@dataclass(frozen=True)
class SnchNode:
    """Introspection view of one tree node."""

    lo: np.ndarray
    hi: np.ndarray
    cone: NormalCone
    left: int          # child id, -1 for leaves (right child is left + 1)
    start: int         # range into prim_ids covered by this subtree
    count: int
    is_leaf: bool


class BoundarySample(NamedTuple):
    point: np.ndarray
    pdf: float         # probability density per unit boundary measure
    element: int
    normal: np.ndarray


def _half_area(lo: np.ndarray, hi: np.ndarray) -> float:
    e = hi - lo
    if np.any(e < 0.0):
        return 0.0
    if e.shape[0] == 2:
        return float(e[0] + e[1])
    return float(e[0] * e[1] + e[1] * e[2] + e[2] * e[0])


def _sah_partition(ids, cent, lo_e, hi_e, dim):
    """Boolean left-side mask from the best binned surface-area split, or None."""
    c = cent[ids]
    cb_lo = c.min(axis=0)
    cb_hi = c.max(axis=0)
    ext = cb_hi - cb_lo
    best_cost = np.inf
    best = None
    for ax in range(dim):
        if ext[ax] <= 0.0:
            continue
        scaled = (c[:, ax] - cb_lo[ax]) * (_SAH_BINS / ext[ax])
        b = np.minimum(scaled.astype(np.int64), _SAH_BINS - 1)
        counts = np.bincount(b, minlength=_SAH_BINS)
        bin_lo = np.full((_SAH_BINS, dim), np.inf)
        bin_hi = np.full((_SAH_BINS, dim), -np.inf)
        np.minimum.at(bin_lo, b, lo_e[ids])
        np.maximum.at(bin_hi, b, hi_e[ids])
        pre_lo = np.minimum.accumulate(bin_lo, axis=0)
        pre_hi = np.maximum.accumulate(bin_hi, axis=0)
        suf_lo = np.minimum.accumulate(bin_lo[::-1], axis=0)[::-1]
        suf_hi = np.maximum.accumulate(bin_hi[::-1], axis=0)[::-1]
        n_pre = np.cumsum(counts)
        total = int(n_pre[-1])
        for k in range(1, _SAH_BINS):
            n_l = int(n_pre[k - 1])
            n_r = total - n_l
            if n_l == 0 or n_r == 0:
                continue
            cost = (_half_area(pre_lo[k - 1], pre_hi[k - 1]) * n_l
                    + _half_area(suf_lo[k], suf_hi[k]) * n_r)
            if cost < best_cost:
                best_cost = cost
                best = b < k
    return best


def _multi_gather(flat: np.ndarray, off: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Concatenate flat[off[i]:off[i+1]] for every i in ids, vectorized."""
    cnts = off[ids + 1] - off[ids]
    total = int(cnts.sum())
    if total == 0:
        return flat[:0]
    run = np.cumsum(cnts) - cnts
    pos = np.arange(total) - np.repeat(run, cnts)
    return flat[np.repeat(off[ids], cnts) + pos]


def _neighbor_csr(mesh: BoundaryMesh):
    """Element -> elements sharing a silhouette candidate, as flat CSR arrays."""
    m = mesh.n_elements
    off = mesh.cand_offsets
    el = mesh.cand_elems
    counts = np.diff(off)
    src_parts, dst_parts = [], []
    two = np.where(counts == 2)[0]
    if two.size:
        a = el[off[two]]
        b = el[off[two] + 1]
        src_parts += [a, b]
        dst_parts += [b, a]
    for k in np.where(counts > 2)[0]:
        g = el[off[k]:off[k + 1]]
        gg = np.repeat(g, g.size)
        hh = np.tile(g, g.size)
        keep = gg != hh
        src_parts.append(gg[keep])
        dst_parts.append(hh[keep])
    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
    nbr_counts = np.bincount(src, minlength=m)
    nbr_off = np.concatenate([[0], np.cumsum(nbr_counts)]).astype(np.int64)
    return dst, nbr_off


def _elem_candidate_csr(mesh: BoundaryMesh):
    """Element -> incident silhouette candidate ids, as flat CSR arrays."""
    m = mesh.n_elements
    counts = np.diff(mesh.cand_offsets)
    cand_of_pair = np.repeat(np.arange(mesh.n_candidates, dtype=np.int64), counts)
    elem_of_pair = mesh.cand_elems
    order = np.lexsort((cand_of_pair, elem_of_pair))
    ec_flat = cand_of_pair[order]
    ec_counts = np.bincount(elem_of_pair, minlength=m)
    ec_off = np.concatenate([[0], np.cumsum(ec_counts)]).astype(np.int64)
    return ec_flat, ec_off


class SnchTree:
    """Accelerated boundary queries over one mesh. Build once, query many."""

    def __init__(self, mesh: BoundaryMesh, max_leaf_size: int = 4):
        if max_leaf_size < 1:
            raise ValueError("max_leaf_size must be >= 1")
        self.mesh = mesh
        self.dimension = mesh.dimension
        self.max_leaf_size = int(max_leaf_size)
        self.n_nodes = 0
        dim = self.dimension
        m = mesh.n_elements
        self.prim_ids = np.zeros(0, dtype=np.int64)
        self.node_lo = np.zeros((0, dim))
        self.node_hi = np.zeros((0, dim))
        self.node_left = np.zeros(0, dtype=np.int64)
        self.node_start = np.zeros(0, dtype=np.int64)
        self.node_count = np.zeros(0, dtype=np.int64)
        self.node_axis = np.zeros((0, dim))
        self.node_half = np.zeros(0)
        if m == 0:
            return

        corners = mesh.corners
        lo_e = corners[0].copy()
        hi_e = corners[0].copy()
        for c in corners[1:]:
            np.minimum(lo_e, c, out=lo_e)
            np.maximum(hi_e, c, out=hi_e)
        cent = mesh.centroids
        prim = np.arange(m, dtype=np.int64)

        n_lo, n_hi, n_left, n_start, n_count = [], [], [], [], []

        def alloc():
            n_lo.append(None)
            n_hi.append(None)
            n_left.append(-1)
            n_start.append(0)
            n_count.append(0)
            return len(n_left) - 1

        stack = [(0, m, alloc())]
        while stack:
            s, e, nid = stack.pop()
            ids = prim[s:e]
            n_lo[nid] = lo_e[ids].min(axis=0)
            n_hi[nid] = hi_e[ids].max(axis=0)
            n_start[nid] = s
            n_count[nid] = e - s
            count = e - s
            if count <= self.max_leaf_size:
                continue
            mask = _sah_partition(ids, cent, lo_e, hi_e, dim)
            if mask is None or not mask.any() or mask.all():
                k = s + count // 2  # centroids piled up: fall back to an even cut
            else:
                left_ids = ids[mask]
                right_ids = ids[~mask]
                k = s + left_ids.size
                prim[s:k] = left_ids
                prim[k:e] = right_ids
            lid = alloc()
            rid = alloc()
            assert rid == lid + 1
            n_left[nid] = lid
            stack.append((k, e, rid))
            stack.append((s, k, lid))

        self.n_nodes = len(n_left)
        self.prim_ids = prim
        self.node_lo = np.vstack(n_lo)
        self.node_hi = np.vstack(n_hi)
        self.node_left = np.asarray(n_left, dtype=np.int64)
        self.node_start = np.asarray(n_start, dtype=np.int64)
        self.node_count = np.asarray(n_count, dtype=np.int64)

        self._build_cones()
        self._build_leaf_data()

        # Scalar-speed mirrors for the Python traversal loops.
        self._lo = self.node_lo.tolist()
        self._hi = self.node_hi.tolist()
        self._left = self.node_left.tolist()
        self._start = self.node_start.tolist()
        self._cnt = self.node_count.tolist()
        centers = 0.5 * (self.node_lo + self.node_hi)
        half_diag = 0.5 * np.sqrt(np.einsum("ij,ij->i", self.node_hi - self.node_lo,
                                            self.node_hi - self.node_lo))
        self.node_center = centers
        self.node_rb = half_diag
        self._cent = centers.tolist()
        self._rb = half_diag.tolist()
        self._axis = self.node_axis.tolist()
        self._half = self.node_half.tolist()

    # -- construction helpers ------------------------------------------------

    def _build_cones(self):
        mesh = self.mesh
        nbr_flat, nbr_off = _neighbor_csr(mesh)
        # An open candidate (fewer than two incident elements) is a silhouette
        # from every viewpoint, so no cone may prune a subtree that would test
        # one. Elements touching an open candidate poison their nodes to the
        # never-prunable sentinel.
        counts = np.diff(mesh.cand_offsets)
        touches_open = np.zeros(mesh.n_elements, dtype=bool)
        if mesh.n_candidates:
            cand_of_pair = np.repeat(np.arange(mesh.n_candidates), counts)
            touches_open[mesh.cand_elems[counts[cand_of_pair] < 2]] = True
        axes = np.zeros((self.n_nodes, self.dimension))
        halves = np.zeros(self.n_nodes)
        for nid in range(self.n_nodes):
            s = self.node_start[nid]
            ids = self.prim_ids[s:s + self.node_count[nid]]
            if touches_open[ids].any():
                axes[nid, 0] = 1.0
                halves[nid] = math.pi
                continue
            ring = np.concatenate([ids, _multi_gather(nbr_flat, nbr_off, ids)])
            nors = mesh.normals[ring]
            mean = nors.mean(axis=0)
            nn = math.sqrt(float(mean @ mean))
            if nn < 1e-12:
                axes[nid, 0] = 1.0
                halves[nid] = math.pi
            else:
                axis = mean / nn
                axes[nid] = axis
                halves[nid] = math.acos(min(1.0, max(-1.0, float((nors @ axis).min()))))
        self.node_axis = axes
        self.node_half = halves

    def _build_leaf_data(self):
        mesh = self.mesh
        dim = self.dimension
        self.corners_perm = tuple(np.ascontiguousarray(c[self.prim_ids])
                                  for c in mesh.corners)
        self.sizes_perm = np.ascontiguousarray(mesh.sizes[self.prim_ids])
        ec_flat, ec_off = _elem_candidate_csr(mesh)
        self._leaf_cand = [None] * self.n_nodes
        for nid in range(self.n_nodes):
            if self.node_left[nid] != -1:
                continue
            s = self.node_start[nid]
            ids = self.prim_ids[s:s + self.node_count[nid]]
            cid = np.unique(_multi_gather(ec_flat, ec_off, ids))
            if cid.size == 0:
                continue
            many_pos = np.where(mesh.cand_many[cid])[0]
            self._leaf_cand[nid] = (cid,
                                    np.ascontiguousarray(mesh.cand_a[cid]),
                                    np.ascontiguousarray(mesh.cand_b[cid]),
                                    np.ascontiguousarray(mesh.cand_n1[cid]),
                                    np.ascontiguousarray(mesh.cand_n2[cid]),
                                    mesh.cand_open[cid],
                                    many_pos)

        # Same candidate data a second time as one flat per-node CSR block,
        # which is the layout the compiled silhouette kernel wants.
        lc_off = np.zeros(self.n_nodes + 1, dtype=np.int64)
        parts = []
        for nid in range(self.n_nodes):
            leaf = self._leaf_cand[nid]
            n_here = 0 if leaf is None else leaf[0].size
            lc_off[nid + 1] = lc_off[nid] + n_here
            if n_here:
                parts.append(leaf[0])
        self._lc_off = lc_off
        if parts:
            cid_all = np.ascontiguousarray(np.concatenate(parts))
        else:
            cid_all = np.zeros(0, dtype=np.int64)
        self._lc_cid = cid_all
        self._lc_a = np.ascontiguousarray(mesh.cand_a[cid_all].reshape(-1, dim))
        self._lc_b = np.ascontiguousarray(mesh.cand_b[cid_all].reshape(-1, dim))
        self._lc_n1 = np.ascontiguousarray(mesh.cand_n1[cid_all].reshape(-1, dim))
        self._lc_n2 = np.ascontiguousarray(mesh.cand_n2[cid_all].reshape(-1, dim))
        self._lc_open = np.ascontiguousarray(mesh.cand_open[cid_all])
        self._lc_many = np.ascontiguousarray(mesh.cand_many[cid_all])
        self._ce_off = np.ascontiguousarray(mesh.cand_offsets)
        self._ce_flat = np.ascontiguousarray(mesh.cand_elems)
        self._nor = np.ascontiguousarray(mesh.normals)
        self._c0 = self.corners_perm[0]
        self._c1 = self.corners_perm[1]
        self._c2 = self.corners_perm[2] if dim == 3 else self.corners_perm[1]
        # Mesh-order corners for the sampler's uniform-point draw (it indexes
        # by element id, not leaf slot).
        self._m0 = np.ascontiguousarray(mesh.corners[0])
        self._m1 = np.ascontiguousarray(mesh.corners[1])
        self._m2 = np.ascontiguousarray(mesh.corners[2]) if dim == 3 else self._m1

    # -- introspection --------------------------------------------------------

    @property
    def is_empty(self) -> bool:
        return self.n_nodes == 0

    def node(self, nid: int) -> SnchNode:
        return SnchNode(
            lo=self.node_lo[nid].copy(), hi=self.node_hi[nid].copy(),
            cone=NormalCone(axis=self.node_axis[nid].copy(),
                            half_angle=float(self.node_half[nid])),
            left=int(self.node_left[nid]), start=int(self.node_start[nid]),
            count=int(self.node_count[nid]),
            is_leaf=bool(self.node_left[nid] == -1))

    def subtree_elements(self, nid: int) -> np.ndarray:
        s = int(self.node_start[nid])
        return np.sort(self.prim_ids[s:s + int(self.node_count[nid])])

    # -- scalar box helpers ----------------------------------------------------

    def _box_d2(self, nid: int, p) -> float:
        lo = self._lo[nid]
        hi = self._hi[nid]
        s = 0.0
        for k in range(self.dimension):
            x = p[k]
            l = lo[k]
            if x < l:
                d = l - x
                s += d * d
            else:
                h = hi[k]
                if x > h:
                    d = x - h
                    s += d * d
        return s

    def _ray_box(self, nid: int, o, d, cap: float) -> float:
        """Entry parameter of the ray into the node box, or inf on a miss."""
        lo = self._lo[nid]
        hi = self._hi[nid]
        tn = 0.0
        tf = cap
        for k in range(self.dimension):
            dk = d[k]
            ok = o[k]
            if dk != 0.0:
                inv = 1.0 / dk
                t0 = (lo[k] - ok) * inv
                t1 = (hi[k] - ok) * inv
                if t0 > t1:
                    t0, t1 = t1, t0
                if t0 > tn:
                    tn = t0
                if t1 < tf:
                    tf = t1
                if tn > tf:
                    return math.inf
            elif ok < lo[k] or ok > hi[k]:
                return math.inf
        return tn

    def has_silhouette(self, nid: int, p) -> bool:
        """Conservative test: can any silhouette candidate live under this node?

        False is a guarantee (no candidate below is a silhouette when viewed
        from p); True just means the subtree cannot be skipped. The
        orthogonality window is widened by CONE_TEST_SLACK so nodes holding a
        grazing (snapped-dot) candidate are never culled.
        """
        half = self._half[nid]
        if half >= _HALF_PI:
            return True
        c = self._cent[nid]
        ax = self._axis[nid]
        l2 = 0.0
        dot = 0.0
        for k in range(self.dimension):
            v = c[k] - p[k]
            l2 += v * v
            dot += ax[k] * v
        l = math.sqrt(l2)
        if l < 1e-300:
            return True
        phi = math.acos(min(1.0, max(-1.0, dot / l)))
        if phi - half <= _HALF_PI + CONE_TEST_SLACK and \
                _HALF_PI - CONE_TEST_SLACK <= phi + half:
            return True
        rb = self._rb[nid]
        if l <= rb:
            return True
        theta_sum = half + math.asin(min(1.0, rb / l))
        if theta_sum >= _HALF_PI - CONE_TEST_SLACK:
            return True
        return phi - theta_sum <= _HALF_PI + CONE_TEST_SLACK and \
            _HALF_PI - CONE_TEST_SLACK <= phi + theta_sum

    # -- queries ----------------------------------------------------------------

    def closest_point(self, p, stats: Optional[dict] = None):
        """(distance, point, element) of the closest boundary point, or None.

        Matches the exhaustive scan exactly, including smallest-element-id
        tie-breaking. Passing a stats dict selects the instrumented Python
        traversal (same results) and counts visited nodes.
        """
        if self.is_empty:
            return None
        p = np.ascontiguousarray(p, dtype=np.float64)
        if stats is None:
            q = np.empty(self.dimension)
            d2, eid = accel.closest_query(
                self.node_lo, self.node_hi, self.node_left, self.node_start,
                self.node_count, self.prim_ids, self.dimension == 2,
                self._c0, self._c1, self._c2, p, q)
            return math.sqrt(d2), q, int(eid)
        pt = p.tolist()
        two_d = self.dimension == 2
        ca = self.corners_perm
        prim = self.prim_ids
        best_d2 = math.inf
        best_id = -1
        best_q = None
        stack = [(0.0, 0)]
        while stack:
            dbox, nid = stack.pop()
            if dbox > best_d2 * PRUNE_BOUND_SLACK:
                continue
            if stats is not None:
                stats["nodes_visited"] = stats.get("nodes_visited", 0) + 1
            left = self._left[nid]
            if left == -1:
                s = self._start[nid]
                e = s + self._cnt[nid]
                if two_d:
                    q, d2 = closest_point_segments(p, ca[0][s:e], ca[1][s:e])
                else:
                    q, d2 = closest_point_triangles(p, ca[0][s:e], ca[1][s:e], ca[2][s:e])
                loc = int(np.argmin(d2))
                dmin = float(d2[loc])
                eid = int(prim[s + loc])
                if (d2 == dmin).sum() > 1:  # exact tie: smallest element id wins
                    ties = np.where(d2 == dmin)[0]
                    loc = int(ties[np.argmin(prim[s + ties])])
                    eid = int(prim[s + loc])
                if dmin < best_d2 or (dmin == best_d2 and eid < best_id):
                    best_d2 = dmin
                    best_id = eid
                    best_q = q[loc]
            else:
                dl = self._box_d2(left, pt)
                dr = self._box_d2(left + 1, pt)
                if dl > dr:  # push farther first so the nearer child pops first
                    if dl <= best_d2 * PRUNE_BOUND_SLACK:
                        stack.append((dl, left))
                    stack.append((dr, left + 1))
                else:
                    if dr <= best_d2 * PRUNE_BOUND_SLACK:
                        stack.append((dr, left + 1))
                    stack.append((dl, left))
        return math.sqrt(best_d2), best_q, best_id

    def silhouette_distance(self, p, r_max: float = math.inf,
                            stats: Optional[dict] = None):
        """(distance, candidate id) of the nearest silhouette candidate.

        Only candidates within r_max count; (inf, -1) when there are none.
        Nodes are skipped when provably farther than the current best or when
        the normal-cone test rules out any silhouette below them; a node that
        contains p is always descended (the cone test assumes an outside view).
        """
        if self.is_empty or self.mesh.n_candidates == 0:
            return math.inf, -1
        p = np.ascontiguousarray(p, dtype=np.float64)
        if stats is None:
            d2, cid = accel.silhouette_query(
                self.node_lo, self.node_hi, self.node_left,
                self.node_center, self.node_rb, self.node_axis, self.node_half,
                self._lc_off, self._lc_cid, self._lc_a, self._lc_b,
                self._lc_n1, self._lc_n2, self._lc_open, self._lc_many,
                self._ce_off, self._ce_flat, self._nor, p, r_max * r_max)
            if cid == -1:
                return math.inf, -1
            return math.sqrt(d2), int(cid)
        pt = p.tolist()
        r_lim = r_max * r_max
        best_d2 = math.inf
        best_c = -1
        stack = [(0.0, 0)]
        while stack:
            dbox, nid = stack.pop()
            if dbox > best_d2 * PRUNE_BOUND_SLACK or dbox > r_lim * PRUNE_BOUND_SLACK:
                continue
            if dbox > 0.0 and not self.has_silhouette(nid, pt):
                continue
            if stats is not None:
                stats["nodes_visited"] = stats.get("nodes_visited", 0) + 1
            left = self._left[nid]
            if left == -1:
                leaf = self._leaf_cand[nid]
                if leaf is None:
                    continue
                cid, a, b, n1, n2, open_, many_pos = leaf
                q, d2 = closest_point_segments(p, a, b)
                v = q - p[None, :]
                thr = GRAZING_DOT_TOL2 * d2
                dt1 = np.einsum("ij,ij->i", n1, v)
                dt2 = np.einsum("ij,ij->i", n2, v)
                dt1 = np.where(dt1 * dt1 <= thr, 0.0, dt1)
                dt2 = np.where(dt2 * dt2 <= thr, 0.0, dt2)
                sil = open_ | (dt1 * dt2 <= 0.0)
                for j in many_pos:  # non-manifold candidates: exact test
                    sil[j] = is_silhouette(self.mesh, int(cid[j]), v[j],
                                           view_d2=float(d2[j]))
                lim = best_d2 if best_d2 < r_lim else r_lim
                d2w = np.where(sil & (d2 <= lim), d2, np.inf)
                loc = int(np.argmin(d2w))
                dmin = float(d2w[loc])
                if not math.isfinite(dmin):
                    continue
                c_id = int(cid[loc])
                if (d2w == dmin).sum() > 1:
                    ties = np.where(d2w == dmin)[0]
                    c_id = int(cid[ties].min())
                if dmin < best_d2 or (dmin == best_d2 and c_id < best_c):
                    best_d2 = dmin
                    best_c = c_id
            else:
                dl = self._box_d2(left, pt)
                dr = self._box_d2(left + 1, pt)
                lim = min(best_d2, r_lim) * PRUNE_BOUND_SLACK
                if dl > dr:
                    if dl <= lim:
                        stack.append((dl, left))
                    stack.append((dr, left + 1))
                else:
                    if dr <= lim:
                        stack.append((dr, left + 1))
                    stack.append((dl, left))
        if best_c == -1:
            return math.inf, -1
        return math.sqrt(best_d2), best_c

    def intersect(self, o, d, t_max: float = math.inf,
                  stats: Optional[dict] = None):
        """First ray hit with t <= t_max, or None. Ties in t: smallest element id."""
        if self.is_empty:
            return None
        o = np.ascontiguousarray(o, dtype=np.float64)
        d = np.ascontiguousarray(d, dtype=np.float64)
        if stats is None:
            t, eid = accel.ray_first_query(
                self.node_lo, self.node_hi, self.node_left, self.node_start,
                self.node_count, self.prim_ids, self.dimension == 2,
                self._c0, self._c1, self._c2, o, d, float(t_max))
            if eid == -1:
                return None
            t = float(t)
            return RayHit(t=t, point=o + t * d,
                          normal=self.mesh.normals[eid].copy(), element=int(eid))
        ot = o.tolist()
        dt = d.tolist()
        two_d = self.dimension == 2
        ca = self.corners_perm
        prim = self.prim_ids
        best_t = t_max
        best_id = -1
        entry = self._ray_box(0, ot, dt, best_t)
        stack = [(entry, 0)] if math.isfinite(entry) else []
        while stack:
            tn, nid = stack.pop()
            if tn > best_t:
                continue
            if stats is not None:
                stats["nodes_visited"] = stats.get("nodes_visited", 0) + 1
            left = self._left[nid]
            if left == -1:
                s = self._start[nid]
                e = s + self._cnt[nid]
                if two_d:
                    t = ray_segments(o, d, ca[0][s:e], ca[1][s:e], best_t)
                else:
                    t = ray_triangles(o, d, ca[0][s:e], ca[1][s:e], ca[2][s:e], best_t)
                loc = int(np.argmin(t))
                tmin = float(t[loc])
                if not math.isfinite(tmin):
                    continue
                eid = int(prim[s + loc])
                if (t == tmin).sum() > 1:
                    ties = np.where(t == tmin)[0]
                    eid = int(prim[s + ties].min())
                if tmin < best_t or (tmin == best_t and (best_id == -1 or eid < best_id)):
                    best_t = tmin
                    best_id = eid
            else:
                tl = self._ray_box(left, ot, dt, best_t)
                tr = self._ray_box(left + 1, ot, dt, best_t)
                if tl > tr:
                    if math.isfinite(tl):
                        stack.append((tl, left))
                    if math.isfinite(tr):
                        stack.append((tr, left + 1))
                else:
                    if math.isfinite(tr):
                        stack.append((tr, left + 1))
                    if math.isfinite(tl):
                        stack.append((tl, left))
        if best_id == -1:
            return None
        return RayHit(t=best_t, point=o + best_t * d,
                      normal=self.mesh.normals[best_id].copy(), element=best_id)

    def intersect_all(self, o, d, t_max: float = math.inf,
                      stats: Optional[dict] = None):
        """Every hit with t <= t_max, sorted by (t, element id)."""
        if self.is_empty:
            return []
        o = np.ascontiguousarray(o, dtype=np.float64)
        d = np.ascontiguousarray(d, dtype=np.float64)
        if stats is None:
            mesh = self.mesh
            ts = np.empty(mesh.n_elements)
            ids = np.empty(mesh.n_elements, dtype=np.int64)
            cnt = accel.ray_all_query(
                self.node_lo, self.node_hi, self.node_left, self.node_start,
                self.node_count, self.prim_ids, self.dimension == 2,
                self._c0, self._c1, self._c2, o, d, float(t_max), ts, ids)
            if cnt == 0:
                return []
            order = np.lexsort((ids[:cnt], ts[:cnt]))
            return [RayHit(t=float(ts[i]), point=o + float(ts[i]) * d,
                           normal=mesh.normals[ids[i]].copy(), element=int(ids[i]))
                    for i in order]
        ot = o.tolist()
        dt = d.tolist()
        two_d = self.dimension == 2
        ca = self.corners_perm
        prim = self.prim_ids
        ts: list[float] = []
        ids: list[int] = []
        entry = self._ray_box(0, ot, dt, t_max)
        stack = [0] if math.isfinite(entry) else []
        while stack:
            nid = stack.pop()
            left = self._left[nid]
            if left == -1:
                s = self._start[nid]
                e = s + self._cnt[nid]
                if two_d:
                    t = ray_segments(o, d, ca[0][s:e], ca[1][s:e], t_max)
                else:
                    t = ray_triangles(o, d, ca[0][s:e], ca[1][s:e], ca[2][s:e], t_max)
                hit = np.where(np.isfinite(t))[0]
                for j in hit:
                    ts.append(float(t[j]))
                    ids.append(int(prim[s + j]))
            else:
                if math.isfinite(self._ray_box(left, ot, dt, t_max)):
                    stack.append(left)
                if math.isfinite(self._ray_box(left + 1, ot, dt, t_max)):
                    stack.append(left + 1)
        order = sorted(range(len(ts)), key=lambda i: (ts[i], ids[i]))
        mesh = self.mesh
        return [RayHit(t=ts[i], point=o + ts[i] * d,
                       normal=mesh.normals[ids[i]].copy(), element=ids[i])
                for i in order]

    def sample_point(self, p, r: float, rng: np.random.Generator,
                     stats: Optional[dict] = None) -> Optional[BoundarySample]:
        """Draw one boundary point near p, preferring nearby area.

        Walks root to leaf choosing children with probability proportional to
        1/(4*pi*dist-to-child-center) when the child box meets the ball of
        radius r (zero otherwise), then reservoir-picks a leaf element within
        distance r proportional to its area and a uniform point on it. Returns
        None when the walk dead-ends; an empty tree returns None without
        consuming any randomness. The pdf is exact for the returned point.
        """
        if self.is_empty:
            return None
        p = np.ascontiguousarray(p, dtype=np.float64)
        mesh = self.mesh
        if stats is None:
            point = np.empty(self.dimension)
            elem, pdf = accel.sample_query(
                self.node_lo, self.node_hi, self.node_left, self.node_start,
                self.node_count, self.prim_ids, self.dimension == 2,
                self._c0, self._c1, self._c2, self.node_center, self.sizes_perm,
                self._m0, self._m1, self._m2, p, float(r), rng, point)
            if elem < 0:
                return None
            return BoundarySample(point=point, pdf=float(pdf), element=int(elem),
                                  normal=mesh.normals[elem].copy())
        pt = p.tolist()
        r2 = r * r
        two_d = self.dimension == 2
        ca = self.corners_perm
        pdf_path = 1.0
        nid = 0
        if self._box_d2(0, pt) > r2:
            return None
        while True:
            if stats is not None:
                stats["nodes_visited"] = stats.get("nodes_visited", 0) + 1
            left = self._left[nid]
            if left == -1:
                s = self._start[nid]
                e = s + self._cnt[nid]
                if two_d:
                    _, d2 = closest_point_segments(p, ca[0][s:e], ca[1][s:e])
                else:
                    _, d2 = closest_point_triangles(p, ca[0][s:e], ca[1][s:e], ca[2][s:e])
                total = 0.0
                pick = -1
                for j in range(e - s):
                    if d2[j] <= r2:
                        a = self.sizes_perm[s + j]
                        total += a
                        if rng.random() * total < a:
                            pick = j
                if pick < 0:
                    return None
                elem = int(self.prim_ids[s + pick])
                point = mesh.uniform_point_on_element(elem, rng)
                return BoundarySample(point=point, pdf=pdf_path / total,
                                      element=elem, normal=mesh.normals[elem].copy())
            w_l = self._sample_weight(left, pt, r2)
            w_r = self._sample_weight(left + 1, pt, r2)
            total = w_l + w_r
            if total <= 0.0:
                return None
            if rng.random() * total < w_l:
                pdf_path *= w_l / total
                nid = left
            else:
                pdf_path *= w_r / total
                nid = left + 1

    def _sample_weight(self, nid: int, pt, r2: float) -> float:
        if self._box_d2(nid, pt) > r2:
            return 0.0
        c = self._cent[nid]
        l2 = 0.0
        for k in range(self.dimension):
            v = c[k] - pt[k]
            l2 += v * v
        return 1.0 / (4.0 * math.pi * max(math.sqrt(l2), 1e-300))

    def element_selection_probabilities(self, p, r: float):
        """(per-element pick probability, dead-end probability) for sample_point.

        Enumerates every root-to-leaf path with its exact probability; the
        vector plus the dead-end mass sums to one.
        """
        m = self.mesh.n_elements
        probs = np.zeros(m)
        if self.is_empty:
            return probs, 1.0
        p = np.asarray(p, dtype=np.float64)
        pt = p.tolist()
        r2 = r * r
        two_d = self.dimension == 2
        ca = self.corners_perm
        dead = 0.0
        if self._box_d2(0, pt) > r2:
            return probs, 1.0
        stack = [(0, 1.0)]
        while stack:
            nid, pr = stack.pop()
            left = self._left[nid]
            if left == -1:
                s = self._start[nid]
                e = s + self._cnt[nid]
                if two_d:
                    _, d2 = closest_point_segments(p, ca[0][s:e], ca[1][s:e])
                else:
                    _, d2 = closest_point_triangles(p, ca[0][s:e], ca[1][s:e], ca[2][s:e])
                near = d2 <= r2
                total = float(self.sizes_perm[s:e][near].sum())
                if total <= 0.0:
                    dead += pr
                    continue
                for j in np.where(near)[0]:
                    probs[self.prim_ids[s + j]] += pr * self.sizes_perm[s + j] / total
            else:
                w_l = self._sample_weight(left, pt, r2)
                w_r = self._sample_weight(left + 1, pt, r2)
                total = w_l + w_r
                if total <= 0.0:
                    dead += pr
                    continue
                if w_l > 0.0:
                    stack.append((left, pr * w_l / total))
                if w_r > 0.0:
                    stack.append((left + 1, pr * w_r / total))
        return probs, dead


# -- public operations -----------------------------------------------------


def build_snch(mesh: BoundaryMesh, max_leaf_size: int = 4) -> SnchTree:
    """Build the query tree for a boundary mesh (empty meshes are fine)."""
    return SnchTree(mesh, max_leaf_size=max_leaf_size)


def distance_dirichlet(tree: SnchTree, p) -> float:
    """Distance from p to the absorbing part of the boundary; inf when empty."""
    res = tree.closest_point(p)
    return math.inf if res is None else res[0]


def is_silhouette(mesh: BoundaryMesh, candidate: int, view,
                  view_d2: Optional[float] = None) -> bool:
    """Exact per-candidate test: do the incident normals straddle `view`?

    `view` points from the evaluation point toward the candidate. Candidates
    with fewer than two incident elements are always silhouettes, as is a
    zero view vector (the point lies on the candidate). Dots within the
    grazing tolerance of zero are snapped to zero first, so a query point
    lying on an incident element counts its rim as straddling regardless of
    float rounding. view_d2 is |view|^2; when callers already have it (leaf
    traversals) passing it keeps all paths byte-identical.
    """
    inc = mesh.candidate_incident_elements(candidate)
    if inc.size < 2:
        return True
    view = np.asarray(view, dtype=np.float64)
    if view_d2 is None:
        if view.shape[0] == 2:
            view_d2 = view[0] * view[0] + view[1] * view[1]
        else:
            view_d2 = (view[0] * view[0] + view[2] * view[2]) + view[1] * view[1]
    dots = np.einsum("ij,j->i", mesh.normals[inc], view)
    thr = GRAZING_DOT_TOL2 * view_d2
    dots = np.where(dots * dots <= thr, 0.0, dots)
    return bool(float(dots.min()) * float(dots.max()) <= 0.0)


def has_silhouette(tree: SnchTree, node_id: int, p) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return tree.has_silhouette(node_id, p.tolist())


def silhouette_distance_neumann(tree: SnchTree, p, r_max: float = math.inf) -> float:
    return tree.silhouette_distance(p, r_max=r_max)[0]


def intersect_neumann(tree: SnchTree, o, d, t_max: float = math.inf):
    return tree.intersect(o, d, t_max=t_max)


def sample_neumann_point(tree: SnchTree, p, r: float, rng: np.random.Generator):
    return tree.sample_point(p, r, rng)
