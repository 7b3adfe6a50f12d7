"""Boundary mesh container: element geometry, normals, and silhouette candidates.

A boundary is a set of segments (2D) or triangles (3D). Each mesh also carries
the adjacency structure needed for silhouette tests: in 3D the candidates are
undirected edges with their incident triangles, in 2D they are vertices with
their incident segments. Candidates are stored CSR-style (flat incident-element
array plus offsets) so meshes with non-manifold junctions remain representable;
such meshes are flagged rather than rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .primitives import GRAZING_DOT_TOL2


class MeshError(ValueError):
    """Raised when mesh arrays fail structural validation."""


def _as_float_matrix(x, cols_ok=(2, 3), what="vertices") -> np.ndarray:
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if a.ndim != 2 or (a.shape[0] > 0 and a.shape[1] not in cols_ok):
        raise MeshError(f"{what} must be an (n, 2) or (n, 3) array, got shape {a.shape}")
    return a


@dataclass
class BoundaryMesh:
    """Immutable-by-convention boundary geometry with derived adjacency.

    Attributes filled in by construction:
      normals     (m, dim) outward unit normals per element
      sizes       (m,) segment lengths / triangle areas
      centroids   (m, dim)
      corners     tuple of dim arrays, each (m, dim): element corner coordinates
      cand_a/b    (c, dim) silhouette-candidate geometry; in 2D a == b (vertex)
      cand_elems  flat incident-element ids, CSR with cand_offsets (c+1,)
      nonmanifold True when some candidate has more than two incident elements
    """

    vertices: np.ndarray
    elements: np.ndarray
    name: str = "boundary"
    double_sided: bool = False

    dimension: int = field(init=False)
    normals: np.ndarray = field(init=False, repr=False)
    sizes: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)
    corners: tuple = field(init=False, repr=False)
    aabb_lo: np.ndarray = field(init=False, repr=False)
    aabb_hi: np.ndarray = field(init=False, repr=False)
    cand_a: np.ndarray = field(init=False, repr=False)
    cand_b: np.ndarray = field(init=False, repr=False)
    cand_elems: np.ndarray = field(init=False, repr=False)
    cand_offsets: np.ndarray = field(init=False, repr=False)
    cand_keys: np.ndarray = field(init=False, repr=False)
    cand_n1: np.ndarray = field(init=False, repr=False)
    cand_n2: np.ndarray = field(init=False, repr=False)
    cand_open: np.ndarray = field(init=False, repr=False)
    cand_many: np.ndarray = field(init=False, repr=False)
    nonmanifold: bool = field(init=False, default=False)

    def __post_init__(self):
        self.vertices = _as_float_matrix(self.vertices, what=f"{self.name}: vertices")
        if self.vertices.size and not np.all(np.isfinite(self.vertices)):
            bad = np.where(~np.isfinite(self.vertices).all(axis=1))[0]
            raise MeshError(f"{self.name}: non-finite vertex coordinates at rows {bad[:10].tolist()}")
        if self.vertices.shape[0] == 0:
            self.vertices = self.vertices.reshape(0, 2) if self.vertices.shape[1] not in (2, 3) else self.vertices

        self.elements = np.ascontiguousarray(np.atleast_2d(np.asarray(self.elements, dtype=np.int64)))
        dim = self.vertices.shape[1] if self.vertices.size else self.elements.shape[1]
        if self.elements.size == 0:
            self.elements = self.elements.reshape(0, dim if dim in (2, 3) else 2)
            dim = self.elements.shape[1]
        if dim not in (2, 3):
            raise MeshError(f"{self.name}: dimension must be 2 or 3, got {dim}")
        if self.elements.shape[1] != dim:
            raise MeshError(
                f"{self.name}: elements have {self.elements.shape[1]} vertices each; "
                f"expected {dim} for a {dim}D boundary")
        self.dimension = dim

        nv = self.vertices.shape[0]
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
            bad = np.where((self.elements < 0).any(axis=1) | (self.elements >= nv).any(axis=1))[0]
            raise MeshError(f"{self.name}: vertex index out of range in elements {bad[:10].tolist()}")

        self.corners = tuple(
            np.ascontiguousarray(self.vertices[self.elements[:, k]]) if self.elements.size
            else np.zeros((0, dim)) for k in range(dim))
        self._derive_normals_and_sizes()
        self._derive_candidates()

        if self.elements.size:
            self.aabb_lo = self.vertices[np.unique(self.elements)].min(axis=0)
            self.aabb_hi = self.vertices[np.unique(self.elements)].max(axis=0)
        else:
            self.aabb_lo = np.full(dim, np.inf)
            self.aabb_hi = np.full(dim, -np.inf)

    # -- derived quantities ------------------------------------------------

    def _derive_normals_and_sizes(self):
        dim = self.dimension
        m = self.elements.shape[0]
        if m == 0:
            self.normals = np.zeros((0, dim))
            self.sizes = np.zeros(0)
            self.centroids = np.zeros((0, dim))
            return
        if dim == 2:
            a, b = self.corners
            e = b - a
            lengths = np.sqrt(np.einsum("ij,ij->i", e, e))
            self._reject_degenerate(lengths, "zero-length segment")
            # Rotate the tangent -90 degrees: CCW-wound outlines get outward normals.
            self.normals = np.stack([e[:, 1], -e[:, 0]], axis=1) / lengths[:, None]
            self.sizes = lengths
            self.centroids = 0.5 * (a + b)
        else:
            v0, v1, v2 = self.corners
            cr = np.cross(v1 - v0, v2 - v0)
            two_area = np.sqrt(np.einsum("ij,ij->i", cr, cr))
            self._reject_degenerate(two_area, "zero-area triangle")
            self.normals = cr / two_area[:, None]
            self.sizes = 0.5 * two_area
            self.centroids = (v0 + v1 + v2) / 3.0

    def _reject_degenerate(self, magnitude: np.ndarray, kind: str):
        bad = np.where(magnitude == 0.0)[0]
        if bad.size:
            raise MeshError(f"{self.name}: {kind} at element indices {bad[:10].tolist()}"
                            + ("..." if bad.size > 10 else ""))

    def _derive_candidates(self):
        dim = self.dimension
        m = self.elements.shape[0]
        if m == 0:
            self.cand_a = np.zeros((0, dim))
            self.cand_b = np.zeros((0, dim))
            self.cand_elems = np.zeros(0, dtype=np.int64)
            self.cand_offsets = np.zeros(1, dtype=np.int64)
            self.cand_keys = np.zeros((0, 2), dtype=np.int64)
            self.cand_n1 = np.zeros((0, dim))
            self.cand_n2 = np.zeros((0, dim))
            self.cand_open = np.zeros(0, dtype=bool)
            self.cand_many = np.zeros(0, dtype=bool)
            return
        if dim == 2:
            keys = self.elements.reshape(-1)  # vertex id per (element, endpoint)
            owners = np.repeat(np.arange(m, dtype=np.int64), 2)
            order = np.lexsort((owners, keys))
            keys, owners = keys[order], owners[order]
            uniq, start, counts = np.unique(keys, return_index=True, return_counts=True)
            self.cand_keys = np.stack([uniq, uniq], axis=1)
            self.cand_a = self.vertices[uniq]
            self.cand_b = self.cand_a
        else:
            tri = self.elements
            raw = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
            raw.sort(axis=1)  # undirected edge key: (low vertex, high vertex)
            owners = np.tile(np.arange(m, dtype=np.int64), 3)
            order = np.lexsort((owners, raw[:, 1], raw[:, 0]))
            raw, owners = raw[order], owners[order]
            uniq, start, counts = np.unique(raw, axis=0, return_index=True, return_counts=True)
            # np.unique on rows returns them lexicographically sorted already.
            self.cand_keys = uniq
            self.cand_a = self.vertices[uniq[:, 0]]
            self.cand_b = self.vertices[uniq[:, 1]]
        self.cand_elems = owners
        self.cand_offsets = np.concatenate([start, [owners.size]]).astype(np.int64)
        # start indices from np.unique are the first occurrence in sorted order,
        # so consecutive starts delimit each group.
        self.nonmanifold = bool(np.any(counts > 2))

        # Fixed-width view of the first two incident normals per candidate, for
        # vectorized silhouette tests. Candidates with a single incident element
        # are always silhouettes (cand_open); the rare >2-incidence candidates
        # (cand_many) need the exact all-incidence test instead.
        first = self.cand_elems[self.cand_offsets[:-1]]
        second = self.cand_elems[self.cand_offsets[:-1] + (counts > 1)]
        self.cand_n1 = self.normals[first]
        self.cand_n2 = self.normals[second]
        self.cand_open = counts < 2
        self.cand_many = counts > 2

    # -- queries used elsewhere ---------------------------------------------

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.cand_a.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.elements.shape[0] == 0

    @property
    def total_size(self) -> float:
        return float(self.sizes.sum()) if self.sizes.size else 0.0

    def candidate_incident_elements(self, k: int) -> np.ndarray:
        return self.cand_elems[self.cand_offsets[k]:self.cand_offsets[k + 1]]

    def candidate_silhouette_flags(self, dots: np.ndarray,
                                   view_d2: np.ndarray) -> np.ndarray:
        """Silhouette test for every candidate, given per-incidence dot products.

        `dots` holds n . v for each (candidate, incident element) pair in CSR
        order, where v points from the query toward the candidate's closest
        point; `view_d2` holds |v|^2 per candidate. A candidate is a silhouette
        when it has fewer than two incident elements (open boundary) or when
        the incident normals do not all face the same strict side. Dots within
        the grazing tolerance of zero count as zero (straddling), so a query
        sitting on an element sees its own rim deterministically.
        """
        if self.n_candidates == 0:
            return np.zeros(0, dtype=bool)
        counts = np.diff(self.cand_offsets)
        thr = GRAZING_DOT_TOL2 * np.repeat(view_d2, counts)
        snapped = np.where(dots * dots <= thr, 0.0, dots)
        starts = self.cand_offsets[:-1]
        lo = np.minimum.reduceat(snapped, starts)
        hi = np.maximum.reduceat(snapped, starts)
        return (counts < 2) | (lo * hi <= 0.0)

    def uniform_point_on_element(self, elem: int, rng: np.random.Generator) -> np.ndarray:
        """Uniformly distributed point on one element (1 draw in 2D, 2 in 3D)."""
        if self.dimension == 2:
            a, b = self.corners[0][elem], self.corners[1][elem]
            return a + rng.random() * (b - a)
        v0, v1, v2 = (c[elem] for c in self.corners)
        su = np.sqrt(rng.random())
        w = rng.random()
        return (1.0 - su) * v0 + su * (1.0 - w) * v1 + su * w * v2
