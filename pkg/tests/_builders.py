"""Shared mesh and scene builders for the test suite.

2D outlines are listed counterclockwise around the domain so the left-hand
perpendicular of each segment points outward; holes are wound clockwise.
Builders return plain BoundaryMesh/Scene objects with no test logic.
"""

import math

import numpy as np

from starwalk.mesh import BoundaryMesh
from starwalk.scene_io import build_scene


def chain(points, n_per_edge=1, name="boundary"):
    """Open polyline through `points`, subdivided n_per_edge per edge.

    Consecutive edges share vertices, so interior corners have two incident
    segments (and show up as silhouette candidates with full adjacency).
    """
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    verts = []
    for a, b in zip(pts[:-1], pts[1:]):
        for i in range(n_per_edge):
            verts.append(a + (b - a) * (i / n_per_edge))
    verts.append(pts[-1])
    v = np.array(verts)
    e = np.array([[i, i + 1] for i in range(len(v) - 1)], dtype=np.int64)
    return BoundaryMesh(v, e, name=name)


def cat(*meshes):
    """Concatenate boundary meshes (vertex indices shifted)."""
    vs, es, off = [], [], 0
    for m in meshes:
        vs.append(m.vertices)
        es.append(m.elements + off)
        off += m.vertices.shape[0]
    return BoundaryMesh(np.vstack(vs), np.vstack(es), name=meshes[0].name)


def circle(radius, n, center=(0.0, 0.0), ccw=True, name="boundary"):
    """Closed polygonal circle; ccw=False flips winding (for holes)."""
    th = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    v = np.stack([center[0] + radius * np.cos(th),
                  center[1] + radius * np.sin(th)], axis=1)
    e = np.array([[i, (i + 1) % n] for i in range(n)], dtype=np.int64)
    if not ccw:
        e = e[:, ::-1]
    return BoundaryMesh(v, e, name=name)


# -- 2D scenes -----------------------------------------------------------------


def square_scene(n_neumann=8, g=None, h=None, f=None, sigma=0.0):
    """Unit square: Dirichlet on x=0 and x=1, Neumann on y=0 and y=1.

    Defaults solve u = x (g = x on the side walls, h = 0 top and bottom).
    """
    dmesh = cat(chain([(1, 0), (1, 1)], 2), chain([(0, 1), (0, 0)], 2))
    nmesh = cat(chain([(0, 0), (1, 0)], n_neumann),
                chain([(1, 1), (0, 1)], n_neumann))
    return build_scene(2, dirichlet_mesh=dmesh, neumann_mesh=nmesh,
                       g=g if g is not None else (lambda p: float(p[0])),
                       h=h, f=f, sigma=sigma)


def dirichlet_square_scene(g=None, n=4):
    """Unit square with all four walls Dirichlet."""
    dmesh = chain([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)], n)
    return build_scene(2, dirichlet_mesh=dmesh,
                       g=g if g is not None else (lambda p: float(p[0])))


def saw_scene(neumann_sides=(), teeth=4, height=0.22, g=None, h=None):
    """Unit box whose bottom wall is a sawtooth with `teeth` notches.

    `neumann_sides` lists walls made reflecting, drawn from {"saw", "left",
    "right"}; everything else (always including the top) is absorbing.
    Defaults solve u = x when h = 0 on whichever walls are reflecting.
    """
    xs = np.linspace(0.0, 1.0, 2 * teeth + 1)
    saw_pts = [(x, height if i % 2 else 0.0) for i, x in enumerate(xs)]
    walls = {
        "saw": chain(saw_pts, 1),
        "right": chain([(1, 0), (1, 1)], 1),
        "top": chain([(1, 1), (0, 1)], 1),
        "left": chain([(0, 1), (0, 0)], 1),
    }
    nsides = set(neumann_sides)
    dparts = [walls[k] for k in ("saw", "right", "top", "left") if k not in nsides]
    nparts = [walls[k] for k in ("saw", "right", "top", "left") if k in nsides]
    return build_scene(
        2, dirichlet_mesh=cat(*dparts),
        neumann_mesh=cat(*nparts) if nparts else None,
        g=g if g is not None else (lambda p: float(p[0])), h=h)


def l_scene(n_per_unit=4):
    """L-shaped domain [0,2]^2 minus (1,2)x(0,1), reflecting notch walls.

    The notch walls x=1 (y in [0,1]) and y=1 (x in [1,2]) meet at a
    reentrant corner at (1,1) and carry h = +1 on the vertical wall, -1 on
    the horizontal one; the rest is absorbing with g = x + y. The analytic
    solution is u = x + y (check: outward normals on the notch are (1,0)
    and (0,1), so du/dn is +1 and... the horizontal wall's outward normal
    points in -y inside the notch region, giving -1).
    """
    dmesh = chain([(2, 1), (2, 2), (0, 2), (0, 0), (1, 0)], n_per_unit)
    nmesh = chain([(1, 0), (1, 1), (2, 1)], n_per_unit)

    def u_exact(p):
        return float(p[0] + p[1])

    def h_fn(p):
        on_vertical = abs(p[0] - 1.0) < 1e-6 and p[1] < 1.0 + 1e-6
        return 1.0 if on_vertical else -1.0

    scene = build_scene(2, dirichlet_mesh=dmesh, neumann_mesh=nmesh,
                        g=u_exact, h=h_fn)
    return scene, u_exact


def annulus_scene(sigma=1.0, n=512, a=1.0, b=2.0):
    """Pure-Neumann annulus a < |p| < b with compatible flux.

    h = 1/b on the outer wall and -1/a on the inner wall is the normal
    derivative of u = log|p|, and integrates to zero over the boundary.
    Inner circle wound clockwise so its normals point into the hole.
    """
    walls = cat(circle(b, n), circle(a, n, ccw=False))

    def h_fn(p):
        r = math.hypot(p[0], p[1])
        return 1.0 / b if r > 0.5 * (a + b) else -1.0 / a

    scene = build_scene(2, neumann_mesh=walls, h=h_fn, sigma=0.0)
    return scene, (lambda p: math.log(math.hypot(p[0], p[1])))


def open_wall_scene(with_blocker):
    """Open reflecting walls for direct boundary-term checks (no Dirichlet).

    A tall wall at x = 0.6 facing -x, plus an optional short blocker at
    x = 0.3 that shadows part of it from the origin.
    """
    walls = [chain([(0.6, -0.8), (0.6, 0.8)], 16)]
    if with_blocker:
        walls.append(chain([(0.3, -0.2), (0.3, 0.2)], 8))
    return build_scene(2, neumann_mesh=cat(*walls),
                       h=lambda p: 1.0 + p[1] * p[1])


def disk_scene(g, n=256, radius=1.0):
    """All-Dirichlet unit disk."""
    return build_scene(2, dirichlet_mesh=circle(radius, n), g=g)


def sheet_scene(h_plus=1.0, h_minus=-1.0):
    """Open flat sheet on the x-axis inside an absorbing circle (two-sided).

    The sheet's stored normal points toward -y; data `h_plus` applies to
    walks above the sheet, `h_minus` below.
    """
    sheet = chain([(-0.8, 0.0), (0.8, 0.0)], 16)
    shell = circle(2.0, 256)
    return build_scene(2, dirichlet_mesh=shell, neumann_mesh=sheet,
                       g=lambda p: 0.0,
                       h=lambda p: h_plus, h_minus=lambda p: h_minus,
                       double_sided=True)


# -- 3D meshes -----------------------------------------------------------------


def icosphere(subdiv=2, radius=1.0, name="boundary"):
    """Subdivided icosahedron with vertices projected onto the sphere."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(p) for p in v]
    index = {p: i for i, p in enumerate(verts)}

    def midpoint(i, j):
        m = np.asarray(verts[i]) + np.asarray(verts[j])
        m /= np.linalg.norm(m)
        key = tuple(m)
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    for _ in range(subdiv):
        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return BoundaryMesh(radius * np.array(verts), np.array(f, dtype=np.int64),
                        name=name)


def l_prism(name="boundary"):
    """Closed L-shaped prism (an L polygon extruded along z), 20 triangles."""
    poly = [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0),
            (0.0, 2.0)]
    cap = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5)]
    n = len(poly)
    v = np.array([(x, y, 0.0) for x, y in poly]
                 + [(x, y, 1.0) for x, y in poly])
    f = []
    for a, b, c in cap:
        f.append((a + n, b + n, c + n))   # top cap, +z
        f.append((a, c, b))               # bottom cap, -z
    for i in range(n):
        j = (i + 1) % n
        f.append((i, j, j + n))           # sides, outward left-hand normals
        f.append((i, j + n, i + n))
    return BoundaryMesh(v, np.array(f, dtype=np.int64), name=name)


def triangle_soup(n_tris=60, seed=3, spread=0.35, name="boundary"):
    """Random disconnected triangles in the unit cube (open, non-watertight)."""
    rng = np.random.default_rng(seed)
    centers = rng.random((n_tris, 3))
    v = (centers[:, None, :]
         + spread * (rng.random((n_tris, 3, 3)) - 0.5)).reshape(-1, 3)
    f = np.arange(3 * n_tris, dtype=np.int64).reshape(-1, 3)
    return BoundaryMesh(v, f, name=name)


def cube_mesh(name="boundary"):
    """Unit cube [0,1]^3, 12 triangles, outward normals."""
    v = np.array([(x, y, z) for z in (0.0, 1.0)
                  for y in (0.0, 1.0) for x in (0.0, 1.0)])
    quads = [
        ((0, 2, 3, 1), (0, 0, -1)), ((4, 5, 7, 6), (0, 0, 1)),
        ((0, 1, 5, 4), (0, -1, 0)), ((2, 6, 7, 3), (0, 1, 0)),
        ((0, 4, 6, 2), (-1, 0, 0)), ((1, 3, 7, 5), (1, 0, 0)),
    ]
    f = []
    for (a, b, c, d), _ in quads:
        f += [(a, b, c), (a, c, d)]
    return BoundaryMesh(v, np.array(f, dtype=np.int64), name=name)


def planar_grid(nx=4, ny=4, name="boundary"):
    """Flat triangulated patch in the z=0 plane (all normals +z)."""
    xs, ys = np.meshgrid(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1),
                         indexing="ij")
    v = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    f = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = (i + 1) * (ny + 1) + j
            f += [(a, b, b + 1), (a, b + 1, a + 1)]
    return BoundaryMesh(v, np.array(f, dtype=np.int64), name=name)


def subdivided_cube(n=4, name="boundary"):
    """Unit cube with each face split into an n-by-n quad grid (12 n^2 tris).

    Watertight, outward normals. Face interiors are large coplanar
    neighborhoods, unlike cube_mesh where every triangle touches a crease.
    """
    grid = np.linspace(0.0, 1.0, n + 1)
    verts, tris = [], []
    for axis, value in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0),
                        (2, 0.0), (2, 1.0)):
        outward = np.zeros(3)
        outward[axis] = -1.0 if value == 0.0 else 1.0
        u_ax, v_ax = [a for a in range(3) if a != axis]
        base = len(verts)
        for gu in grid:
            for gv in grid:
                pt = np.zeros(3)
                pt[axis] = value
                pt[u_ax] = gu
                pt[v_ax] = gv
                verts.append(pt)
        for i in range(n):
            for j in range(n):
                a = base + i * (n + 1) + j
                b = a + (n + 1)
                for tri in ((a, b, a + 1), (a + 1, b, b + 1)):
                    p0, p1, p2 = (verts[t] for t in tri)
                    if np.cross(p1 - p0, p2 - p0) @ outward < 0:
                        tri = (tri[0], tri[2], tri[1])
                    tris.append(tri)
    verts = np.asarray(verts)
    tris = np.asarray(tris, dtype=np.int64)
    # weld the duplicated seam vertices; every face uses the same grid array,
    # so equal parameters give bit-identical coordinates and exact row
    # equality is enough
    uniq, inverse = np.unique(verts, axis=0, return_inverse=True)
    return BoundaryMesh(uniq, inverse[tris], name=name)
