"""Scene ingestion and result serialization.

Scene description is one flat text file of ``key = value`` lines with dotted
keys (diff-friendly, no nesting ambiguity). Mesh geometry lives in separate
files referenced by path, one file per boundary role:

* 2D: lines ``v x y`` and ``s i j`` (1-indexed segment endpoints). Normals
  are the left-hand perpendicular of (v_j - v_i), so counterclockwise
  winding yields outward normals.
* 3D: an OBJ subset — ``v x y z`` and plain triangular ``f i j k`` lines
  only; anything else in an ``f`` line (quads, texture/normal slashes) is an
  error.

Boundary data (g on the absorbing boundary, h = du/dn with outward n on the
reflecting boundary, source f with (Laplacian - sigma) u = f) comes in three
spec kinds: ``constant``, ``polynomial`` (monomial terms, total degree <= 4),
and ``grid`` (regular scalar grid in a sidecar file, bi-/trilinear
interpolation, nearest extrapolation outside the box).

Recognized keys (see README for the worked grammar):

    dimension, dirichlet_mesh, neumann_mesh, sigma, double_sided,
    allow_unregularized,
    {g,h,f,g_minus,h_minus}.kind / .value / .term.<i> / .grid,
    estimator.{epsilon,r_min,max_steps,tikhonov_sigma,regularize_after,
               normal_offset,seed},
    evaluation.{kind,walks,reference,point.<i>,
                grid.origin,grid.axis_u,grid.axis_v,grid.width,grid.height}

Errors are split into three categories so the CLI can map them to distinct
exit codes: SceneParseError (malformed text), SceneValidationError (well
formed but violates an invariant), and the built-in FileNotFoundError.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimator import EstimatorConfig
from .mesh import BoundaryMesh, MeshError
from .snch import SnchTree, build_snch


class SceneParseError(ValueError):
    """Malformed scene/config/mesh text."""


class SceneValidationError(ValueError):
    """Well-formed input that violates a scene invariant."""


CSV_HEADER = "px,py,pz,mean,stderr,n_walks,mean_steps,clamp_rate,escaped_rate"

_MAX_POLY_DEGREE = 4


def _fmt(x: float) -> str:
    """Shortest decimal that round-trips the exact double."""
    return repr(float(x))


def _parse_floats(text: str, n: Optional[int], context: str) -> np.ndarray:
    toks = text.split()
    if n is not None and len(toks) != n:
        raise SceneParseError(f"{context}: expected {n} numbers, got {len(toks)}")
    try:
        vals = np.array([float(t) for t in toks], dtype=np.float64)
    except ValueError:
        raise SceneParseError(f"{context}: not a number list: {text!r}") from None
    if not np.all(np.isfinite(vals)):
        raise SceneParseError(f"{context}: non-finite number in {text!r}")
    return vals


def _parse_scalar(text: str, context: str) -> float:
    return float(_parse_floats(text, 1, context)[0])


def _parse_int(text: str, context: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise SceneParseError(f"{context}: not an integer: {text!r}") from None


def _parse_bool(text: str, context: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise SceneParseError(f"{context}: not a boolean: {text!r}")


# -- boundary-condition specs ---------------------------------------------------


@dataclass(frozen=True)
class ConstantSpec:
    value: float

    @property
    def is_zero(self):
        return self.value == 0.0


@dataclass(frozen=True)
class PolynomialSpec:
    """Sum of monomials: terms are (coefficient, per-axis exponents)."""

    terms: tuple

    @property
    def is_zero(self):
        return all(c == 0.0 for c, _ in self.terms)


@dataclass
class GridSpec:
    """Regular scalar grid over an axis-aligned box.

    `values` has shape (ny, nx) in 2D or (nz, ny, nx) in 3D — the x index
    runs fastest in the sidecar file. Evaluation clamps to the box (nearest
    extrapolation) and interpolates multilinearly inside.
    """

    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray
    path: str = ""

    @property
    def is_zero(self):
        return not np.any(self.values)


def evaluate_bc(spec, x) -> float:
    """Evaluate a boundary-condition spec at a point."""
    if isinstance(spec, ConstantSpec):
        return spec.value
    if isinstance(spec, PolynomialSpec):
        total = 0.0
        for coeff, exps in spec.terms:
            term = coeff
            for xi, e in zip(x, exps):
                if e:
                    term *= float(xi) ** e
            total += term
        return total
    if isinstance(spec, GridSpec):
        return _evaluate_grid(spec, x)
    raise TypeError(f"not a boundary-condition spec: {spec!r}")


def _evaluate_grid(spec: GridSpec, x) -> float:
    dim = len(spec.lo)
    # Fractional grid coordinates, clamped so points outside the box take
    # the nearest boundary value.
    idx = []
    frac = []
    for d in range(dim):
        n = spec.values.shape[dim - 1 - d]  # axis d is the (dim-1-d)-th array axis
        span = spec.hi[d] - spec.lo[d]
        t = (float(x[d]) - spec.lo[d]) / span * (n - 1)
        t = min(max(t, 0.0), float(n - 1))
        i0 = min(int(t), n - 2)
        idx.append(i0)
        frac.append(t - i0)
    if dim == 2:
        ix, iy = idx
        fx, fy = frac
        v = spec.values
        v00, v10 = v[iy, ix], v[iy, ix + 1]
        v01, v11 = v[iy + 1, ix], v[iy + 1, ix + 1]
        return float((v00 * (1 - fx) + v10 * fx) * (1 - fy)
                     + (v01 * (1 - fx) + v11 * fx) * fy)
    ix, iy, iz = idx
    fx, fy, fz = frac
    out = 0.0
    for dz, wz in ((0, 1 - fz), (1, fz)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                out += wx * wy * wz * spec.values[iz + dz, iy + dy, ix + dx]
    return float(out)


def _load_grid_sidecar(path: str, dimension: int) -> GridSpec:
    if not os.path.exists(path):
        raise FileNotFoundError(f"grid sidecar not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        toks = []
        for line in fh:
            line = line.split("#", 1)[0]
            toks.extend(line.split())
    if len(toks) < 1 + dimension:
        raise SceneParseError(f"{path}: truncated grid sidecar")
    try:
        dims = [int(t) for t in toks[:dimension]]
    except ValueError:
        raise SceneParseError(f"{path}: grid dims must be integers") from None
    if any(n < 2 for n in dims):
        raise SceneValidationError(f"{path}: grid dims must be >= 2 per axis, "
                                   f"got {dims}")
    pos = dimension
    box = _parse_floats(" ".join(toks[pos:pos + 2 * dimension]), 2 * dimension,
                        f"{path}: bbox")
    lo, hi = box[:dimension], box[dimension:]
    if not np.all(hi > lo):
        raise SceneValidationError(f"{path}: grid bbox must have positive extent")
    pos += 2 * dimension
    count = int(np.prod(dims))
    vals = _parse_floats(" ".join(toks[pos:]), count, f"{path}: grid values")
    # Sidecar order: x fastest, then y, then z.
    values = vals.reshape(tuple(reversed(dims)))
    return GridSpec(lo=lo, hi=hi, values=values, path=path)


def _write_grid_sidecar(spec: GridSpec, path: str):
    dim = len(spec.lo)
    dims = [spec.values.shape[dim - 1 - d] for d in range(dim)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(n) for n in dims) + "\n")
        fh.write(" ".join(_fmt(v) for v in spec.lo) + " "
                 + " ".join(_fmt(v) for v in spec.hi) + "\n")
        flat = spec.values.reshape(-1)
        for row_start in range(0, flat.size, dims[0]):
            fh.write(" ".join(_fmt(v) for v in flat[row_start:row_start + dims[0]])
                     + "\n")


# -- meshes ----------------------------------------------------------------------


def load_mesh_2d(path: str, name: str = "boundary") -> BoundaryMesh:
    """Segment-soup loader: `v x y` vertices and 1-indexed `s i j` segments."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    verts = []
    segs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if toks[0] == "v":
                verts.append(_parse_floats(" ".join(toks[1:]), 2,
                                           f"{path}:{lineno}"))
            elif toks[0] == "s":
                if len(toks) != 3:
                    raise SceneParseError(f"{path}:{lineno}: segment needs "
                                          "exactly two vertex indices")
                try:
                    i, j = int(toks[1]), int(toks[2])
                except ValueError:
                    raise SceneParseError(f"{path}:{lineno}: segment indices "
                                          f"must be integers") from None
                if i < 1 or j < 1 or i > len(verts) or j > len(verts):
                    raise SceneParseError(f"{path}:{lineno}: vertex index out "
                                          f"of range (have {len(verts)})")
                segs.append((i - 1, j - 1))
            else:
                raise SceneParseError(f"{path}:{lineno}: unknown record "
                                      f"{toks[0]!r} (expected v or s)")
    v = np.array(verts, dtype=np.float64).reshape(-1, 2)
    e = np.array(segs, dtype=np.int64).reshape(-1, 2)
    try:
        return BoundaryMesh(v, e, name=name)
    except MeshError as err:
        raise SceneValidationError(f"{path}: {err}") from None


def load_mesh_obj(path: str, name: str = "boundary") -> BoundaryMesh:
    """Strict OBJ subset: `v x y z` and plain triangular `f` lines."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            toks = line.split()
            if toks[0] == "v":
                verts.append(_parse_floats(" ".join(toks[1:]), 3,
                                           f"{path}:{lineno}"))
            elif toks[0] == "f":
                if len(toks) != 4:
                    raise SceneParseError(f"{path}:{lineno}: face must have "
                                          f"exactly 3 vertices, got "
                                          f"{len(toks) - 1}")
                ids = []
                for t in toks[1:]:
                    if "/" in t:
                        raise SceneParseError(
                            f"{path}:{lineno}: face vertex {t!r} uses "
                            "texture/normal indices; only plain indices are "
                            "supported")
                    try:
                        ids.append(int(t))
                    except ValueError:
                        raise SceneParseError(f"{path}:{lineno}: face index "
                                              f"{t!r} is not an integer") from None
                if any(i < 1 or i > len(verts) for i in ids):
                    raise SceneParseError(f"{path}:{lineno}: vertex index out "
                                          f"of range (have {len(verts)})")
                faces.append([i - 1 for i in ids])
            else:
                raise SceneParseError(f"{path}:{lineno}: unsupported record "
                                      f"{toks[0]!r} (OBJ subset: v and f only)")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    e = np.array(faces, dtype=np.int64).reshape(-1, 3)
    try:
        return BoundaryMesh(v, e, name=name)
    except MeshError as err:
        raise SceneValidationError(f"{path}: {err}") from None


def load_mesh(path: str, dimension: int, name: str = "boundary") -> BoundaryMesh:
    if dimension == 2:
        return load_mesh_2d(path, name)
    return load_mesh_obj(path, name)


def write_mesh(mesh: BoundaryMesh, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        if mesh.dimension == 2:
            for v in mesh.vertices:
                fh.write(f"v {_fmt(v[0])} {_fmt(v[1])}\n")
            for e in mesh.elements:
                fh.write(f"s {e[0] + 1} {e[1] + 1}\n")
        else:
            for v in mesh.vertices:
                fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
            for e in mesh.elements:
                fh.write(f"f {e[0] + 1} {e[1] + 1} {e[2] + 1}\n")


def _empty_mesh(dimension: int, name: str) -> BoundaryMesh:
    return BoundaryMesh(np.zeros((0, dimension)),
                        np.zeros((0, dimension), dtype=np.int64), name=name)


# -- evaluation plan ---------------------------------------------------------------


@dataclass
class EvaluationPlan:
    """Where to evaluate the solution and with how many walks per point."""

    kind: str  # "point_list" | "grid_slice"
    points: np.ndarray
    walks_per_point: int
    reference_path: Optional[str] = None
    width: int = 0
    height: int = 0
    origin: Optional[np.ndarray] = None
    axis_u: Optional[np.ndarray] = None
    axis_v: Optional[np.ndarray] = None

    @property
    def n_points(self):
        return len(self.points)


def make_grid_slice(origin, axis_u, axis_v, width: int, height: int,
                    walks_per_point: int,
                    reference_path: Optional[str] = None) -> EvaluationPlan:
    """Cell-centered W x H sampling of the parallelogram origin + u + v.

    Point (i, j) sits at origin + (i+1/2)/W * axis_u + (j+1/2)/H * axis_v;
    row j = 0 is written first in the CSV and forms the bottom row of the
    PFM images (PFM stores rows bottom to top).
    """
    if width < 1 or height < 1:
        raise SceneValidationError("grid_slice resolution must be >= 1 per axis")
    origin = np.asarray(origin, dtype=np.float64)
    axis_u = np.asarray(axis_u, dtype=np.float64)
    axis_v = np.asarray(axis_v, dtype=np.float64)
    pts = np.empty((width * height, len(origin)))
    for j in range(height):
        for i in range(width):
            pts[j * width + i] = (origin + (i + 0.5) / width * axis_u
                                  + (j + 0.5) / height * axis_v)
    return EvaluationPlan(kind="grid_slice", points=pts,
                          walks_per_point=walks_per_point,
                          reference_path=reference_path, width=width,
                          height=height, origin=origin, axis_u=axis_u,
                          axis_v=axis_v)


# -- scene -------------------------------------------------------------------------


@dataclass
class SceneConfig:
    """Parsed, validated contents of a scene file."""

    dimension: int
    dirichlet_mesh_path: Optional[str]
    neumann_mesh_path: Optional[str]
    g_spec: object
    h_spec: object
    f_spec: object
    sigma: float
    estimator: EstimatorConfig
    double_sided: bool
    evaluation: EvaluationPlan
    g_minus_spec: object = None
    h_minus_spec: object = None
    allow_unregularized: bool = False


@dataclass
class Scene:
    """Immutable solver-ready scene: meshes, query trees, and data callables."""

    dimension: int
    dirichlet_mesh: BoundaryMesh
    neumann_mesh: BoundaryMesh
    dirichlet_tree: SnchTree
    neumann_tree: SnchTree
    sigma: float
    double_sided: bool
    g_plus: Callable
    g_minus: Callable
    h_plus: Callable
    h_minus: Callable
    f: Callable
    source_is_zero: bool
    neumann_data_is_zero: bool
    bounding_center: np.ndarray = field(default=None)
    bounding_radius: float = 0.0
    config: Optional[SceneConfig] = None

    @property
    def pure_neumann(self):
        return self.dirichlet_mesh.is_empty

    def dirichlet_value(self, x, side: int = 1) -> float:
        return self.g_plus(x) if side > 0 else self.g_minus(x)

    def neumann_value(self, x, side: int = 1) -> float:
        return self.h_plus(x) if side > 0 else self.h_minus(x)

    def source_value(self, x) -> float:
        return self.f(x)

    def contains(self, x) -> bool:
        """Crossing-parity test; meaningful for watertight scenes.

        The ray direction has irrational slopes so it cannot thread mesh
        vertices of coordinate-aligned geometry (a +x ray from a point on a
        symmetry axis would graze two segment endpoints and count twice)."""
        d = np.array([1.0, 0.6180339887498949, 0.41421356237309515])
        d = d[:self.dimension]
        n = len(self.dirichlet_tree.intersect_all(np.asarray(x, float), d,
                                                  t_max=math.inf))
        n += len(self.neumann_tree.intersect_all(np.asarray(x, float), d,
                                                 t_max=math.inf))
        return n % 2 == 1


def _zero(_x) -> float:
    return 0.0


def build_scene(dimension: int, dirichlet_mesh: Optional[BoundaryMesh] = None,
                neumann_mesh: Optional[BoundaryMesh] = None,
                g: Optional[Callable] = None, h: Optional[Callable] = None,
                f: Optional[Callable] = None, sigma: float = 0.0,
                double_sided: bool = False, g_minus: Optional[Callable] = None,
                h_minus: Optional[Callable] = None,
                config: Optional[SceneConfig] = None) -> Scene:
    """Assemble a Scene from meshes and plain callables (tests use this)."""
    dmesh = dirichlet_mesh if dirichlet_mesh is not None else _empty_mesh(
        dimension, "dirichlet")
    nmesh = neumann_mesh if neumann_mesh is not None else _empty_mesh(
        dimension, "neumann")
    if dmesh.is_empty and nmesh.is_empty:
        raise SceneValidationError("scene needs at least one boundary mesh")
    if (not dmesh.is_empty and dmesh.dimension != dimension) or \
       (not nmesh.is_empty and nmesh.dimension != dimension):
        raise SceneValidationError("mesh dimension does not match scene")
    if sigma < 0.0:
        raise SceneValidationError("sigma must be >= 0")
    verts = [m.vertices for m in (dmesh, nmesh) if len(m.vertices)]
    allv = np.vstack(verts)
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = float(np.sqrt(((allv - center) ** 2).sum(axis=1).max()))
    if radius <= 0.0:
        raise SceneValidationError("scene geometry is a single point")
    return Scene(
        dimension=dimension, dirichlet_mesh=dmesh, neumann_mesh=nmesh,
        dirichlet_tree=build_snch(dmesh), neumann_tree=build_snch(nmesh),
        sigma=sigma, double_sided=double_sided,
        g_plus=g or _zero, g_minus=(g_minus or g or _zero),
        h_plus=h or _zero, h_minus=(h_minus or h or _zero),
        f=f or _zero,
        source_is_zero=f is None,
        neumann_data_is_zero=(h is None and (not double_sided or h_minus is None)),
        bounding_center=center, bounding_radius=radius, config=config)


# -- scene-file parsing --------------------------------------------------------------


_TOP_KEYS = {"dimension", "dirichlet_mesh", "neumann_mesh", "sigma",
             "double_sided", "allow_unregularized"}
_EST_KEYS = {"epsilon", "r_min", "max_steps", "tikhonov_sigma",
             "regularize_after", "normal_offset", "seed"}
_EVAL_KEYS = {"kind", "walks", "reference", "grid.origin", "grid.axis_u",
              "grid.axis_v", "grid.width", "grid.height"}
_SPEC_PREFIXES = ("g", "h", "f", "g_minus", "h_minus")


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Flat `key = value` lines; later duplicates override earlier ones."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneParseError(f"{origin}:{lineno}: expected 'key = value', "
                                  f"got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise SceneParseError(f"{origin}:{lineno}: empty key or value")
        _check_key(key, f"{origin}:{lineno}")
        out[key] = value
    return out


def _check_key(key: str, context: str):
    if key in _TOP_KEYS:
        return
    head, _, rest = key.partition(".")
    if head == "estimator" and rest in _EST_KEYS:
        return
    if head == "evaluation":
        if rest in _EVAL_KEYS:
            return
        if rest.startswith("point.") and rest[6:].isdigit():
            return
    if head in _SPEC_PREFIXES and rest:
        if rest in ("kind", "value", "grid"):
            return
        if rest.startswith("term.") and rest[5:].isdigit():
            return
    raise SceneParseError(f"{context}: unknown key {key!r}")


def _build_spec(kv: dict, prefix: str, dimension: int, base_dir: str):
    kind_key = f"{prefix}.kind"
    if kind_key not in kv:
        return ConstantSpec(0.0) if prefix in ("g", "h", "f") else None
    kind = kv[kind_key].strip()
    if kind == "constant":
        return ConstantSpec(_parse_scalar(kv.get(f"{prefix}.value", "0"),
                                          f"{prefix}.value"))
    if kind == "polynomial":
        terms = []
        i = 0
        while f"{prefix}.term.{i}" in kv:
            vals = kv[f"{prefix}.term.{i}"].split()
            if len(vals) != 1 + dimension:
                raise SceneParseError(
                    f"{prefix}.term.{i}: expected coefficient plus "
                    f"{dimension} exponents")
            coeff = _parse_scalar(vals[0], f"{prefix}.term.{i}")
            try:
                exps = tuple(int(v) for v in vals[1:])
            except ValueError:
                raise SceneParseError(f"{prefix}.term.{i}: exponents must be "
                                      "integers") from None
            if any(e < 0 for e in exps):
                raise SceneValidationError(f"{prefix}.term.{i}: exponents must "
                                           "be >= 0")
            if sum(exps) > _MAX_POLY_DEGREE:
                raise SceneValidationError(
                    f"{prefix}.term.{i}: total degree {sum(exps)} exceeds "
                    f"{_MAX_POLY_DEGREE}")
            terms.append((coeff, exps))
            i += 1
        if not terms:
            raise SceneParseError(f"{prefix}: polynomial spec needs at least "
                                  f"one {prefix}.term.<i> entry")
        return PolynomialSpec(tuple(terms))
    if kind == "grid":
        if f"{prefix}.grid" not in kv:
            raise SceneParseError(f"{prefix}: grid spec needs {prefix}.grid "
                                  "sidecar path")
        return _load_grid_sidecar(os.path.join(base_dir, kv[f"{prefix}.grid"]),
                                  dimension)
    raise SceneParseError(f"{prefix}.kind: unknown spec kind {kind!r}")


class _SpecEval:
    """Picklable evaluate_bc closure (worker processes receive the Scene)."""

    __slots__ = ("spec",)

    def __init__(self, spec):
        self.spec = spec

    def __call__(self, x) -> float:
        return evaluate_bc(self.spec, x)


def _spec_callable(spec) -> Callable:
    if spec is None or (hasattr(spec, "is_zero") and spec.is_zero):
        return _zero
    return _SpecEval(spec)


def _build_plan(kv: dict, dimension: int, base_dir: str) -> EvaluationPlan:
    kind = kv.get("evaluation.kind")
    if kind is None:
        raise SceneValidationError("evaluation.kind is required "
                                   "(point_list or grid_slice)")
    walks = _parse_int(kv.get("evaluation.walks", "256"), "evaluation.walks")
    if walks < 1:
        raise SceneValidationError("evaluation.walks must be >= 1")
    ref = kv.get("evaluation.reference")
    if ref is not None:
        ref = os.path.join(base_dir, ref)
    if kind == "point_list":
        pts = []
        i = 0
        while f"evaluation.point.{i}" in kv:
            pts.append(_parse_floats(kv[f"evaluation.point.{i}"], dimension,
                                     f"evaluation.point.{i}"))
            i += 1
        if not pts:
            raise SceneValidationError("point_list plan needs at least one "
                                       "evaluation.point.<i>")
        return EvaluationPlan(kind="point_list", points=np.array(pts),
                              walks_per_point=walks, reference_path=ref)
    if kind == "grid_slice":
        missing = [k for k in ("grid.origin", "grid.axis_u", "grid.axis_v",
                               "grid.width", "grid.height")
                   if f"evaluation.{k}" not in kv]
        if missing:
            raise SceneValidationError(
                f"grid_slice plan is missing evaluation.{missing[0]}")
        origin = _parse_floats(kv["evaluation.grid.origin"], dimension,
                               "evaluation.grid.origin")
        axis_u = _parse_floats(kv["evaluation.grid.axis_u"], dimension,
                               "evaluation.grid.axis_u")
        axis_v = _parse_floats(kv["evaluation.grid.axis_v"], dimension,
                               "evaluation.grid.axis_v")
        width = _parse_int(kv["evaluation.grid.width"], "evaluation.grid.width")
        height = _parse_int(kv["evaluation.grid.height"],
                            "evaluation.grid.height")
        return make_grid_slice(origin, axis_u, axis_v, width, height, walks,
                               ref)
    raise SceneParseError(f"evaluation.kind: unknown kind {kind!r}")


def build_scene_from_keys(kv: dict, base_dir: str = ".") -> Scene:
    if "dimension" not in kv:
        raise SceneValidationError("dimension is required (2 or 3)")
    dimension = _parse_int(kv["dimension"], "dimension")
    if dimension not in (2, 3):
        raise SceneValidationError(f"dimension must be 2 or 3, got {dimension}")
    sigma = _parse_scalar(kv.get("sigma", "0"), "sigma")
    if sigma < 0:
        raise SceneValidationError("sigma must be >= 0")
    double_sided = _parse_bool(kv.get("double_sided", "false"), "double_sided")
    allow_unreg = _parse_bool(kv.get("allow_unregularized", "false"),
                              "allow_unregularized")

    dpath = kv.get("dirichlet_mesh")
    npath = kv.get("neumann_mesh")
    if dpath is None and npath is None:
        raise SceneValidationError("scene needs at least one of dirichlet_mesh "
                                   "or neumann_mesh")
    dmesh = (load_mesh(os.path.join(base_dir, dpath), dimension, "dirichlet")
             if dpath else _empty_mesh(dimension, "dirichlet"))
    nmesh = (load_mesh(os.path.join(base_dir, npath), dimension, "neumann")
             if npath else _empty_mesh(dimension, "neumann"))
    if dmesh.is_empty and nmesh.is_empty:
        raise SceneValidationError("both meshes are empty")

    verts = [m.vertices for m in (dmesh, nmesh) if len(m.vertices)]
    allv = np.vstack(verts)
    center = 0.5 * (allv.min(axis=0) + allv.max(axis=0))
    scale = float(np.sqrt(((allv - center) ** 2).sum(axis=1).max()))

    est_kwargs = {
        "epsilon": 1e-3 * scale,
        "r_min": 1e-3 * scale,
        "max_steps": 10_000,
        "tikhonov_sigma": 0.0,
        "regularize_after": 0,
        "normal_offset": 1e-6 * scale,
        "seed": 0,
    }
    for k in _EST_KEYS:
        key = f"estimator.{k}"
        if key in kv:
            if k in ("max_steps", "regularize_after", "seed"):
                est_kwargs[k] = _parse_int(kv[key], key)
            else:
                est_kwargs[k] = _parse_scalar(kv[key], key)
    try:
        est = EstimatorConfig(**est_kwargs)
    except ValueError as err:
        raise SceneValidationError(f"estimator config: {err}") from None

    if dmesh.is_empty and sigma == 0.0 and est.tikhonov_sigma == 0.0 \
            and not allow_unreg:
        raise SceneValidationError(
            "pure-Neumann scene: set estimator.tikhonov_sigma > 0 or "
            "acknowledge with allow_unregularized = true")

    g_spec = _build_spec(kv, "g", dimension, base_dir)
    h_spec = _build_spec(kv, "h", dimension, base_dir)
    f_spec = _build_spec(kv, "f", dimension, base_dir)
    gm_spec = _build_spec(kv, "g_minus", dimension, base_dir)
    hm_spec = _build_spec(kv, "h_minus", dimension, base_dir)

    plan = _build_plan(kv, dimension, base_dir)

    config = SceneConfig(dimension=dimension, dirichlet_mesh_path=dpath,
                         neumann_mesh_path=npath, g_spec=g_spec, h_spec=h_spec,
                         f_spec=f_spec, sigma=sigma, estimator=est,
                         double_sided=double_sided, evaluation=plan,
                         g_minus_spec=gm_spec, h_minus_spec=hm_spec,
                         allow_unregularized=allow_unreg)

    h_zero = h_spec.is_zero and (not double_sided or hm_spec is None
                                 or hm_spec.is_zero)
    scene = Scene(
        dimension=dimension, dirichlet_mesh=dmesh, neumann_mesh=nmesh,
        dirichlet_tree=build_snch(dmesh), neumann_tree=build_snch(nmesh),
        sigma=sigma, double_sided=double_sided,
        g_plus=_spec_callable(g_spec),
        g_minus=_spec_callable(gm_spec if gm_spec is not None else g_spec),
        h_plus=_spec_callable(h_spec),
        h_minus=_spec_callable(hm_spec if hm_spec is not None else h_spec),
        f=_spec_callable(f_spec),
        source_is_zero=f_spec.is_zero,
        neumann_data_is_zero=h_zero,
        bounding_center=center, bounding_radius=scale, config=config)
    return scene


def load_scene(path: str, overrides: Optional[dict] = None) -> Scene:
    """Parse, validate, and assemble a scene file; overrides win over file
    keys (the CLI's --set plumbing)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"scene file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        kv = parse_config_text(fh.read(), origin=path)
    if overrides:
        for k, v in overrides.items():
            _check_key(k, "--set")
            kv[k] = v
    return build_scene_from_keys(kv, base_dir=os.path.dirname(os.path.abspath(path)))


# -- normalized serialization -----------------------------------------------------


def _spec_lines(prefix: str, spec) -> list:
    if spec is None:
        return []
    if isinstance(spec, ConstantSpec):
        return [f"{prefix}.kind = constant", f"{prefix}.value = {_fmt(spec.value)}"]
    if isinstance(spec, PolynomialSpec):
        lines = [f"{prefix}.kind = polynomial"]
        for i, (coeff, exps) in enumerate(spec.terms):
            lines.append(f"{prefix}.term.{i} = {_fmt(coeff)} "
                         + " ".join(str(e) for e in exps))
        return lines
    if isinstance(spec, GridSpec):
        return [f"{prefix}.kind = grid", f"{prefix}.grid = {prefix}_grid.txt"]
    raise TypeError(f"not a spec: {spec!r}")


def serialize_scene(scene: Scene, directory: str) -> str:
    """Write the normalized form of a loaded scene into `directory`.

    Produces scene.cfg plus canonical mesh files (dirichlet/neumann with
    extension .seg in 2D, .obj in 3D) and grid sidecars. Returns the path of
    the config file. Loading the result reproduces identical meshes, specs,
    and parameters (floats are written shortest-round-trip).
    """
    cfg = scene.config
    if cfg is None:
        raise ValueError("scene was built programmatically; nothing to "
                         "serialize")
    os.makedirs(directory, exist_ok=True)
    ext = "seg" if scene.dimension == 2 else "obj"
    lines = [f"dimension = {scene.dimension}",
             f"double_sided = {'true' if scene.double_sided else 'false'}",
             f"sigma = {_fmt(scene.sigma)}"]
    if cfg.allow_unregularized:
        lines.append("allow_unregularized = true")
    if not scene.dirichlet_mesh.is_empty or cfg.dirichlet_mesh_path:
        write_mesh(scene.dirichlet_mesh, os.path.join(directory,
                                                      f"dirichlet.{ext}"))
        lines.append(f"dirichlet_mesh = dirichlet.{ext}")
    if not scene.neumann_mesh.is_empty or cfg.neumann_mesh_path:
        write_mesh(scene.neumann_mesh, os.path.join(directory,
                                                    f"neumann.{ext}"))
        lines.append(f"neumann_mesh = neumann.{ext}")
    for prefix, spec in (("g", cfg.g_spec), ("h", cfg.h_spec), ("f", cfg.f_spec),
                         ("g_minus", cfg.g_minus_spec),
                         ("h_minus", cfg.h_minus_spec)):
        lines.extend(_spec_lines(prefix, spec))
        if isinstance(spec, GridSpec):
            _write_grid_sidecar(spec, os.path.join(directory,
                                                   f"{prefix}_grid.txt"))
    est = cfg.estimator
    lines += [f"estimator.epsilon = {_fmt(est.epsilon)}",
              f"estimator.r_min = {_fmt(est.r_min)}",
              f"estimator.max_steps = {est.max_steps}",
              f"estimator.tikhonov_sigma = {_fmt(est.tikhonov_sigma)}",
              f"estimator.regularize_after = {est.regularize_after}",
              f"estimator.normal_offset = {_fmt(est.normal_offset)}",
              f"estimator.seed = {est.seed}"]
    plan = cfg.evaluation
    lines.append(f"evaluation.kind = {plan.kind}")
    lines.append(f"evaluation.walks = {plan.walks_per_point}")
    if plan.reference_path:
        lines.append(f"evaluation.reference = {plan.reference_path}")
    if plan.kind == "point_list":
        for i, p in enumerate(plan.points):
            lines.append(f"evaluation.point.{i} = "
                         + " ".join(_fmt(c) for c in p))
    else:
        lines.append("evaluation.grid.origin = "
                     + " ".join(_fmt(c) for c in plan.origin))
        lines.append("evaluation.grid.axis_u = "
                     + " ".join(_fmt(c) for c in plan.axis_u))
        lines.append("evaluation.grid.axis_v = "
                     + " ".join(_fmt(c) for c in plan.axis_v))
        lines.append(f"evaluation.grid.width = {plan.width}")
        lines.append(f"evaluation.grid.height = {plan.height}")
    out_path = os.path.join(directory, "scene.cfg")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path


# -- results ------------------------------------------------------------------------


def read_reference(path: str, n_points: int) -> np.ndarray:
    """Reference values: either a results.csv from a previous run (mean
    column) or a plain text file of one value per line."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"reference file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise SceneParseError(f"{path}: empty reference file")
    vals = []
    if lines[0].startswith("px,"):
        if lines[0] != CSV_HEADER and not lines[0].startswith(CSV_HEADER):
            raise SceneParseError(f"{path}: unrecognized CSV header")
        for ln in lines[1:]:
            if ln.startswith("#"):
                continue
            cols = ln.split(",")
            vals.append(float(cols[3]))
    else:
        for ln in lines:
            if ln.startswith("#"):
                continue
            vals.extend(float(t) for t in ln.replace(",", " ").split())
    arr = np.array(vals, dtype=np.float64)
    if len(arr) != n_points:
        raise SceneValidationError(
            f"{path}: reference has {len(arr)} values, plan has {n_points} "
            "points")
    return arr


def write_results(plan: EvaluationPlan, estimates, out_dir: str,
                  reference: Optional[np.ndarray] = None) -> dict:
    """Write results.csv (and mean/stderr PFM images for grid slices).

    `estimates` is a sequence of EstimateResult in plan-point order. Returns
    {"csv": path, ...} with any image paths. Byte-stable: fixed header, \\n
    newlines, shortest-round-trip floats.
    """
    if len(estimates) != plan.n_points:
        raise ValueError(f"got {len(estimates)} estimates for {plan.n_points} "
                         "plan points")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    header = CSV_HEADER + (",abs_error" if reference is not None else "")
    rows = [header]
    for k, (p, est) in enumerate(zip(plan.points, estimates)):
        pz = p[2] if len(p) == 3 else 0.0
        cols = [_fmt(p[0]), _fmt(p[1]), _fmt(pz), _fmt(est.mean),
                _fmt(est.stderr), str(est.n_walks), _fmt(est.mean_steps),
                _fmt(est.clamp_rate), _fmt(est.escaped_rate)]
        if reference is not None:
            cols.append(_fmt(abs(est.mean - reference[k])))
        rows.append(",".join(cols))
    if reference is not None:
        means = np.array([e.mean for e in estimates])
        rmse = float(np.sqrt(np.mean((means - reference) ** 2)))
        rows.append(f"# rmse = {_fmt(rmse)}")
    csv_path = os.path.join(out_dir, "results.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    paths["csv"] = csv_path
    if plan.kind == "grid_slice":
        means = np.array([e.mean for e in estimates], dtype=np.float64)
        errs = np.array([e.stderr for e in estimates], dtype=np.float64)
        paths["mean_pfm"] = _write_pfm(os.path.join(out_dir, "mean.pfm"),
                                       means, plan.width, plan.height)
        paths["stderr_pfm"] = _write_pfm(os.path.join(out_dir, "stderr.pfm"),
                                         errs, plan.width, plan.height)
    return paths


def _write_pfm(path: str, flat: np.ndarray, width: int, height: int) -> str:
    """Grayscale PFM, scale -1.0 (little-endian), rows bottom to top. Plan
    row j = 0 is the bottom row, so the flat plan order is written as-is."""
    data = flat.reshape(height, width).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_pfm(path: str):
    """Inverse of _write_pfm; returns (array[h, w], scale). Test helper."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise SceneParseError(f"{path}: not a grayscale PFM")
        w, h = (int(t) for t in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h), dtype=dtype)
    return data.reshape(h, w), scale
