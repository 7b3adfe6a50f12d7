"""Grid-free Monte Carlo solver for Poisson and screened-Poisson problems
with mixed Dirichlet (absorbing) and Neumann (reflecting) boundaries.

The solver never meshes the domain interior: it only ever asks three
geometric questions of the boundary — closest point, first ray hit, and
closest visibility silhouette — all served by a bounding-volume hierarchy
whose nodes also carry normal cones (`snch`). Walks jump inside star-shaped
regions bounded by those queries (`estimator`), with reference estimators in
`baselines`, scene/result file handling in `scene_io`, and a CLI in `cli`.
"""

from .baselines import (BaselineConfig, random_intersection_estimate,
                        run_baseline_walks, sde_walk, wos_dirichlet,
                        wos_reflect)
from .estimator import (ESCAPE_RADIUS_FACTOR, TERMINAL_DIRICHLET,
                        TERMINAL_ESCAPED, TERMINAL_KINDS, TERMINAL_ROULETTE,
                        TERMINAL_STEP_CAP, EstimateResult, EstimatorConfig,
                        StarRegion, StepTerminal, WalkOutcome, WalkState,
                        estimate, neumann_contribution,
                        pure_neumann_regularization, run_walk,
                        source_contribution, star_region, walk_rng, wost_step,
                        wost_step_double_sided)
from .kernels import (KernelContext, greens_ball, greens_ball_norm,
                      greens_ball_ratio, greens_free, q_factor,
                      sample_greens_radius, sample_hemisphere_direction,
                      sample_unit_direction)
from .mesh import BoundaryMesh, MeshError
from .scene_io import (CSV_HEADER, ConstantSpec, EvaluationPlan, GridSpec,
                       PolynomialSpec, Scene, SceneConfig, SceneParseError,
                       SceneValidationError, build_scene, evaluate_bc,
                       load_mesh, load_scene, make_grid_slice, read_pfm,
                       read_reference, serialize_scene, write_results)
from .snch import (BoundarySample, SnchTree, build_snch, distance_dirichlet,
                   has_silhouette, intersect_neumann, is_silhouette,
                   sample_neumann_point, silhouette_distance_neumann)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig", "BoundaryMesh", "BoundarySample", "CSV_HEADER",
    "ConstantSpec", "ESCAPE_RADIUS_FACTOR", "EstimateResult",
    "EstimatorConfig", "EvaluationPlan", "GridSpec", "KernelContext",
    "MeshError", "PolynomialSpec", "Scene", "SceneConfig", "SceneParseError",
    "SceneValidationError", "SnchTree", "StarRegion", "StepTerminal",
    "TERMINAL_DIRICHLET", "TERMINAL_ESCAPED", "TERMINAL_KINDS",
    "TERMINAL_ROULETTE", "TERMINAL_STEP_CAP", "WalkOutcome", "WalkState",
    "build_scene", "build_snch", "distance_dirichlet", "estimate",
    "evaluate_bc", "greens_ball", "greens_ball_norm", "greens_ball_ratio",
    "greens_free", "has_silhouette", "intersect_neumann", "is_silhouette",
    "load_mesh", "load_scene", "make_grid_slice", "neumann_contribution",
    "pure_neumann_regularization", "q_factor", "random_intersection_estimate",
    "read_pfm", "read_reference", "run_baseline_walks", "run_walk",
    "sample_greens_radius", "sample_hemisphere_direction",
    "sample_neumann_point", "sample_unit_direction", "serialize_scene",
    "silhouette_distance_neumann", "star_region", "walk_rng", "wos_dirichlet",
    "wos_reflect", "wost_step", "wost_step_double_sided", "write_results",
    "sde_walk",
]
