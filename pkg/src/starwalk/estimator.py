"""Star-region random-walk estimator for mixed Dirichlet/Neumann problems.

A walk repeatedly jumps within the largest region around the current point
that is star-shaped with respect to it: the minimum of the distance to the
absorbing (Dirichlet) boundary and the distance to the nearest visibility
silhouette on the reflecting (Neumann) boundary, floored at r_min. The next
location is the first reflecting-boundary hit along a sampled direction, or
the sphere point when nothing is hit. Each step adds a reflecting-data term
and a volume source term to a running accumulator; walks end in the
absorbing eps-shell (or by roulette/step cap/escape).

Sign convention: with outward normals, h = du/dn on the reflecting boundary,
and the positive ball kernels from `kernels`, the boundary-integral identity
is alpha*u = integral(P*u) + integral(G*h) - integral(G*f). The per-step
update therefore *adds* the h-term and *subtracts* the source term; this is
checked against closed-form solutions in the tests (one-dimensional slab,
quadratic source, screened ball).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .kernels import (KernelContext, greens_ball, greens_ball_ratio, q_factor,
                      sample_greens_radius, sample_hemisphere_direction,
                      sample_unit_direction)

# Walks farther than this multiple of the scene bounding radius from the
# bounding center are treated as lost to infinity (open/double-sided scenes).
ESCAPE_RADIUS_FACTOR = 2.0

TERMINAL_DIRICHLET = "dirichlet_shell"
TERMINAL_ROULETTE = "roulette_killed"
TERMINAL_STEP_CAP = "step_cap_hit"
TERMINAL_ESCAPED = "escaped"
TERMINAL_KINDS = (TERMINAL_DIRICHLET, TERMINAL_ROULETTE, TERMINAL_STEP_CAP,
                  TERMINAL_ESCAPED)

_KEY_MIX = 0x9E3779B97F4A7C15  # odd multiplier decorrelates per-point streams
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EstimatorConfig:
    """Walk parameters. Lengths are in world units of the scene."""

    epsilon: float
    r_min: float
    max_steps: int = 10_000
    tikhonov_sigma: float = 0.0
    regularize_after: int = 0
    normal_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")
        if not self.r_min > 0.0:
            raise ValueError("r_min must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be a positive integer")
        if self.tikhonov_sigma < 0.0:
            raise ValueError("tikhonov_sigma must be >= 0")
        if not 0 <= self.regularize_after <= self.max_steps:
            raise ValueError("regularize_after must lie in [0, max_steps]")
        if self.normal_offset < 0.0:
            raise ValueError("normal_offset must be >= 0")


@dataclass
class WalkState:
    """Mutable per-walk state.

    `normal` is the outward unit normal of the element the walk sits on and
    is meaningful only when on_neumann. `prev_direction` is the unit
    direction of the last jump (used to pick boundary sides in double-sided
    mode). `clamped_steps` counts steps where r_min was binding.
    """

    position: np.ndarray
    normal: Optional[np.ndarray]
    on_neumann: bool
    steps: int
    throughput: float
    accumulator: float
    prev_direction: Optional[np.ndarray]
    clamped_steps: int = 0


@dataclass(frozen=True)
class StarRegion:
    center: np.ndarray
    radius: float
    d_dirichlet: float
    d_silhouette: float
    clamped: bool


class StepTerminal(NamedTuple):
    """Returned by a step function when the walk ends."""

    value: float
    terminal: str


@dataclass(frozen=True)
class WalkOutcome:
    value: float
    steps: int
    terminal: str
    clamped_steps: int = 0


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    stderr: float
    mean_steps: float
    terminal_histogram: dict
    clamp_rate: float
    escaped_rate: float
    n_walks: int
    values: np.ndarray = field(repr=False, default=None)


def walk_rng(seed: int, point_index: int, walk_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one walk of one evaluation point.

    Streams are counter-based, so results do not depend on how points or
    walks are distributed over workers.
    """
    key = np.array([(seed + _KEY_MIX * point_index) & _MASK64, walk_index],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# -- star region --------------------------------------------------------------


def star_region(scene, x, config: EstimatorConfig) -> StarRegion:
    """Largest safe jump region around x (see module docstring)."""
    x = np.asarray(x, dtype=np.float64)
    d_dir = math.inf
    res = scene.dirichlet_tree.closest_point(x)
    if res is not None:
        d_dir = res[0]
    return _star_from(scene, x, d_dir, config)


def _star_from(scene, x, d_dir: float, config: EstimatorConfig) -> StarRegion:
    d_sil, _ = scene.neumann_tree.silhouette_distance(x, r_max=d_dir)
    raw = min(d_dir, d_sil)
    if math.isinf(raw):
        # Dirichlet-free star with no silhouette in sight (e.g. inside a convex
        # reflecting cavity): bound the jump by the scene's bounding diameter.
        raw = 2.0 * scene.bounding_radius
    clamped = raw < config.r_min
    return StarRegion(center=x, radius=max(config.r_min, raw), d_dirichlet=d_dir,
                      d_silhouette=d_sil, clamped=clamped)


def _effective_sigma(scene, steps: int, config: EstimatorConfig):
    """(sigma for this step, whether the Q-factor acts as roulette survival)."""
    if scene.sigma > 0.0:
        return scene.sigma, False
    if scene.pure_neumann and config.tikhonov_sigma > 0.0:
        if steps >= config.regularize_after:
            return config.tikhonov_sigma, True
    return 0.0, False


def pure_neumann_regularization(state: WalkState, config: EstimatorConfig) -> float:
    """Added absorption for the current step of a Dirichlet-free walk."""
    if config.tikhonov_sigma > 0.0 and state.steps >= config.regularize_after:
        return config.tikhonov_sigma
    return 0.0


# -- per-step contribution terms ----------------------------------------------


def neumann_contribution(scene, region: StarRegion, state: WalkState,
                         config: EstimatorConfig, rng: np.random.Generator) -> float:
    """One-sample estimate of the reflecting-data integral over the region.

    Draws a boundary point z near the region center, rejects it when it lies
    outside the ball or the open segment x->z is blocked by the reflecting
    boundary (max ray parameter 1 - 1e-6 in units of |z - x|), and otherwise
    returns G(|z-x|) h(z) / (alpha pdf) with alpha = 1/2 on the boundary.

    Scenes whose reflecting data is identically zero skip the draw entirely.
    """
    tree = scene.neumann_tree
    if tree.is_empty or scene.neumann_data_is_zero:
        return 0.0
    x = region.center
    samp = tree.sample_point(x, region.radius, rng)
    if samp is None or samp.pdf <= 0.0:
        return 0.0
    d = samp.point - x
    dist = math.sqrt(float(d @ d))
    if not dist < region.radius:
        return 0.0
    if tree.intersect(x, d, t_max=1.0 - 1e-6) is not None:
        return 0.0
    sigma_eff, _ = _effective_sigma(scene, state.steps, config)
    ctx = KernelContext(scene.dimension, region.radius, sigma_eff)
    alpha = 0.5 if state.on_neumann else 1.0
    side = 1
    if scene.double_sided:
        if state.on_neumann:
            side = 1 if _flip_normal(state) else -1
        else:
            side = 1 if float(d @ samp.normal) > 0.0 else -1
    h = scene.neumann_value(samp.point, side)
    if h == 0.0:
        return 0.0
    return greens_ball(ctx, dist) * h / (alpha * samp.pdf)


def source_contribution(scene, region: StarRegion, state: WalkState,
                        direction: np.ndarray, hit_t: float,
                        config: EstimatorConfig, rng: np.random.Generator) -> float:
    """One-sample estimate of the volume-source integral over the region.

    Reuses the jump direction; only the radius is drawn, proportional to the
    unscreened radial Green's profile, and samples past the realized hit
    distance are rejected (they fall outside the star). Screened contexts
    reweight by the screened-to-unscreened kernel ratio at the drawn radius.
    Scenes with a zero source skip the draw entirely.
    """
    if scene.source_is_zero:
        return 0.0
    sigma_eff, _ = _effective_sigma(scene, state.steps, config)
    ctx = KernelContext(scene.dimension, region.radius, sigma_eff)
    t = sample_greens_radius(ctx, rng)
    if not t < hit_t:
        return 0.0
    y = region.center + t * direction
    r2 = region.radius * region.radius
    norm0 = r2 / 4.0 if scene.dimension == 2 else r2 / 6.0
    return norm0 * greens_ball_ratio(ctx, t) * scene.source_value(y)


# -- the step ------------------------------------------------------------------


def _flip_normal(state: WalkState) -> bool:
    """Double-sided rule: was the boundary approached from its back side?"""
    return float(state.prev_direction @ state.normal) < 0.0


def _escaped(scene, x: np.ndarray) -> bool:
    d = x - scene.bounding_center
    return math.sqrt(float(d @ d)) > ESCAPE_RADIUS_FACTOR * scene.bounding_radius


def _step(scene, state: WalkState, config: EstimatorConfig,
          rng: np.random.Generator, double_sided: bool):
    x = state.position

    # Absorption shell.
    res = scene.dirichlet_tree.closest_point(x)
    if res is not None and res[0] < config.epsilon:
        d_dir, closest, elem = res
        side = 1
        if double_sided:
            n_plus = scene.dirichlet_tree.mesh.normals[elem]
            side = 1 if float(state.prev_direction @ n_plus) > 0.0 else -1
        g = scene.dirichlet_value(closest, side)
        return StepTerminal(state.accumulator + state.throughput * g,
                            TERMINAL_DIRICHLET)
    d_dir = res[0] if res is not None else math.inf

    if _escaped(scene, x):
        return StepTerminal(state.accumulator, TERMINAL_ESCAPED)

    region = _star_from(scene, x, d_dir, config)
    r = region.radius

    # Jump direction; on the reflecting boundary sample the inward hemisphere,
    # which cancels the boundary factor alpha = 1/2 in the recursive term.
    if state.on_neumann:
        n_eff = state.normal
        if double_sided and _flip_normal(state):
            n_eff = -n_eff
        v = sample_hemisphere_direction(scene.dimension, -n_eff, rng)
        origin = x - config.normal_offset * n_eff
    else:
        v = sample_unit_direction(scene.dimension, rng)
        origin = x

    hit = scene.neumann_tree.intersect(origin, v, t_max=r)
    if hit is not None:
        x_next = hit.point
        hit_t = hit.t
        next_on_neumann = True
        next_normal = hit.normal
    else:
        x_next = x + r * v
        hit_t = r
        next_on_neumann = False
        next_normal = None

    n_hat = neumann_contribution(scene, region, state, config, rng)
    s_hat = source_contribution(scene, region, state, v, hit_t, config, rng)
    accum = state.accumulator + state.throughput * (n_hat - s_hat)

    throughput = state.throughput
    sigma_eff, roulette = _effective_sigma(scene, state.steps, config)
    if sigma_eff > 0.0:
        q = q_factor(KernelContext(scene.dimension, r, sigma_eff), hit_t)
        if roulette:
            # Stochastic termination with survival probability q replaces the
            # multiplicative weight, so throughput stays put on survival.
            if rng.random() >= q:
                return StepTerminal(accum, TERMINAL_ROULETTE)
        else:
            throughput = throughput * q

    return WalkState(position=x_next, normal=next_normal,
                     on_neumann=next_on_neumann, steps=state.steps + 1,
                     throughput=throughput, accumulator=accum,
                     prev_direction=v,
                     clamped_steps=state.clamped_steps + (1 if region.clamped else 0))


def wost_step(scene, state: WalkState, config: EstimatorConfig,
              rng: np.random.Generator):
    """Advance one step; returns the next WalkState or a StepTerminal."""
    return _step(scene, state, config, rng, double_sided=False)


def wost_step_double_sided(scene, state: WalkState, config: EstimatorConfig,
                           rng: np.random.Generator):
    """Step variant for open/double-sided boundaries.

    The walk's approach direction picks which side's data applies: g+/g- at
    absorption, the hemisphere side on the reflecting boundary, and h+/h-
    for boundary samples. Requires state.prev_direction to be set.
    """
    return _step(scene, state, config, rng, double_sided=True)


# -- whole walks -----------------------------------------------------------------


def _initial_state(scene, x0: np.ndarray, config: EstimatorConfig) -> WalkState:
    prev = None
    if scene.double_sided:
        # Default approach direction: the boundary normal when starting on the
        # boundary, otherwise the direction toward the closest boundary point.
        best = None
        for tree in (scene.dirichlet_tree, scene.neumann_tree):
            res = tree.closest_point(x0)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], tree.mesh.normals[res[2]])
        if best is None:
            prev = np.zeros(scene.dimension)
            prev[0] = 1.0
        elif best[0] < config.epsilon:
            prev = best[2].copy()
        else:
            prev = (best[1] - x0) / best[0]
    return WalkState(position=np.asarray(x0, dtype=np.float64).copy(), normal=None,
                     on_neumann=False, steps=0, throughput=1.0, accumulator=0.0,
                     prev_direction=prev)


def run_walk(scene, x0, config: EstimatorConfig, rng: np.random.Generator,
             trajectory: Optional[list] = None) -> WalkOutcome:
    """Run one complete walk from x0; optionally record visited positions."""
    state = _initial_state(scene, x0, config)
    step_fn = wost_step_double_sided if scene.double_sided else wost_step
    while True:
        if trajectory is not None:
            trajectory.append(state.position.copy())
        if state.steps >= config.max_steps:
            return WalkOutcome(state.accumulator, state.steps, TERMINAL_STEP_CAP,
                               state.clamped_steps)
        out = step_fn(scene, state, config, rng)
        if isinstance(out, StepTerminal):
            return WalkOutcome(out.value, state.steps, out.terminal,
                               state.clamped_steps)
        state = out


def estimate(scene, x, n_walks: int, config: EstimatorConfig,
             point_index: int = 0) -> EstimateResult:
    """Average n_walks independent walks started at x.

    Walk w uses the substream (config.seed, point_index, w), so estimates are
    reproducible and independent of how work is scheduled.
    """
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    values = np.empty(n_walks)
    steps = np.empty(n_walks)
    hist = {k: 0 for k in TERMINAL_KINDS}
    clamped = 0
    total_steps = 0
    for w in range(n_walks):
        out = run_walk(scene, x, config, walk_rng(config.seed, point_index, w))
        values[w] = out.value
        steps[w] = out.steps
        hist[out.terminal] += 1
        clamped += out.clamped_steps
        total_steps += out.steps
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n_walks)) if n_walks > 1 else 0.0
    return EstimateResult(
        mean=mean, stderr=stderr, mean_steps=float(steps.mean()),
        terminal_histogram=hist,
        clamp_rate=(clamped / total_steps) if total_steps else 0.0,
        escaped_rate=hist[TERMINAL_ESCAPED] / n_walks,
        n_walks=n_walks, values=values)
