"""Reference estimators the star-region walk is compared against.

Four methods, in decreasing order of faithfulness to the PDE:

* ``wos_dirichlet`` — classic walk-on-spheres for pure-Dirichlet scenes.
  Written as an independent loop (not a delegation) so the test suite can
  verify that the star-region walk reduces to it bit-for-bit when no
  reflecting boundary exists.
* ``wos_reflect`` — walk-on-spheres over the full boundary with discrete
  reflections: entering the reflecting eps-shell adds zeta*h(closest) and
  restarts the walk a fixed offset zeta inside the domain. Biased for any
  fixed zeta.
* ``sde_walk`` — Euler–Maruyama diffusion with projection reflections and
  the half-normal local-time weight sqrt(pi*l/2) per projection. Biased and
  slow; kept for qualitative comparisons.
* ``random_intersection_estimate`` — the "pick one of all ray crossings"
  variant of the star-region step. Its throughput is multiplied by the
  crossing count and the kernel sign at each jump, which is exactly the
  mechanism that makes its variance explode on non-convex reflecting
  geometry.

Sign conventions follow `estimator`: h = du/dn with n the outward unit
normal, source on the right-hand side of (Laplacian - sigma) u = f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import (TERMINAL_DIRICHLET, TERMINAL_ESCAPED, TERMINAL_KINDS,
                        TERMINAL_STEP_CAP, EstimateResult, WalkOutcome,
                        _escaped, walk_rng)
from .kernels import (KernelContext, greens_ball, greens_ball_ratio, q_factor,
                      sample_greens_radius, sample_hemisphere_direction,
                      sample_unit_direction)


@dataclass(frozen=True)
class BaselineConfig:
    """Shared knobs for the reference estimators.

    `zeta` is the reflection restart offset of wos_reflect and must exceed
    the eps-shell width so a reflected walk cannot terminate in place;
    `sde_step` is the Euler–Maruyama time increment (positions move by
    sqrt(sde_step) per coordinate draw).
    """

    epsilon: float
    zeta: float = 0.0
    sde_step: float = 0.0
    max_steps: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")
        if self.zeta != 0.0 and not self.zeta > self.epsilon:
            raise ValueError("zeta must be > epsilon")
        if self.sde_step < 0.0:
            raise ValueError("sde_step must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be a positive integer")


def _source_term(scene, x, r, direction, hit_t, rng) -> float:
    """Single-sample ball source integral; mirrors the star-region walk's
    draw order and arithmetic exactly (needed for the reduction test)."""
    if scene.source_is_zero:
        return 0.0
    ctx = KernelContext(scene.dimension, r, scene.sigma)
    t = sample_greens_radius(ctx, rng)
    if not t < hit_t:
        return 0.0
    y = x + t * direction
    norm0 = r * r / 4.0 if scene.dimension == 2 else r * r / 6.0
    return norm0 * greens_ball_ratio(ctx, t) * scene.source_value(y)


def wos_dirichlet(scene, x, config: BaselineConfig, rng: np.random.Generator,
                  trajectory=None) -> WalkOutcome:
    """Classic walk-on-spheres; requires a pure-Dirichlet scene."""
    if not scene.neumann_tree.is_empty:
        raise ValueError("wos_dirichlet requires a scene without Neumann "
                         "boundary elements")
    x = np.asarray(x, dtype=np.float64).copy()
    throughput = 1.0
    accum = 0.0
    steps = 0
    while True:
        if trajectory is not None:
            trajectory.append(x.copy())
        if steps >= config.max_steps:
            return WalkOutcome(accum, steps, TERMINAL_STEP_CAP)
        res = scene.dirichlet_tree.closest_point(x)
        if res[0] < config.epsilon:
            g = scene.dirichlet_value(res[1], 1)
            return WalkOutcome(accum + throughput * g, steps, TERMINAL_DIRICHLET)
        if _escaped(scene, x):
            return WalkOutcome(accum, steps, TERMINAL_ESCAPED)
        r = res[0]
        v = sample_unit_direction(scene.dimension, rng)
        accum -= throughput * _source_term(scene, x, r, v, r, rng)
        if scene.sigma > 0.0:
            throughput *= q_factor(KernelContext(scene.dimension, r, scene.sigma), r)
        x = x + r * v
        steps += 1


def wos_reflect(scene, x, config: BaselineConfig, rng: np.random.Generator) -> WalkOutcome:
    """Walk-on-spheres over the full boundary with offset reflections.

    The empty ball is bounded by the distance to the *whole* boundary, so
    walks crawl once they come near the reflecting part; each entry into its
    eps-shell books zeta*h(closest) and restarts zeta inward from the
    closest point. The zeta > epsilon invariant guarantees the restart point
    is outside the shell.
    """
    if config.zeta <= config.epsilon:
        raise ValueError("wos_reflect requires zeta > epsilon")
    x = np.asarray(x, dtype=np.float64).copy()
    throughput = 1.0
    accum = 0.0
    steps = 0
    while True:
        if steps >= config.max_steps:
            return WalkOutcome(accum, steps, TERMINAL_STEP_CAP)
        res_d = scene.dirichlet_tree.closest_point(x)
        d_dir = res_d[0] if res_d is not None else math.inf
        if d_dir < config.epsilon:
            g = scene.dirichlet_value(res_d[1], 1)
            return WalkOutcome(accum + throughput * g, steps, TERMINAL_DIRICHLET)
        if _escaped(scene, x):
            return WalkOutcome(accum, steps, TERMINAL_ESCAPED)
        res_n = scene.neumann_tree.closest_point(x)
        d_neu = res_n[0] if res_n is not None else math.inf
        if d_neu < config.epsilon:
            # Reflection: book the one-sided difference quotient and restart
            # inside the domain.
            point, elem = res_n[1], res_n[2]
            accum += throughput * config.zeta * scene.neumann_value(point, 1)
            x = point - config.zeta * scene.neumann_tree.mesh.normals[elem]
            steps += 1
            continue
        r = min(d_dir, d_neu)
        v = sample_unit_direction(scene.dimension, rng)
        accum -= throughput * _source_term(scene, x, r, v, r, rng)
        if scene.sigma > 0.0:
            throughput *= q_factor(KernelContext(scene.dimension, r, scene.sigma), r)
        x = x + r * v
        steps += 1


def sde_walk(scene, x, config: BaselineConfig, rng: np.random.Generator) -> WalkOutcome:
    """Euler–Maruyama diffusion with projection reflections.

    Each step proposes x + sqrt(l)*xi. A proposal whose segment first
    crosses the absorbing boundary terminates there; one that first crosses
    the reflecting boundary is projected to the closest reflecting point and
    books sqrt(pi*l/2)*h there (the mean half-normal excursion, i.e. the
    local time accrued by one boundary visit). Sources integrate along the
    time discretization: the walk clock advances l/2 per step for a
    generator-Laplacian diffusion, so each step books -(l/2)*f(x) and
    screened problems attenuate by exp(-sigma*l/2).
    """
    if config.sde_step <= 0.0:
        raise ValueError("sde_walk requires sde_step > 0")
    dim = scene.dimension
    l = config.sde_step
    h_weight = math.sqrt(math.pi * l / 2.0)
    x = np.asarray(x, dtype=np.float64).copy()
    throughput = 1.0
    accum = 0.0
    steps = 0
    # Outward normal of the reflecting element the walker currently sits on
    # (projection lands *exactly* on the wall), or None when interior.
    wall_normal = None
    while True:
        if steps >= config.max_steps:
            return WalkOutcome(accum, steps, TERMINAL_STEP_CAP)
        res_d = scene.dirichlet_tree.closest_point(x)
        if res_d is not None and res_d[0] < config.epsilon:
            g = scene.dirichlet_value(res_d[1], 1)
            return WalkOutcome(accum + throughput * g, steps, TERMINAL_DIRICHLET)
        if _escaped(scene, x):
            return WalkOutcome(accum, steps, TERMINAL_ESCAPED)
        if not scene.source_is_zero:
            accum -= throughput * (l / 2.0) * scene.source_value(x)
        if scene.sigma > 0.0:
            throughput *= math.exp(-scene.sigma * l / 2.0)
        prop = x + math.sqrt(l) * rng.standard_normal(dim)
        seg = prop - x
        if wall_normal is not None and float(seg @ wall_normal) > 0.0:
            # The proposal leaves through the wall under the walker's feet.
            # That crossing sits at t = 0 where the ray tests are blind, so
            # handle it directly: another boundary visit, not a leak.
            res_n = scene.neumann_tree.closest_point(prop)
            point, elem = res_n[1], res_n[2]
            accum += throughput * h_weight * scene.neumann_value(point, 1)
            x = point.copy()
            wall_normal = scene.neumann_tree.mesh.normals[elem]
            steps += 1
            continue
        hit_d = scene.dirichlet_tree.intersect(x, seg, t_max=1.0)
        hit_n = scene.neumann_tree.intersect(x, seg, t_max=1.0)
        if hit_d is not None and (hit_n is None or hit_d.t <= hit_n.t):
            g = scene.dirichlet_value(hit_d.point, 1)
            return WalkOutcome(accum + throughput * g, steps + 1,
                               TERMINAL_DIRICHLET)
        if hit_n is not None:
            res_n = scene.neumann_tree.closest_point(prop)
            point, elem = res_n[1], res_n[2]
            accum += throughput * h_weight * scene.neumann_value(point, 1)
            x = point.copy()
            wall_normal = scene.neumann_tree.mesh.normals[elem]
        else:
            x = prop
            wall_normal = None
        steps += 1


def random_intersection_estimate(scene, x, config: BaselineConfig,
                                 rng: np.random.Generator) -> WalkOutcome:
    """Star-region walk variant that jumps to one of *all* ray crossings.

    Instead of stopping at the first reflecting-boundary hit inside the
    largest Dirichlet-ball, the ray is traced through every crossing within
    the ball; the sphere exit point joins the candidate list whenever the
    crossing count is even (watertight boundary: even means the exit point
    is still inside the domain). One candidate is chosen uniformly and the
    throughput is multiplied by the candidate count and by the sign of
    n·direction at the chosen point — the signed-kernel bookkeeping that
    makes this estimator's variance blow up on non-convex geometry.

    Because the full crossing list already accounts for hidden boundary
    sheets, the reflecting-data sample uses no occlusion test, and source
    samples are kept only when an even number of crossings precedes them.
    """
    x = np.asarray(x, dtype=np.float64).copy()
    ntree = scene.neumann_tree
    throughput = 1.0
    accum = 0.0
    steps = 0
    on_neumann = False
    normal = None
    while True:
        if steps >= config.max_steps:
            return WalkOutcome(accum, steps, TERMINAL_STEP_CAP)
        res_d = scene.dirichlet_tree.closest_point(x)
        d_dir = res_d[0] if res_d is not None else math.inf
        if d_dir < config.epsilon:
            g = scene.dirichlet_value(res_d[1], 1)
            return WalkOutcome(accum + throughput * g, steps, TERMINAL_DIRICHLET)
        if _escaped(scene, x):
            return WalkOutcome(accum, steps, TERMINAL_ESCAPED)
        r = d_dir if math.isfinite(d_dir) else 2.0 * scene.bounding_radius
        if on_neumann:
            v = sample_hemisphere_direction(scene.dimension, -normal, rng)
            alpha = 0.5
        else:
            v = sample_unit_direction(scene.dimension, rng)
            alpha = 1.0
        hits = ntree.intersect_all(x, v, t_max=r)
        hits = [h for h in hits if h.t < r]
        include_sphere = len(hits) % 2 == 0
        count = len(hits) + (1 if include_sphere else 0)
        if count > 1:
            pick = int(rng.integers(count))
        else:
            pick = 0

        n_hat = 0.0
        if not ntree.is_empty and not scene.neumann_data_is_zero:
            samp = ntree.sample_point(x, r, rng)
            if samp is not None and samp.pdf > 0.0:
                d = samp.point - x
                dist = math.sqrt(float(d @ d))
                if dist < r:
                    ctx = KernelContext(scene.dimension, r, scene.sigma)
                    h = scene.neumann_value(samp.point, 1)
                    n_hat = greens_ball(ctx, dist) * h / (alpha * samp.pdf)
        s_hat = 0.0
        if not scene.source_is_zero:
            ctx = KernelContext(scene.dimension, r, scene.sigma)
            t = sample_greens_radius(ctx, rng)
            crossings = sum(1 for h in hits if h.t < t)
            if crossings % 2 == 0:
                y = x + t * v
                norm0 = r * r / 4.0 if scene.dimension == 2 else r * r / 6.0
                s_hat = norm0 * greens_ball_ratio(ctx, t) * scene.source_value(y)
        accum += throughput * (n_hat - s_hat)

        if pick < len(hits):
            hit = hits[pick]
            sign = 1.0 if float(hit.normal @ v) > 0.0 else -1.0
            jump_t = hit.t
            x = hit.point
            on_neumann = True
            normal = hit.normal
        else:
            sign = 1.0
            jump_t = r
            x = x + r * v
            on_neumann = False
            normal = None
        throughput *= count * sign
        if scene.sigma > 0.0:
            throughput *= q_factor(KernelContext(scene.dimension, r, scene.sigma),
                                   jump_t)
        steps += 1


def run_baseline_walks(walk_fn, scene, x, n_walks: int, config: BaselineConfig,
                       point_index: int = 0) -> EstimateResult:
    """Average n_walks of one baseline with the shared substream layout."""
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    values = np.empty(n_walks)
    steps = np.empty(n_walks)
    hist = {k: 0 for k in TERMINAL_KINDS}
    for w in range(n_walks):
        out = walk_fn(scene, x, config, walk_rng(config.seed, point_index, w))
        values[w] = out.value
        steps[w] = out.steps
        hist[out.terminal] += 1
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n_walks)) if n_walks > 1 else 0.0
    return EstimateResult(mean=mean, stderr=stderr, mean_steps=float(steps.mean()),
                          terminal_histogram=hist, clamp_rate=0.0,
                          escaped_rate=hist[TERMINAL_ESCAPED] / n_walks,
                          n_walks=n_walks, values=values)
