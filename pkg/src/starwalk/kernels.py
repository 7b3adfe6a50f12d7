"""Green's functions, Poisson-kernel weights, and samplers for balls.

Everything is parameterized by a KernelContext: spatial dimension (2 or 3),
ball radius R, and screening coefficient sigma (sigma = 0 recovers the plain
Poisson equation). Screened expressions use exponentially scaled Bessel
functions and expm1 so they stay finite and accurate for large sqrt(sigma)*R;
the sigma -> 0 limits match the unscreened formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import i0e, i1e, k0e, k1e

_TWO_PI = 2.0 * math.pi
_FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class KernelContext:
    """Ball of radius R in `dimension` dims, with screening sigma >= 0."""

    dimension: int
    R: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if not (self.R > 0.0 and math.isfinite(self.R)):
            raise ValueError(f"ball radius must be positive and finite, got {self.R}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"screening must be finite and >= 0, got {self.sigma}")


def _expm1_neg(x: float) -> float:
    """1 - exp(-x) for x >= 0, accurate near zero."""
    return -math.expm1(-x)


# -- free space --------------------------------------------------------------


def greens_free(dimension: int, r: float, sigma: float = 0.0) -> float:
    """Whole-space Green's function at separation r."""
    if r <= 0.0:
        return math.inf
    if dimension == 2:
        if sigma == 0.0:
            return math.log(r) / _TWO_PI
        z = r * math.sqrt(sigma)
        return float(k0e(z)) * math.exp(-z) / _TWO_PI
    if sigma == 0.0:
        return 1.0 / (_FOUR_PI * r)
    z = r * math.sqrt(sigma)
    return math.exp(-z) / (_FOUR_PI * r)


def free_space_poisson_kernel(dimension: int, x, y, n_y, sigma: float = 0.0) -> float:
    """Normal derivative of the whole-space Green's function at y.

    Positive when n_y points away from x. With screening the unscreened value
    is attenuated by r*sqrt(sigma)*K1 (2D) or exp(-r*sqrt(sigma))*(1 + r*sqrt(sigma)) (3D).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_y = np.asarray(n_y, dtype=np.float64)
    d = y - x
    r = math.sqrt(float(d @ d))
    if r == 0.0:
        return math.inf
    cos_term = float(n_y @ d)
    if dimension == 2:
        base = cos_term / (_TWO_PI * r * r)
    else:
        base = cos_term / (_FOUR_PI * r * r * r)
    if sigma == 0.0:
        return base
    z = r * math.sqrt(sigma)
    if dimension == 2:
        atten = z * float(k1e(z)) * math.exp(-z)
    else:
        atten = math.exp(-z) * (1.0 + z)
    return base * atten


# -- ball --------------------------------------------------------------------


def greens_ball(ctx: KernelContext, r: float) -> float:
    """Green's function of the ball, zero on its boundary, at separation r.

    Returns +inf at r = 0 (the kernel is singular there) and 0 for r >= R.
    """
    R = ctx.R
    if r <= 0.0:
        return math.inf
    if r >= R:
        return 0.0
    if ctx.sigma == 0.0:
        if ctx.dimension == 2:
            return math.log(R / r) / _TWO_PI
        return (1.0 / r - 1.0 / R) / _FOUR_PI
    rt = math.sqrt(ctx.sigma)
    z, big_z = r * rt, R * rt
    if ctx.dimension == 2:
        # exp(-z) * (k0e(z) - i0e(z) * k0e(Z)/i0e(Z) * exp(2z - 2Z)); exponents <= 0
        return (math.exp(-z) / _TWO_PI) * (
            float(k0e(z))
            - float(i0e(z)) * (float(k0e(big_z)) / float(i0e(big_z)))
            * math.exp(2.0 * (z - big_z)))
    # sinh(Z - z)/sinh(Z) written with non-positive exponents only
    a = big_z - z
    ratio = math.exp(-z) * _expm1_neg(2.0 * a) / _expm1_neg(2.0 * big_z)
    return ratio / (_FOUR_PI * r)


def greens_ball_norm(ctx: KernelContext) -> float:
    """Integral of greens_ball over the whole ball."""
    R = ctx.R
    if ctx.sigma == 0.0:
        return R * R / 4.0 if ctx.dimension == 2 else R * R / 6.0
    big_z = R * math.sqrt(ctx.sigma)
    if ctx.dimension == 2:
        inv_i0 = math.exp(-big_z) / float(i0e(big_z))
        return (1.0 - inv_i0) / ctx.sigma
    # Z / sinh(Z) = 2 Z exp(-Z) / (1 - exp(-2Z))
    z_over_sinh = 2.0 * big_z * math.exp(-big_z) / _expm1_neg(2.0 * big_z)
    return (1.0 - z_over_sinh) / ctx.sigma


def greens_ball_ratio(ctx: KernelContext, r: float) -> float:
    """greens_ball(sigma) / greens_ball(sigma=0) at separation r in (0, R).

    Lies in (0, 1], tends to 1 as r -> 0 or sigma -> 0, and stays finite at
    r -> R where numerator and denominator vanish together. Used to reweight
    source samples drawn from the unscreened radial profile.
    """
    if ctx.sigma == 0.0:
        return 1.0
    R = ctx.R
    r = min(max(r, 0.0), R)
    rt = math.sqrt(ctx.sigma)
    z, big_z = r * rt, R * rt
    if ctx.dimension == 3:
        a = big_z - z  # sinh(a)/sinh(Z) * R/(R - r), series for small a
        if a < 1e-8:
            # (1 - e^{-2a})/(R - r) = 2 sqrt(sigma) (1 - a + O(a^2))
            return 2.0 * rt * R * math.exp(a - big_z) * (1.0 - a) / _expm1_neg(2.0 * big_z)
        return (math.exp(a - big_z) * _expm1_neg(2.0 * a) / _expm1_neg(2.0 * big_z)
                * R / (R - r))
    if R - r < 1e-6 * R:
        # l'Hopital limit: R*sqrt(sigma) * (K1 + I1*K0(Z)/I0(Z)) at Z
        return big_z * (float(k1e(big_z)) * math.exp(-big_z)
                        + float(i1e(big_z)) * (float(k0e(big_z)) / float(i0e(big_z)))
                        * math.exp(-big_z))
    num = math.exp(-z) * (float(k0e(z))
                          - float(i0e(z)) * (float(k0e(big_z)) / float(i0e(big_z)))
                          * math.exp(2.0 * (z - big_z)))
    return num / math.log(R / r)


def q_factor(ctx: KernelContext, r: float) -> float:
    """Screening attenuation Q for a step of length r inside the ball.

    Ratio of the screened to unscreened Poisson kernel; equals 1 when
    sigma = 0 and lies in [0, 1) for sigma > 0. Doubles as a per-step
    survival probability when walks are terminated stochastically.
    """
    if ctx.sigma == 0.0:
        return 1.0
    rt = math.sqrt(ctx.sigma)
    z, big_z = r * rt, ctx.R * rt
    if ctx.dimension == 2:
        if z < 1e-12:
            return 1.0  # z*K1(z) -> 1, image term -> 0
        return z * (float(k1e(z)) * math.exp(-z)
                    + float(i1e(z)) * (float(k0e(big_z)) / float(i0e(big_z)))
                    * math.exp(z - 2.0 * big_z))
    direct = math.exp(-z) * (1.0 + z)
    # image term (z cosh z - sinh z) e^{-Z}/sinh Z, rewritten with exponents <= 0:
    #   = [(z-1) + (z+1) e^{-2z}] e^{z-2Z} / (1 - e^{-2Z});
    # the bracket cancels to z^3/3 + O(z^5) for small z, so switch to the series.
    if z < 1e-3:
        image = (z ** 3 / 3.0) * (1.0 + z * z / 10.0) * 2.0 * math.exp(-2.0 * big_z) \
            / _expm1_neg(2.0 * big_z)
    else:
        image = ((z - 1.0) + (z + 1.0) * math.exp(-2.0 * z)) \
            * math.exp(z - 2.0 * big_z) / _expm1_neg(2.0 * big_z)
    return direct + image


def poisson_kernel_ball_boundary(ctx: KernelContext) -> float:
    """Poisson kernel density on the ball boundary (constant over the sphere).

    Unscreened this is 1/(2 pi R) in 2D and 1/(4 pi R^2) in 3D; screening
    multiplies it by q_factor at r = R, so it integrates to less than one.
    """
    if ctx.dimension == 2:
        base = 1.0 / (_TWO_PI * ctx.R)
    else:
        base = 1.0 / (_FOUR_PI * ctx.R * ctx.R)
    return base * q_factor(ctx, ctx.R)


# -- sampling ----------------------------------------------------------------


def sample_unit_direction(dimension: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit circle (1 draw) or sphere (2 draws)."""
    if dimension == 2:
        th = _TWO_PI * rng.random()
        return np.array([math.cos(th), math.sin(th)])
    z = 1.0 - 2.0 * rng.random()
    phi = _TWO_PI * rng.random()
    s = math.sqrt(max(0.0, 1.0 - z * z))
    return np.array([s * math.cos(phi), s * math.sin(phi), z])


def sample_hemisphere_direction(dimension: int, axis, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction in the hemisphere around `axis` (same draws as above)."""
    v = sample_unit_direction(dimension, rng)
    if float(v @ np.asarray(axis, dtype=np.float64)) < 0.0:
        v = -v
    return v


def _invert_radial_cdf_3d(u: float) -> float:
    """Solve s^2 (3 - 2 s) = u on [0, 1] (Newton with a bisection bracket)."""
    a, b = 0.0, 1.0
    s = 0.5
    for _ in range(100):
        v = s * s * (3.0 - 2.0 * s) - u
        if v > 0.0:
            b = s
        else:
            a = s
        d = 6.0 * s * (1.0 - s)
        if d > 1e-300:
            n = s - v / d
            s = n if a < n < b else 0.5 * (a + b)
        else:
            s = 0.5 * (a + b)
        if b - a < 1e-14:
            break
    return s


def _invert_radial_cdf_2d(u: float) -> float:
    """Solve s^2 (1 - 2 ln s) = u on (0, 1] (Newton with a bisection bracket)."""
    a, b = 0.0, 1.0
    s = 0.6
    for _ in range(100):
        lg = math.log(s)
        v = s * s * (1.0 - 2.0 * lg) - u
        if v > 0.0:
            b = s
        else:
            a = s
        d = -4.0 * s * lg
        if d > 1e-300:
            n = s - v / d
            s = n if a < n < b else 0.5 * (a + b)
        else:
            s = 0.5 * (a + b)
        if b - a < 1e-14:
            break
    return s


def greens_radius_cdf(ctx: KernelContext, t: float) -> float:
    """CDF of the radial profile that sample_greens_radius draws from."""
    s = min(max(t / ctx.R, 0.0), 1.0)
    if ctx.dimension == 3:
        return s * s * (3.0 - 2.0 * s)
    if s == 0.0:
        return 0.0
    return s * s * (1.0 - 2.0 * math.log(s))


def sample_greens_radius(ctx: KernelContext, rng: np.random.Generator) -> float:
    """Radius in (0, R) distributed like the unscreened ball Green's function.

    One draw. The radial density is proportional to greens_ball (sigma = 0)
    times the sphere-area factor; screened contexts deliberately reuse the
    same profile and compensate with greens_ball_ratio at evaluation time,
    which keeps the inverse CDF closed over elementary functions.
    """
    u = rng.random()
    if ctx.dimension == 3:
        return ctx.R * _invert_radial_cdf_3d(u)
    return ctx.R * _invert_radial_cdf_2d(u)
