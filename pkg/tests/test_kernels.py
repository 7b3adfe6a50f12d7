import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare, kstest

from starwalk.kernels import (KernelContext, free_space_poisson_kernel,
                              greens_ball, greens_ball_norm,
                              greens_ball_ratio, greens_free,
                              greens_radius_cdf, poisson_kernel_ball_boundary,
                              q_factor, sample_greens_radius,
                              sample_hemisphere_direction,
                              sample_unit_direction)

from _oracles import ball_green_quadrature, radial_cdf_2d, radial_cdf_3d

FOUR_PI_INV = 1.0 / (4.0 * math.pi)


def test_context_rejects_bad_parameters():
    with pytest.raises(ValueError):
        KernelContext(4, 1.0)
    with pytest.raises(ValueError):
        KernelContext(2, 0.0)
    with pytest.raises(ValueError):
        KernelContext(2, -1.0)
    with pytest.raises(ValueError):
        KernelContext(3, 1.0, -0.5)
    with pytest.raises(ValueError):
        KernelContext(3, math.inf)


def test_free_space_green_values():
    assert greens_free(3, 1.0) == pytest.approx(FOUR_PI_INV, rel=1e-15)
    assert greens_free(3, 2.0) == pytest.approx(0.5 * FOUR_PI_INV, rel=1e-15)
    # screening multiplies the 3D kernel by exp(-r sqrt(sigma))
    assert greens_free(3, 1.0, sigma=1.0) == pytest.approx(
        math.exp(-1.0) * FOUR_PI_INV, rel=1e-12)
    assert greens_free(2, 0.5) == pytest.approx(math.log(0.5) / (2 * math.pi),
                                                rel=1e-15)
    assert greens_free(2, 1.0) == 0.0
    assert math.isinf(greens_free(3, 0.0))


def test_ball_green_harmonic_values():
    ctx = KernelContext(3, 1.0)
    assert greens_ball(ctx, 0.5) == pytest.approx((2.0 - 1.0) * FOUR_PI_INV,
                                                  rel=1e-15)
    ctx2 = KernelContext(2, 2.0)
    assert greens_ball(ctx2, 0.5) == pytest.approx(math.log(4.0) / (2 * math.pi),
                                                   rel=1e-15)
    assert math.isinf(greens_ball(ctx, 0.0))


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("sigma", [0.0, 0.5, 5.0])
@pytest.mark.parametrize("R", [0.7, 1.0, 3.0])
def test_ball_green_vanishes_on_rim(dim, sigma, R):
    ctx = KernelContext(dim, R, sigma)
    assert greens_ball(ctx, R) == 0.0
    assert greens_ball(ctx, 1.5 * R) == 0.0


@pytest.mark.parametrize("dim", [2, 3])
def test_ball_green_screened_limit_matches_harmonic(dim):
    # sigma -> 0 pointwise limits, checked at sigma = 1e-8 across the radius.
    R = 1.0
    flat = KernelContext(dim, R)
    tiny = KernelContext(dim, R, 1e-8)
    for r in np.linspace(0.1, 0.999, 20):
        ref = greens_ball(flat, r)
        assert greens_ball(tiny, r) == pytest.approx(ref, rel=1e-6)
    assert greens_ball_norm(tiny) == pytest.approx(greens_ball_norm(flat),
                                                   rel=1e-6)
    assert q_factor(tiny, 0.5 * R) == pytest.approx(1.0, abs=1e-6)


def test_ball_green_norm_closed_forms():
    assert greens_ball_norm(KernelContext(3, 1.0)) == pytest.approx(1.0 / 6.0,
                                                                    rel=1e-15)
    assert greens_ball_norm(KernelContext(2, 2.0)) == pytest.approx(1.0,
                                                                    rel=1e-15)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("sigma", [0.0, 0.5, 4.0, 5.0])
def test_ball_green_norm_matches_quadrature(dim, sigma):
    ctx = KernelContext(dim, 1.0, sigma)
    assert greens_ball_norm(ctx) == pytest.approx(ball_green_quadrature(ctx),
                                                  rel=1e-8)


def test_ball_green_ratio_bounded_and_finite_at_rim():
    for dim in (2, 3):
        ctx = KernelContext(dim, 1.0, 2.0)
        for r in np.linspace(1e-6, 1.0 - 1e-12, 50):
            val = greens_ball_ratio(ctx, r)
            assert 0.0 < val <= 1.0 + 1e-12
        assert greens_ball_ratio(KernelContext(dim, 1.0), 0.5) == 1.0
        # small-sigma limit is 1 everywhere
        assert greens_ball_ratio(KernelContext(dim, 1.0, 1e-10), 0.5) == \
            pytest.approx(1.0, abs=1e-6)


def test_q_factor_values_and_range():
    assert q_factor(KernelContext(3, 1.0), 0.7) == 1.0
    # 3D, sigma = 1, r = R = 1, against the independent closed form
    expected = (math.exp(-1.0) * 2.0
                + (math.cosh(1.0) - math.sinh(1.0)) * math.exp(-1.0)
                / math.sinh(1.0))
    got = q_factor(KernelContext(3, 1.0, 1.0), 1.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert 0.0 <= got < 1.0
    # Q -> 1 as r -> 0; below r/R ~ 1e-9 the float value rounds to exactly
    # 1.0, so the strict upper bound is asserted away from that limit.
    for dim in (2, 3):
        for sigma in (0.1, 1.0, 10.0):
            ctx = KernelContext(dim, 1.0, sigma)
            for r in np.linspace(0.05, 1.0, 25):
                v = q_factor(ctx, r)
                assert 0.0 <= v < 1.0, (dim, sigma, r, v)


def test_q_factor_is_screened_over_harmonic_kernel_ratio():
    # Q at the rim times the harmonic boundary kernel is the screened one.
    for dim in (2, 3):
        ctx = KernelContext(dim, 0.8, 3.0)
        flat = KernelContext(dim, 0.8)
        assert poisson_kernel_ball_boundary(ctx) == pytest.approx(
            poisson_kernel_ball_boundary(flat) * q_factor(ctx, ctx.R),
            rel=1e-12)
    assert poisson_kernel_ball_boundary(KernelContext(3, 1.0)) == \
        pytest.approx(FOUR_PI_INV, rel=1e-15)


def test_free_space_poisson_kernel_values():
    x = np.zeros(3)
    y = np.array([1.0, 0.0, 0.0])
    n = np.array([1.0, 0.0, 0.0])
    assert free_space_poisson_kernel(3, x, y, n) == pytest.approx(FOUR_PI_INV,
                                                                  rel=1e-15)
    n_perp = np.array([0.0, 1.0, 0.0])
    assert free_space_poisson_kernel(3, x, y, n_perp) == 0.0
    # radial normals make the kernel constant on a sphere; |P| integrates to 1
    for dim, area in ((2, 2 * math.pi * 0.7), (3, 4 * math.pi * 0.7 ** 2)):
        yv = np.zeros(dim)
        yv[0] = 0.7
        nv = yv / 0.7
        p = free_space_poisson_kernel(dim, np.zeros(dim), yv, nv)
        assert p * area == pytest.approx(1.0, rel=1e-12)
    # screening attenuates strictly
    assert free_space_poisson_kernel(3, x, y, n, sigma=2.0) < FOUR_PI_INV


def test_unit_direction_sampler_statistics():
    rng = np.random.default_rng(42)
    for dim in (2, 3):
        v = np.array([sample_unit_direction(dim, rng) for _ in range(100_000)])
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)
        assert np.linalg.norm(v.mean(axis=0)) < 0.02
        # orthant occupancy is uniform
        bits = (v > 0.0) @ (1 << np.arange(dim))
        counts = np.bincount(bits, minlength=1 << dim)
        assert chisquare(counts).pvalue > 1e-3


def test_hemisphere_sampler_stays_in_hemisphere():
    rng = np.random.default_rng(7)
    for dim in (2, 3):
        axis = np.zeros(dim)
        axis[-1] = -1.0
        for _ in range(2000):
            v = sample_hemisphere_direction(dim, axis, rng)
            assert float(v @ axis) >= 0.0
            assert abs(float(v @ v) - 1.0) < 1e-12


def test_radius_sampler_matches_density():
    rng = np.random.default_rng(11)
    ctx3 = KernelContext(3, 1.0)
    t = np.array([sample_greens_radius(ctx3, rng) for _ in range(200_000)])
    assert np.all((t > 0.0) & (t < 1.0))
    # p(t) = 6 t (1 - t) on (0,1) has mean 1/2 and variance 1/20
    se = math.sqrt(0.05 / t.size)
    assert abs(t.mean() - 0.5) < 3 * se
    assert kstest(t, radial_cdf_3d).pvalue > 1e-3

    ctx2 = KernelContext(2, 1.3)
    t2 = np.array([sample_greens_radius(ctx2, rng) for _ in range(50_000)])
    assert kstest(t2, lambda s: radial_cdf_2d(s, 1.3)).pvalue > 1e-3
    assert greens_radius_cdf(ctx2, 1.3) == 1.0
    assert greens_radius_cdf(ctx2, 0.0) == 0.0
    # the library CDF inverts the sampler: CDF(samples) is uniform
    u = np.array([greens_radius_cdf(ctx2, s) for s in t2[:20_000]])
    assert kstest(u, "uniform").pvalue > 1e-3


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("sigma", [0.0, 0.5])
def test_radius_sampler_integrates_green_weighted_polynomials(dim, sigma):
    # E[norm0 * ratio(t) * phi(t)] over the sampler equals the radial
    # quadrature of G^sigma * phi * sphere-area, for polynomial phi.
    R = 1.0
    ctx = KernelContext(dim, R, sigma)
    norm0 = greens_ball_norm(KernelContext(dim, R))

    def phi(r):
        return 1.0 + 3.0 * r * r

    area = (lambda r: 2 * math.pi * r) if dim == 2 else \
        (lambda r: 4 * math.pi * r * r)
    want, _ = quad(lambda r: greens_ball(ctx, r) * phi(r) * area(r),
                   0.0, R, points=[0.0, 0.5 * R], limit=200)

    rng = np.random.default_rng(19)
    vals = np.array([
        norm0 * greens_ball_ratio(ctx, t) * phi(t)
        for t in (sample_greens_radius(ctx, rng) for _ in range(200_000))])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - want) < 3 * se
