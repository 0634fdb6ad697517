"""Gauss-Legendre rules and grids, the Sobol sampler and the weighted-sum
estimator."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre, polynomial
from scipy.stats import qmc

from capa_inr.channel import scalar_channel
from capa_inr.geometry import Aperture, PhysicalConfig
from capa_inr.integration import (SobolSampler, gl_grid, gl_rule, integrate, owen_scramble, sobol_grid,
                                  sobol_integers)

BS = Aperture((0.0, 0.0, 0.0), 2.0, 2.0)


def random_polynomial_error(order, rng):
    """Relative error of the order-M rule on a random degree 2M-1 polynomial."""
    coef = rng.standard_normal(2 * order)
    rule = gl_rule(order)
    approx = np.dot(rule.weights, polynomial.polyval(rule.nodes, coef))
    anti = polynomial.polyint(coef)
    exact = polynomial.polyval(1.0, anti) - polynomial.polyval(-1.0, anti)
    scale = np.sum(np.abs(coef))
    return abs(approx - exact) / scale


def net_violations(u, m):
    """Number of elementary boxes of volume 2^-m that do not hold exactly one point."""
    x = (u * 2**m).astype(np.int64)
    bad = 0
    for a in range(m + 1):
        ix = x[:, 0] >> (m - a)
        iy = x[:, 1] >> a
        counts = np.bincount(ix * 2 ** (m - a) + iy, minlength=2**m)
        bad += int(np.sum(counts != 1))
    return bad


def cosine_integrand(u):
    return np.cos(2.3 * u[:, 0] + 0.3) * np.cos(1.7 * u[:, 1] - 0.2)


COSINE_EXACT = ((np.sin(2.6) - np.sin(0.3)) / 2.3) * ((np.sin(1.5) - np.sin(-0.2)) / 1.7)


class TestGaussLegendreRule:
    def test_midpoint(self):
        """[TRIVIAL] M = 1 is the midpoint rule."""
        rule = gl_rule(1)
        np.testing.assert_array_equal(rule.nodes, [0.0])
        np.testing.assert_allclose(rule.weights, [2.0], rtol=1e-15)

    def test_two_point(self):
        """[DERIVED] roots of (3x^2 - 1)/2."""
        rule = gl_rule(2)
        np.testing.assert_allclose(rule.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=1e-15)
        np.testing.assert_allclose(rule.weights, [1.0, 1.0], rtol=1e-15)
        assert np.dot(rule.weights, rule.nodes**2) == pytest.approx(2 / 3, rel=1e-15)

    @pytest.mark.parametrize("order", [1, 2, 3, 5, 8, 13, 24, 40, 64])
    def test_matches_numpy(self, order):
        """[DERIVED] independent rule from numpy.

        numpy's own weights carry about 1e-12 relative error at order 64
        (checked against 40-digit arithmetic), hence the tolerance.
        """
        x, w = legendre.leggauss(order)
        rule = gl_rule(order)
        np.testing.assert_allclose(rule.nodes, x, atol=1e-14)
        np.testing.assert_allclose(rule.weights, w, rtol=5e-12)

    @pytest.mark.parametrize("order", [1, 4, 7, 40])
    def test_structure(self, order):
        rule = gl_rule(order)
        assert np.sum(rule.weights) == pytest.approx(2.0, abs=1e-12)
        assert np.all(np.diff(rule.nodes) > 0)
        assert np.all(rule.weights > 0)
        assert np.all(np.abs(legendre.legval(rule.nodes, [0] * order + [1])) < 1e-13)

    @given(st.integers(1, 40), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_polynomial_exactness(self, order, seed):
        assert random_polynomial_error(order, np.random.default_rng(seed)) < 1e-12

    @pytest.mark.parametrize("bad", [0, -1, 2.5])
    def test_invalid_order(self, bad):
        with pytest.raises(ValueError):
            gl_rule(bad)


class TestGLGrid:
    def test_unit_square_single_point(self):
        grid = gl_grid(Aperture((0.5, 0.5, 0.0), 1.0, 1.0), 1)
        np.testing.assert_array_equal(grid.points, [[0.5, 0.5, 0.0]])
        np.testing.assert_allclose(grid.weights, [1.0])

    @pytest.mark.parametrize("order", [1, 3, 10, 24])
    def test_weights_sum_to_area(self, order):
        ap = Aperture((1.0, -2.0, 3.0), 2.0, 0.5)
        grid = gl_grid(ap, order)
        assert len(grid) == order**2
        assert np.sum(grid.weights) == pytest.approx(ap.area, rel=1e-12)
        assert np.all(ap.contains(grid.points))

    def test_constant_integrand(self):
        assert integrate(gl_grid(BS, 10), np.ones(100)) == pytest.approx(4.0, abs=1e-12)

    def test_odd_integrand(self):
        assert abs(integrate(gl_grid(BS, 9), lambda p: p[:, 0])) < 1e-12

    def test_separable_monomial(self):
        """[DERIVED] int x^2 y^4 over [-1, 1]^2 is (2/3)(2/5)."""
        value = integrate(gl_grid(BS, 3), lambda p: p[:, 0] ** 2 * p[:, 1] ** 4)
        assert value == pytest.approx(4 / 15, rel=1e-13)

    def test_channel_self_convergence(self):
        """[DERIVED] GL M=20 and M=40 agree on a channel integral at lambda = 1 m."""
        cfg = PhysicalConfig(300e6, 1.0, 1.0)
        r = np.array([1.3, -0.7, 22.0])
        f = lambda p: scalar_channel(r, p, cfg)
        a, b = integrate(gl_grid(BS, 20), f), integrate(gl_grid(BS, 40), f)
        assert abs(a - b) <= 1e-6 * abs(b)

    def test_permutation_invariance(self):
        grid = gl_grid(BS, 6)
        rng = np.random.default_rng(0)
        values = rng.standard_normal(36) + 1j * rng.standard_normal(36)
        perm = rng.permutation(36)
        a = integrate(grid, values)
        b = np.dot(grid.weights[perm], values[perm])
        assert abs(a - b) < 1e-13 * np.sum(np.abs(values))


class TestSobol:
    def test_unscrambled_start(self):
        """[DERIVED] Joe-Kuo dims 1-2, indices 1..3."""
        u = SobolSampler(owen_enabled=False).points(3)
        np.testing.assert_array_equal(u, [[0.5, 0.5], [0.75, 0.25], [0.25, 0.75]])

    def test_matches_scipy(self):
        """[DERIVED] the first 4096 unscrambled points equal scipy's generator."""
        ref = qmc.Sobol(d=2, scramble=False, bits=32).random(4096)
        ours = sobol_integers(np.arange(4096, dtype=np.uint64)) / 2.0**32
        np.testing.assert_array_equal(ours, ref)

    def test_unit_square(self):
        u = SobolSampler(123).points(5000)
        assert np.all(u >= 0) and np.all(u < 1)

    def test_owen_scramble_is_bijective_on_prefixes(self):
        """Nested scrambling maps equal top-bit prefixes to equal prefixes."""
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2**32, 2000, dtype=np.uint64).astype(np.uint32)
        y = owen_scramble(x, 99)
        for bits in (1, 4, 9):
            shift = np.uint32(32 - bits)
            px, py = x >> shift, y >> shift
            mapping = {}
            for a, b in zip(px, py):
                assert mapping.setdefault(a, b) == b

    @pytest.mark.parametrize("m", range(0, 13))
    def test_stratification_across_seeds(self, m):
        """[DERIVED] brute-force binning of every elementary box, 20 seeds."""
        for seed in range(20):
            assert net_violations(SobolSampler(seed).points(2**m), m) == 0

    def test_scrambled_rmse_beats_random(self):
        n, seeds = 1024, 50
        sobol_err = [np.mean(cosine_integrand(SobolSampler(s).points(n))) - COSINE_EXACT for s in range(seeds)]
        rng = np.random.default_rng(2024)
        mc_err = [np.mean(cosine_integrand(rng.random((n, 2)))) - COSINE_EXACT for _ in range(seeds)]
        rmse_sobol = np.sqrt(np.mean(np.square(sobol_err)))
        rmse_mc = np.sqrt(np.mean(np.square(mc_err)))
        assert rmse_sobol < rmse_mc
        assert rmse_sobol < 0.1 * rmse_mc

    def test_seeds_differ(self):
        assert not np.array_equal(SobolSampler(1).points(8), SobolSampler(2).points(8))


class TestSobolGrid:
    def test_constant_integrand_is_area(self):
        grid = sobol_grid(BS, 37, seed=5)
        assert integrate(grid, np.ones(37)) == pytest.approx(BS.area, rel=1e-15)
        assert np.all(BS.contains(grid.points))

    def test_agrees_with_gl(self):
        """[DERIVED] 4096 Sobol points against GL M=40 on a channel integrand."""
        cfg = PhysicalConfig(300e6, 1.0, 1.0)
        r = np.array([-2.0, 3.0, 21.0])
        f = lambda p: scalar_channel(r, p, cfg)
        ref = integrate(gl_grid(BS, 40), f)
        est = integrate(sobol_grid(BS, 4096, seed=11), f)
        assert abs(est - ref) < 1e-2 * abs(ref)

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            sobol_grid(BS, 0, seed=1)

    def test_mismatched_samples(self):
        with pytest.raises(ValueError):
            integrate(gl_grid(BS, 2), np.ones(3))
