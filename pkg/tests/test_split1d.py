"""Tests for 1D Gaussian-mixture splits of N(0,1).

Oracles: adaptive quadrature of the TV integral, the closed-form TV between
equal-variance Gaussians, and a density-ratio Monte Carlo estimate of TV.
"""

import numpy as np
import pytest
from scipy.stats import norm

from gmtaylor.split1d import (
    Split1D,
    equispaced_split,
    l2_misfit,
    load_library,
    optimize_split,
    save_library,
    tv_1d,
)


@pytest.fixture(scope="module")
def small_splits():
    return {n: optimize_split(n, 0.5) for n in (1, 3, 5, 7, 9)}


class TestIdentitySplit:
    def test_n1_is_exact(self):
        s = optimize_split(1, 0.5)
        assert s.weights.tolist() == [1.0]
        assert s.means.tolist() == [0.0]
        assert s.sigma == 1.0
        assert s.tv_error <= 1e-10


class TestOptimizedSplits:
    def test_invariants(self, small_splits):
        for n, s in small_splits.items():
            s.check_invariants()
            assert s.n_components == n
            assert s.sigma == float(n) ** -0.5

    def test_n3_beats_single_shrunk_component(self, small_splits):
        # baseline: one component with the same reduced sigma, centered at 0
        sigma = 3.0 ** -0.5
        baseline = Split1D(np.array([1.0]), np.array([0.0]), sigma=sigma)
        assert small_splits[3].tv_error < tv_1d(baseline)

    def test_tv_decreases_with_n(self, small_splits):
        tvs = [small_splits[n].tv_error for n in (3, 5, 7, 9)]
        assert all(b < a for a, b in zip(tvs, tvs[1:]))

    def test_optimizer_dominates_equispaced_objective(self):
        # the equispaced means are restart points, so the optimized misfit
        # can never be worse
        for n in (4, 7):
            opt = optimize_split(n, 0.5)
            for L in (2.0, 3.0, 4.0):
                eq = equispaced_split(n, 0.5, L, with_tv=False)
                assert l2_misfit(opt) <= l2_misfit(eq) + 1e-14

    def test_even_n_supported(self):
        s = optimize_split(4, 0.5)
        s.check_invariants()
        assert s.n_components == 4

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            optimize_split(0, 0.5)
        with pytest.raises(ValueError):
            optimize_split(3, 1.5)


class TestEquispacedSplit:
    def test_n1_any_halfwidth(self):
        s = equispaced_split(1, 0.5, 3.0)
        assert s.means.tolist() == [0.0]
        assert s.weights.tolist() == [1.0]

    def test_means_formula_n4(self):
        s = equispaced_split(4, 0.5, 2.0, with_tv=False)
        assert np.allclose(s.means, [-1.5, -0.5, 0.5, 1.5], atol=1e-15)

    def test_tv_converges_with_n(self):
        tv11 = equispaced_split(11, 0.5, 4.0).tv_error
        tv101 = equispaced_split(101, 0.5, 4.0).tv_error
        assert tv101 < tv11

    def test_weights_proportional_to_density(self):
        s = equispaced_split(5, 0.5, 3.0, with_tv=False)
        ref = norm.pdf(s.means)
        assert np.allclose(s.weights, ref / ref.sum(), rtol=1e-12)


class TestTV:
    def test_identity_is_zero(self):
        s = Split1D(np.array([1.0]), np.array([0.0]), sigma=1.0)
        assert tv_1d(s) <= 1e-10

    def test_mass_at_five_matches_closed_form(self):
        # TV(N(0,1), N(5,1)) = 2*Phi(2.5) - 1
        s = Split1D(np.array([1.0]), np.array([5.0]), sigma=1.0)
        assert tv_1d(s) == pytest.approx(2 * norm.cdf(2.5) - 1, abs=1e-6)

    def test_matches_density_ratio_monte_carlo(self, small_splits):
        # TV = E_pi0[ (1 - pi_mix/pi0)^+ ] by the positive-part identity
        s = small_splits[5]
        rng = np.random.default_rng(77)
        x = rng.standard_normal(10_000_000)
        ratio = s.pdf(x) / norm.pdf(x)
        mc = np.mean(np.maximum(1.0 - ratio, 0.0))
        assert abs(s.tv_error - mc) <= 1e-3

    def test_reflection_invariance(self, small_splits):
        s = small_splits[7]
        reflected = Split1D(s.weights[::-1].copy(), -s.means[::-1].copy(),
                            sigma=s.sigma)
        assert tv_1d(reflected) == pytest.approx(s.tv_error, abs=1e-9)


class TestLibraryIO:
    def test_roundtrip_bit_exact(self, tmp_path, small_splits):
        path = tmp_path / "library.json"
        splits = [small_splits[n] for n in (1, 3, 5)]
        save_library(path, splits)
        loaded = load_library(path)
        for orig, back in zip(splits, loaded):
            assert np.array_equal(orig.weights, back.weights)
            assert np.array_equal(orig.means, back.means)
            assert orig.sigma == back.sigma
            assert orig.tv_error == back.tv_error
            assert orig.p == back.p

    def test_heterogeneous_sigmas_loadable(self, tmp_path):
        s = Split1D(np.array([0.5, 0.5]), np.array([-1.0, 1.0]), sigma=0.7,
                    sigmas=np.array([0.6, 0.8]))
        path = tmp_path / "het.json"
        save_library(path, [s])
        back = load_library(path)[0]
        assert np.array_equal(back.component_sigmas(), [0.6, 0.8])

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"something": 1}')
        with pytest.raises(ValueError):
            load_library(path)
