"""Tests for Gaussian-mixture construction and TV bookkeeping.

Oracles: dense matrix algebra on small covariances, 2D tensor-product
quadrature of the TV integral, and Monte Carlo component statistics.
"""

import numpy as np
import pytest

from gmtaylor.measure import (
    DenseCovariance,
    GaussianMeasure,
    Grid,
    build_elliptic_covariance,
    kle,
)
from gmtaylor.mixture import (
    recursive_split,
    split_along_direction,
    split_along_kle,
    tensor_split,
    tv_numeric_2d,
)
from gmtaylor.split1d import Split1D, optimize_split


@pytest.fixture(scope="module")
def split3():
    return optimize_split(3, 0.5)


@pytest.fixture(scope="module")
def identity_split():
    return optimize_split(1, 0.5)


@pytest.fixture(scope="module")
def base_2d():
    rng = np.random.default_rng(42)
    A = rng.standard_normal((2, 2))
    cov = DenseCovariance(A @ A.T + 0.8 * np.eye(2))
    return GaussianMeasure(np.array([0.4, -0.2]), cov)


@pytest.fixture(scope="module")
def base_grid():
    g = Grid(2, 12)
    cov = build_elliptic_covariance(g, 0.4, 1.2)
    return GaussianMeasure(np.zeros(g.size), cov)


class TestSplitAlongKLE:
    def test_identity_split_reproduces_base(self, base_grid, identity_split):
        basis = kle(base_grid.covariance, 3)
        mix = split_along_kle(base_grid, basis, 1, identity_split)
        assert mix.n_components == 1
        c = mix.components[0]
        assert np.allclose(c.mean, base_grid.mean, atol=1e-14)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(base_grid.dim)
        assert np.allclose(c.cov_apply(x), base_grid.cov_apply(x), rtol=1e-12)
        assert mix.tv_bound <= 1e-10

    def test_trace_identity(self, base_grid, split3):
        basis = kle(base_grid.covariance, 3)
        mix = split_along_kle(base_grid, basis, 2, split3)
        lam2 = basis.eigenvalues[1]
        tr = base_grid.covariance.trace()
        for c in mix.components:
            expected = tr + (c.sigma ** 2 - 1.0) * lam2
            assert c.cov_trace() == pytest.approx(expected, rel=1e-12)
            assert c.cov_trace() <= tr + 1e-12  # contraction for sigma <= 1

    def test_component_variances_along_modes(self, base_grid, split3):
        basis = kle(base_grid.covariance, 4)
        k = 1
        mix = split_along_kle(base_grid, basis, k, split3)
        for c in mix.components:
            # quadratic-form oracle phi^T C_i phi against the dense matrix
            Cd = c.cov_dense()
            phi_k = basis.eigenvectors[:, k - 1]
            assert phi_k @ Cd @ phi_k == pytest.approx(
                c.sigma ** 2 * basis.eigenvalues[k - 1], rel=1e-10)
            phi_j = basis.eigenvectors[:, 2]
            assert phi_j @ Cd @ phi_j == pytest.approx(
                basis.eigenvalues[2], rel=1e-10)

    def test_anchors(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        mix = split_along_kle(base_grid, basis, 1, split3)
        lam1 = basis.eigenvalues[0]
        phi1 = basis.eigenvectors[:, 0]
        for c, mu in zip(mix.components, split3.means):
            assert np.allclose(c.mean, base_grid.mean + mu * np.sqrt(lam1) * phi1,
                               atol=1e-13)

    def test_mode_out_of_range(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        with pytest.raises(ValueError):
            split_along_kle(base_grid, basis, 5, split3)

    def test_weights_normalized(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        mix = split_along_kle(base_grid, basis, 1, split3)
        assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)


class TestSplitAlongDirection:
    def test_eigen_direction_matches_kle(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        m_kle = split_along_kle(base_grid, basis, 1, split3)
        m_dir = split_along_direction(base_grid, basis.eigenvectors[:, 0], split3)
        for ck, cd in zip(m_kle.components, m_dir.components):
            assert np.allclose(ck.mean, cd.mean, atol=1e-10)
            assert ck.lam_psi == pytest.approx(cd.lam_psi, rel=1e-10)
            assert ck.lam_psi == pytest.approx(basis.eigenvalues[0], rel=1e-10)

    def test_inverse_covariance_formula(self, base_2d, split3):
        rng = np.random.default_rng(3)
        psi = rng.standard_normal(2)
        mix = split_along_direction(base_2d, psi, split3)
        Cinv = np.linalg.inv(base_2d.covariance.dense())
        for c in mix.components:
            u = Cinv @ c.psi
            formula = Cinv + (1.0 / c.sigma ** 2 - 1.0) * c.lam_psi * np.outer(u, u)
            prod = formula @ c.cov_dense()
            assert np.abs(prod - np.eye(2)).max() <= 1e-8
            x = rng.standard_normal(2)
            assert np.allclose(c.cov_apply(c.cov_apply_inv(x)), x, atol=1e-8)

    def test_dimension_independent_tv(self, base_2d, split3):
        rng = np.random.default_rng(4)
        psi = rng.standard_normal(2)  # generic non-eigen direction
        mix = split_along_direction(base_2d, psi, split3)
        tv = tv_numeric_2d(base_2d, mix)
        assert abs(tv - split3.tv_error) <= 2e-3

    def test_tv_same_across_directions_and_covariances(self, split3):
        rng = np.random.default_rng(5)
        values = []
        for trial in range(2):
            A = rng.standard_normal((2, 2))
            cov = DenseCovariance(A @ A.T + 1.2 * np.eye(2))
            base = GaussianMeasure(rng.standard_normal(2), cov)
            mix = split_along_direction(base, rng.standard_normal(2), split3)
            values.append(tv_numeric_2d(base, mix))
        assert abs(values[0] - values[1]) <= 2e-3

    def test_zero_direction_rejected(self, base_2d, split3):
        with pytest.raises(ValueError):
            split_along_direction(base_2d, np.zeros(2), split3)

    def test_ill_conditioned_direction_rejected(self, split3):
        cov = DenseCovariance(np.diag([1.0, 1e-20]))
        base = GaussianMeasure(np.zeros(2), cov)
        with pytest.raises(ValueError):
            split_along_direction(base, np.array([0.0, 1.0]), split3)

    def test_rank_one_quadratic_form_identity(self, split3):
        # <g, C_i g> = <g, C g> + (sigma^2-1) lam <psi, g>^2 against dense
        rng = np.random.default_rng(6)
        n = 50
        A = rng.standard_normal((n, n))
        cov = DenseCovariance(A @ A.T / n + np.eye(n))
        base = GaussianMeasure(np.zeros(n), cov)
        mix = split_along_direction(base, rng.standard_normal(n), split3)
        g = rng.standard_normal(n)
        for c in mix.components:
            dense_val = g @ c.cov_dense() @ g
            assert c.cov_quad_form(g) == pytest.approx(dense_val, rel=1e-10)


class TestTensorSplit:
    def test_identity_splits_give_base(self, base_grid, identity_split):
        basis = kle(base_grid.covariance, 3)
        mix = tensor_split(base_grid, basis, [1, 2],
                           [identity_split, identity_split])
        assert mix.n_components == 1
        assert np.allclose(mix.components[0].mean, base_grid.mean, atol=1e-14)

    def test_component_count_and_weights(self, base_grid, split3):
        basis = kle(base_grid.covariance, 3)
        mix = tensor_split(base_grid, basis, [1, 2], [split3, split3])
        assert mix.n_components == 9
        assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_2d_tv_bounded_by_sum_of_1d_tvs(self, base_2d, split3):
        basis = kle(base_2d.covariance, 2)
        mix = tensor_split(base_2d, basis, [1, 2], [split3, split3])
        tv = tv_numeric_2d(base_2d, mix)
        assert tv <= 2 * split3.tv_error + 2e-3
        assert mix.tv_bound == pytest.approx(2 * split3.tv_error, rel=1e-12)

    def test_duplicate_modes_rejected(self, base_grid, split3):
        basis = kle(base_grid.covariance, 3)
        with pytest.raises(ValueError):
            tensor_split(base_grid, basis, [1, 1], [split3, split3])

    def test_cap_enforced(self, base_grid, split3):
        basis = kle(base_grid.covariance, 3)
        with pytest.raises(ValueError):
            tensor_split(base_grid, basis, [1, 2], [split3, split3],
                         max_components=4)


class TestRecursiveSplit:
    def test_identity_split_is_noop(self, base_2d, split3, identity_split):
        rng = np.random.default_rng(7)
        mix = split_along_direction(base_2d, rng.standard_normal(2), split3)
        mix2 = recursive_split(mix, 0, rng.standard_normal(2), identity_split)
        assert mix2.n_components == mix.n_components
        assert mix2.tv_bound == pytest.approx(mix.tv_bound, abs=1e-12)
        assert np.allclose(mix2.components[0].mean, mix.components[0].mean,
                           atol=1e-13)

    def test_tv_change_equals_weighted_split_tv(self, base_2d, split3):
        rng = np.random.default_rng(8)
        mix = split_along_direction(base_2d, rng.standard_normal(2), split3)
        j = int(np.argmax(mix.weights))
        mix2 = recursive_split(mix, j, rng.standard_normal(2), split3)
        tv_change = tv_numeric_2d(mix, mix2)
        assert abs(tv_change - mix.weights[j] * split3.tv_error) <= 2e-3
        assert mix2.tv_bound == pytest.approx(
            mix.tv_bound + mix.weights[j] * split3.tv_error, rel=1e-12)

    def test_splitting_every_component_bound(self, base_2d, split3):
        rng = np.random.default_rng(9)
        mix = split_along_direction(base_2d, rng.standard_normal(2), split3)
        bound_before = mix.tv_bound
        current = mix
        for j in reversed(range(mix.n_components)):
            current = recursive_split(current, j, rng.standard_normal(2), split3)
        added = current.tv_bound - bound_before
        assert added <= split3.tv_error + 1e-12
        assert current.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_index_validation(self, base_2d, split3):
        mix = split_along_direction(base_2d, np.array([1.0, 0.0]), split3)
        with pytest.raises(ValueError):
            recursive_split(mix, 7, np.array([1.0, 0.0]), split3)


class TestComponentSampling:
    def test_trivial_component_matches_base(self, base_grid, identity_split):
        basis = kle(base_grid.covariance, 2)
        mix = split_along_kle(base_grid, basis, 1, identity_split)
        c = mix.components[0]
        X = c.sample(11, 30_000)
        ref_var = base_grid.covariance.pointwise_variance()
        assert np.abs(X.mean(0)).max() <= 5 * np.sqrt(ref_var.max() / 30_000)
        rel = np.abs(X.var(0, ddof=1) - ref_var) / ref_var
        assert rel.max() <= 5 * np.sqrt(2.0 / 30_000)

    def test_reduced_variance_along_direction(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        mix = split_along_kle(base_grid, basis, 1, split3)
        c = mix.components[0]
        X = c.sample(12, 50_000)
        # the coefficient functional lam * C^{-1} psi extracts the split axis
        functional = c.lam_psi * base_grid.covariance.apply_inv(c.psi)
        proj = (X - c.mean) @ functional
        target = c.sigma ** 2 * c.lam_psi
        assert proj.var(ddof=1) == pytest.approx(
            target, rel=5 * np.sqrt(2.0 / 50_000))
        assert np.abs(X.mean(0) - c.mean).max() <= 0.05

    def test_deterministic(self, base_grid, split3):
        basis = kle(base_grid.covariance, 2)
        c = split_along_kle(base_grid, basis, 1, split3).components[0]
        assert np.array_equal(c.sample(5, 7), c.sample(5, 7))


class TestTVNumeric2D:
    def test_identical_measures(self, base_2d):
        assert tv_numeric_2d(base_2d, base_2d) <= 1e-8

    def test_two_unit_gaussians_gap_five(self):
        a = GaussianMeasure(np.zeros(2), DenseCovariance(np.eye(2)))
        b = GaussianMeasure(np.array([5.0, 0.0]), DenseCovariance(np.eye(2)))
        from scipy.stats import norm
        assert tv_numeric_2d(a, b) == pytest.approx(2 * norm.cdf(2.5) - 1,
                                                    abs=2e-4)

    def test_dimension_guard(self, base_grid):
        with pytest.raises(ValueError):
            tv_numeric_2d(base_grid, base_grid)
