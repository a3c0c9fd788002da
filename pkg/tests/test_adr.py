"""Tests for the semilinear advection-diffusion-reaction model.

Oracles: central finite differences of the QoI and gradient, dense direct
solves of the linearized system, and the solve-count ledger.
"""

import numpy as np
import pytest

from gmtaylor.adr import ADRModel, NewtonDivergenceError
from gmtaylor.measure import (
    Grid,
    GaussianMeasure,
    build_elliptic_covariance,
    calibrate_elliptic,
)
from gmtaylor.model import (
    fd_gradient_check,
    fd_hessian_check,
    hessian_symmetry_check,
)


@pytest.fixture(scope="module")
def grid16():
    return Grid(2, 16)


@pytest.fixture(scope="module")
def measure16(grid16):
    gamma, delta = calibrate_elliptic(grid16, 1.0, 1.0)
    cov = build_elliptic_covariance(grid16, gamma, delta)
    return GaussianMeasure(np.zeros(grid16.size), cov)


@pytest.fixture(scope="module")
def sample16(measure16):
    return measure16.sample(21, 1)[0]


class TestStateSolve:
    def test_zero_source_gives_zero_state(self, grid16):
        model = ADRModel(grid16, source_amplitude=0.0)
        wp = model.linearize(np.zeros(grid16.size))
        assert np.abs(wp.state).max() == 0.0
        assert wp.newton_iterations <= 1

    def test_linear_case_matches_direct_solve(self, grid16):
        model = ADRModel(grid16, reaction=0.0)
        m0 = np.zeros(grid16.size)
        wp = model.linearize(m0)
        kf, kd, _, _ = model._face_coeffs(m0)
        n = grid16.size
        K = np.zeros((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            K[:, i] = model._k_apply(kf, kd, e)
        u_ref = np.linalg.solve(K + model._adv.toarray(), model.f)
        err = np.linalg.norm(wp.state - u_ref) / np.linalg.norm(u_ref)
        assert err <= 1e-10
        assert wp.newton_iterations == 1

    def test_newton_converges_quickly_on_samples(self):
        grid = Grid(2, 32)
        gamma, delta = calibrate_elliptic(grid, 1.0, 1.0)
        cov = build_elliptic_covariance(grid, gamma, delta)
        measure = GaussianMeasure(np.zeros(grid.size), cov)
        model = ADRModel(grid)
        for m in measure.sample(31, 5):
            wp = model._linearize_impl(m)
            assert wp.newton_iterations <= 5
            kf, kd, _, _ = model._face_coeffs(m)
            rnorm = np.linalg.norm(model._residual(kf, kd, wp.state))
            assert rnorm <= 1e-10 * np.linalg.norm(model.f)

    def test_divergence_reported_with_residual(self, grid16):
        model = ADRModel(grid16, newton_max_iter=0)
        with pytest.raises(NewtonDivergenceError) as err:
            model.linearize(np.zeros(grid16.size))
        assert err.value.residual_norm > 0

    def test_nonfinite_parameter_rejected(self, grid16):
        model = ADRModel(grid16)
        bad = np.zeros(grid16.size)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            model.linearize(bad)

    def test_requires_2d_grid(self):
        with pytest.raises(ValueError):
            ADRModel(Grid(1, 16))


class TestQoI:
    def test_zero_state_gives_zero(self, grid16):
        model = ADRModel(grid16, source_amplitude=0.0)
        m0 = np.zeros(grid16.size)
        for qoi in ("l2", "l3", "energy"):
            model_q = ADRModel(grid16, qoi=qoi, source_amplitude=0.0)
            assert model_q.evaluate(m0) == 0.0

    def test_constant_state_l2(self, grid16):
        model = ADRModel(grid16, qoi="l2")
        c = 0.7
        u = np.full(grid16.size, c)
        # midpoint quadrature: exactly c^2 * |Omega|
        assert model.evaluate_qoi(u, np.zeros(grid16.size)) == pytest.approx(
            c * c, rel=1e-13)

    def test_l3_odd_symmetry(self, grid16, sample16):
        model = ADRModel(grid16, qoi="l3")
        rng = np.random.default_rng(5)
        u = rng.standard_normal(grid16.size)
        q_pos = model.evaluate_qoi(u, sample16)
        q_neg = model.evaluate_qoi(-u, sample16)
        assert q_neg == pytest.approx(-q_pos, rel=1e-13)

    def test_linear_scaling_of_source(self, grid16):
        t = 3.0
        base = ADRModel(grid16, reaction=0.0)
        scaled = ADRModel(grid16, reaction=0.0, source_amplitude=t)
        m = np.zeros(grid16.size)
        u1 = base.linearize(m).state
        u2 = scaled.linearize(m).state
        assert np.allclose(u2, t * u1, rtol=1e-10)
        assert scaled.evaluate(m) == pytest.approx(t * t * base.evaluate(m),
                                                   rel=1e-10)


@pytest.mark.parametrize("qoi", ["l2", "l3", "energy"])
class TestDerivatives:
    def test_gradient_fd(self, grid16, sample16, qoi):
        model = ADRModel(grid16, qoi=qoi)
        rng = np.random.default_rng(6)
        d = rng.standard_normal(grid16.size)
        assert fd_gradient_check(model, sample16, d, step=1e-4) <= 1e-5

    def test_hessvec_fd(self, grid16, sample16, qoi):
        model = ADRModel(grid16, qoi=qoi)
        rng = np.random.default_rng(7)
        d = rng.standard_normal(grid16.size)
        assert fd_hessian_check(model, sample16, d, step=1e-4) <= 1e-4

    def test_hessvec_symmetry(self, grid16, sample16, qoi):
        model = ADRModel(grid16, qoi=qoi)
        rng = np.random.default_rng(8)
        v = rng.standard_normal(grid16.size)
        w = rng.standard_normal(grid16.size)
        assert hessian_symmetry_check(model, sample16, v, w) <= 1e-8


class TestSolveAccounting:
    def test_gradient_adds_one_adjoint_solve(self, grid16, sample16):
        model = ADRModel(grid16)
        before = model.counter.snapshot()
        wp = model.linearize(sample16)
        n_l = wp.newton_iterations
        used = model.counter.since(before)
        assert used.newton_iterations == n_l
        assert used.factorizations == n_l
        _ = wp.gradient
        used = model.counter.since(before)
        assert used.adjoint_solves == 1
        assert used.total_linear_solves == n_l + 1
        assert used.factorizations == n_l + 1

    def test_hessvec_adds_two_solves_reusing_factorizations(
            self, grid16, sample16):
        model = ADRModel(grid16)
        wp = model.linearize(sample16)
        _ = wp.gradient
        before = model.counter.snapshot()
        rng = np.random.default_rng(9)
        wp.hessvec(rng.standard_normal(grid16.size))
        used = model.counter.since(before)
        assert used.incremental_solves == 2
        assert used.factorizations == 1  # untransposed operator, first use
        wp.hessvec(rng.standard_normal(grid16.size))
        used = model.counter.since(before)
        assert used.incremental_solves == 4
        assert used.factorizations == 1  # both contexts now cached

    def test_anchor_cache_reuses_solves(self, grid16, sample16):
        model = ADRModel(grid16)
        model.linearize(sample16)
        before = model.counter.snapshot()
        model.linearize(sample16.copy())
        assert model.counter.since(before).total_linear_solves == 0

    def test_clone_gets_fresh_counter(self, grid16, sample16):
        model = ADRModel(grid16)
        model.linearize(sample16)
        clone = model.clone()
        assert clone.counter.total_linear_solves == 0
        assert clone.evaluate(sample16) == pytest.approx(
            model.evaluate(sample16), rel=1e-12)
