"""Taylor surrogates of the QoI at Gaussian component means.

A linear surrogate stores the QoI value and gradient at the anchor; a
quadratic surrogate adds the leading eigenpairs of the generalized Hessian
eigenproblem D2Q(anchor) phi = lam * C^{-1} phi, where C is the component's
covariance. All moment formulas and the fast sampler consume only cached
scalars (value, <g, C g>, <g, phi_j>, lam_j), so sampling the surrogate
never touches the covariance operator:

    Q ~ Q0 + sqrt(<g,Cg> - sum_j <g,phi_j>^2) * y_0
         + sum_j ( <g,phi_j> y_j + 0.5 * lam_j y_j^2 ),   y ~ N(0, I).

The mean of this draw is Q0 + 0.5*sum lam_j and its variance
<g,Cg> + 0.5*sum lam_j^2, matching the closed-form truncated moments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .eig import randomized_ghep
from .model import QoIModel

DEFAULT_OVERSAMPLE = 20


class SurrogateBuildError(RuntimeError):
    """Aggregated per-component build failures."""

    def __init__(self, failures: dict):
        super().__init__(
            "surrogate build failed for components "
            + ", ".join(f"{i}: {e}" for i, e in failures.items()))
        self.failures = failures


@dataclass
class TaylorSurrogate:
    order: int
    anchor: np.ndarray
    value: float                      # Q at the anchor
    g_cov_g: float                    # <g, C g> with the component covariance
    gradient: np.ndarray | None = None
    eigvals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eigvecs: np.ndarray | None = None  # C^{-1}-orthonormal columns
    g_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rank: int = 0
    oversample: int = 0

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        self.eigvals = np.asarray(self.eigvals, dtype=float)
        self.g_phi = np.asarray(self.g_phi, dtype=float)

    @property
    def trace_h(self) -> float:
        return float(self.eigvals.sum())

    @property
    def trace_h2(self) -> float:
        return float(np.sum(self.eigvals ** 2))


def surrogate_mean(s: TaylorSurrogate) -> float:
    """E[Q_s] under the surrogate's Gaussian: Q0 (+ trace term at order 2)."""
    if s.order == 1:
        return s.value
    return s.value + 0.5 * s.trace_h


def surrogate_second_moment(s: TaylorSurrogate) -> float:
    m = surrogate_mean(s)
    if s.order == 1:
        return m * m + s.g_cov_g
    return m * m + s.g_cov_g + 0.5 * s.trace_h2


def surrogate_sd(s: TaylorSurrogate) -> float:
    return float(np.sqrt(max(surrogate_second_moment(s) - surrogate_mean(s) ** 2,
                             0.0)))


def residual_sd(s: TaylorSurrogate) -> float:
    """Std dev of the linear part orthogonal to the kept eigenvectors."""
    resid = s.g_cov_g - float(np.sum(s.g_phi ** 2))
    floor = -1e-12 * max(abs(s.g_cov_g), 1.0)
    if resid < floor:
        raise ValueError(
            f"residual variance {resid:.3e} is negative beyond roundoff")
    if resid < 0.0:
        warnings.warn("clamping slightly negative residual variance to zero",
                      RuntimeWarning)
        resid = 0.0
    return float(np.sqrt(resid))


def sample_lowrank_quadratic(s: TaylorSurrogate, seed: int, count: int
                             ) -> np.ndarray:
    """Scalar surrogate draws; rank+1 standard normals each, no PDE work."""
    if s.order != 2:
        raise ValueError("sampling requires an order-2 surrogate")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    r = len(s.eigvals)
    y = rng.standard_normal((count, r + 1))
    vals = s.value + residual_sd(s) * y[:, 0]
    if r:
        vals = vals + y[:, 1:] @ s.g_phi + 0.5 * (y[:, 1:] ** 2) @ s.eigvals
    return vals


def evaluate_surrogate(s: TaylorSurrogate, m: np.ndarray, component) -> float:
    """Pointwise surrogate value (needs the component for C^{-1} phi)."""
    dm = np.asarray(m, dtype=float) - s.anchor
    val = s.value + float(np.dot(s.gradient, dm))
    if s.order == 2 and len(s.eigvals):
        proj = s.eigvecs.T @ component.cov_apply_inv(dm)
        val += 0.5 * float(np.dot(s.eigvals, proj ** 2))
    return val


def build_linear(model: QoIModel, component) -> TaylorSurrogate:
    """Order-1 surrogate at the component mean."""
    wp = model.linearize(component.mean)
    g = wp.gradient
    return TaylorSurrogate(order=1, anchor=wp.anchor, value=wp.value,
                           g_cov_g=component.cov_quad_form(g), gradient=g)


def build_quadratic(model: QoIModel, component, rank: int,
                    oversample: int = DEFAULT_OVERSAMPLE,
                    seed: int = 0) -> TaylorSurrogate:
    """Order-2 surrogate with a rank-`rank` generalized Hessian eigensolve.

    Costs 2*(rank + oversample) Hessian actions on top of the state and
    adjoint solves at the anchor (all visible in the model's counter).
    """
    wp = model.linearize(component.mean)
    g = wp.gradient
    lam, phi = randomized_ghep(
        wp.hessvec, component.cov_apply, component.cov_apply_inv,
        dim=model.dim, rank=rank, oversample=oversample, seed=seed)
    return TaylorSurrogate(order=2, anchor=wp.anchor, value=wp.value,
                           g_cov_g=component.cov_quad_form(g), gradient=g,
                           eigvals=lam, eigvecs=phi, g_phi=phi.T @ g,
                           rank=rank, oversample=oversample)


def build_surrogate(model: QoIModel, component, order: int, rank: int = 0,
                    oversample: int = DEFAULT_OVERSAMPLE,
                    seed: int = 0) -> TaylorSurrogate:
    if order == 1:
        return build_linear(model, component)
    return build_quadratic(model, component, rank, oversample, seed)


def mixture_surrogates(model: QoIModel, mix, order: int, rank: int = 0,
                       oversample: int = DEFAULT_OVERSAMPLE,
                       seed: int = 0) -> list[TaylorSurrogate]:
    """One surrogate per mixture component.

    Components anchored at an already-linearized mean (in particular the
    zero-offset component sharing the base mean) reuse the model's cached
    state and adjoint solves. Per-component eigensolve seeds are spawned
    from `seed`; failures are aggregated with their component indices.
    """
    seeds = np.random.SeedSequence(seed).spawn(mix.n_components)
    out, failures = [], {}
    for i, comp in enumerate(mix.components):
        try:
            out.append(build_surrogate(
                model, comp, order, rank, oversample,
                seed=seeds[i].generate_state(1)[0]))
        except Exception as exc:
            failures[i] = exc
    if failures:
        raise SurrogateBuildError(failures)
    return out


def dominant_hessian_direction(model: QoIModel, measure, rank: int = 1,
                               oversample: int = DEFAULT_OVERSAMPLE,
                               seed: int = 0) -> np.ndarray:
    """Leading eigenvector of the covariance-preconditioned Hessian at the mean.

    Used as a mixture split direction that accounts for the nonlinearity of
    the map as well as the input variance. The state/adjoint work at the
    mean stays cached in the model, so a subsequent surrogate build at the
    same anchor adds no unique solves.
    """
    lam, phi = randomized_ghep(
        model.linearize(measure.mean).hessvec, measure.cov_apply,
        measure.cov_apply_inv, dim=model.dim, rank=rank,
        oversample=oversample, seed=seed)
    return phi[:, 0]
