"""Parameter-to-QoI model interface and the closed-form test model.

A model maps a parameter vector m to a scalar Q(m) and exposes adjoint-
consistent first and second derivatives. `linearize` returns a work point
that caches whatever state the model needs at an anchor (PDE solutions,
factorizations) so repeated Hessian actions there are cheap; models keep a
small anchor cache so mixture components sharing an anchor reuse the work.

`SolveCounter` tallies the linear-solve traffic: state Newton iterations,
adjoint solves, incremental solves, and unique factorization contexts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveCounter:
    newton_iterations: int = 0
    adjoint_solves: int = 0
    incremental_solves: int = 0
    factorizations: int = 0

    @property
    def total_linear_solves(self) -> int:
        return self.newton_iterations + self.adjoint_solves + self.incremental_solves

    def snapshot(self) -> "SolveCounter":
        return SolveCounter(self.newton_iterations, self.adjoint_solves,
                            self.incremental_solves, self.factorizations)

    def since(self, before: "SolveCounter") -> "SolveCounter":
        return SolveCounter(
            self.newton_iterations - before.newton_iterations,
            self.adjoint_solves - before.adjoint_solves,
            self.incremental_solves - before.incremental_solves,
            self.factorizations - before.factorizations)

    def as_dict(self) -> dict:
        return {"newton_iterations": self.newton_iterations,
                "adjoint_solves": self.adjoint_solves,
                "incremental_solves": self.incremental_solves,
                "factorizations": self.factorizations,
                "total_linear_solves": self.total_linear_solves}


class WorkPoint:
    """Model state linearized at one anchor: value, gradient, Hessian action."""

    def __init__(self, anchor, value, gradient_fn, hessvec_fn):
        self.anchor = np.asarray(anchor, dtype=float)
        self.value = float(value)
        self._gradient_fn = gradient_fn
        self._hessvec_fn = hessvec_fn
        self._gradient = None

    @property
    def gradient(self) -> np.ndarray:
        if self._gradient is None:
            self._gradient = self._gradient_fn()
        return self._gradient

    def hessvec(self, direction: np.ndarray) -> np.ndarray:
        self.gradient  # adjoint state must exist before Hessian actions
        return self._hessvec_fn(direction)


class QoIModel:
    """Base class: scalar QoI with gradient and Hessian-vector products."""

    dim: int
    counter: SolveCounter
    _anchor_cache_size = 4

    def __init__(self):
        self.counter = SolveCounter()
        self._anchor_cache: dict[bytes, WorkPoint] = {}

    def _linearize_impl(self, m: np.ndarray) -> WorkPoint:
        raise NotImplementedError

    def linearize(self, m: np.ndarray) -> WorkPoint:
        """Work point at anchor m; repeated anchors hit a small cache."""
        m = np.asarray(m, dtype=float)
        key = m.tobytes()
        wp = self._anchor_cache.get(key)
        if wp is None:
            wp = self._linearize_impl(m)
            if len(self._anchor_cache) >= self._anchor_cache_size:
                self._anchor_cache.pop(next(iter(self._anchor_cache)))
            self._anchor_cache[key] = wp
        return wp

    def evaluate(self, m: np.ndarray) -> float:
        return self.linearize(m).value

    def gradient(self, m: np.ndarray) -> np.ndarray:
        return self.linearize(m).gradient

    def hessvec(self, m: np.ndarray, direction: np.ndarray) -> np.ndarray:
        return self.linearize(m).hessvec(direction)

    def clone(self) -> "QoIModel":
        raise NotImplementedError


class UnsupportedMomentsError(ValueError):
    """Closed-form moments unavailable; use the Monte Carlo oracle instead."""


class AnalyticModel(QoIModel):
    """Q(m) = exp(a.m) + 0.5 m^T B m with B symmetric low-rank.

    B is given in factored form B = P diag(b) P^T. Closed-form Gaussian
    moments exist for the pure-exponential (b empty or zero) and the pure-
    quadratic (a = 0) cases; the mixed case has no simple closed form.
    """

    def __init__(self, a: np.ndarray, quad_factors=None):
        super().__init__()
        self.a = np.asarray(a, dtype=float)
        self.dim = len(self.a)
        if quad_factors is None:
            self.P = np.zeros((self.dim, 0))
            self.b = np.zeros(0)
        else:
            P, b = quad_factors
            self.P = np.asarray(P, dtype=float)
            self.b = np.asarray(b, dtype=float)
            if self.P.shape != (self.dim, len(self.b)):
                raise ValueError("quadratic factors have inconsistent shapes")

    @property
    def has_linear(self) -> bool:
        return bool(np.any(self.a != 0.0))

    @property
    def has_quadratic(self) -> bool:
        return self.b.size > 0 and bool(np.any(self.b != 0.0))

    def _bmat_apply(self, x: np.ndarray) -> np.ndarray:
        return self.P @ (self.b * (self.P.T @ x))

    def _linearize_impl(self, m: np.ndarray) -> WorkPoint:
        e = float(np.exp(np.dot(self.a, m)))
        value = e + 0.5 * float(np.dot(m, self._bmat_apply(m)))
        grad = e * self.a + self._bmat_apply(m)

        def hessvec(d):
            return e * self.a * np.dot(self.a, d) + self._bmat_apply(d)

        return WorkPoint(m, value, lambda: grad, hessvec)

    def clone(self) -> "AnalyticModel":
        return AnalyticModel(self.a.copy(),
                             (self.P.copy(), self.b.copy()) if self.b.size else None)


def analytic_moments(model: AnalyticModel, component) -> tuple[float, float]:
    """Exact (mean, variance) of the analytic model under a Gaussian.

    `component` is anything with `.mean` and `.cov_apply` (a GaussianMeasure
    or a mixture component). Supported: pure exponential (lognormal moments)
    and pure quadratic (Gaussian quadratic-form moments); the combined case
    raises UnsupportedMomentsError.
    """
    if model.has_linear and model.has_quadratic:
        raise UnsupportedMomentsError(
            "closed-form moments need a = 0 or B = 0; use an MC oracle")
    mbar = component.mean
    if model.has_quadratic:
        P, b = model.P, model.b
        CP = component.cov_apply(P)
        M = P.T @ CP  # P^T C P
        trBC = float(np.dot(b, np.diag(M)))
        tr_BC2 = float(np.einsum("i,j,ij,ji->", b, b, M, M))
        Bm = model._bmat_apply(mbar)
        mean = 1.0 + 0.5 * (trBC + float(np.dot(mbar, Bm)))  # exp(0) = 1
        var = 0.5 * tr_BC2 + float(np.dot(Bm, component.cov_apply(Bm)))
        return mean, var
    # lognormal: Q = exp(a.m), m Gaussian
    s = float(np.dot(model.a, component.cov_apply(model.a)))
    loc = float(np.dot(model.a, mbar))
    mean = np.exp(loc + 0.5 * s)
    var = (np.exp(s) - 1.0) * np.exp(2.0 * loc + s)
    return float(mean), float(var)


def fd_gradient_check(model: QoIModel, m: np.ndarray, direction: np.ndarray,
                      step: float = 1e-4) -> float:
    """Relative error between <grad, d> and a central difference of Q."""
    d = direction / np.linalg.norm(direction)
    qp = model.evaluate(m + step * d)
    qm = model.evaluate(m - step * d)
    fd = (qp - qm) / (2 * step)
    an = float(np.dot(model.gradient(m), d))
    return abs(fd - an) / max(abs(fd), 1e-30)


def fd_hessian_check(model: QoIModel, m: np.ndarray, direction: np.ndarray,
                     step: float = 1e-4) -> float:
    """Relative error between H d and a central difference of the gradient."""
    d = direction / np.linalg.norm(direction)
    gp = model.gradient(m + step * d)
    gm = model.gradient(m - step * d)
    fd = (gp - gm) / (2 * step)
    an = model.hessvec(m, d)
    return float(np.linalg.norm(fd - an) / max(np.linalg.norm(fd), 1e-30))


def hessian_symmetry_check(model: QoIModel, m: np.ndarray, v: np.ndarray,
                           w: np.ndarray) -> float:
    """Relative asymmetry |<Hv,w> - <v,Hw>| / |<Hv,w>|."""
    wp = model.linearize(m)
    hv_w = float(np.dot(wp.hessvec(v), w))
    v_hw = float(np.dot(v, wp.hessvec(w)))
    return abs(hv_w - v_hw) / max(abs(hv_w), 1e-30)
