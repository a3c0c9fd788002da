"""Gaussian-mixture approximations of the 1D standard normal.

A split replaces N(0,1) by a symmetric mixture of N components that share a
reduced standard deviation sigma = N^(-p). Weights and means come from
minimizing the L2 misfit between the densities, which is available in closed
form through the Gaussian product integral

    int N(x; a, s^2) N(x; b, t^2) dx = N(a - b; 0, s^2 + t^2).

The solver alternates an outer bound-constrained quasi-Newton iteration on
the (nonconvex) mean offsets with an inner nonnegative least-squares solve
for the weights, and keeps the best of several deterministic restarts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import minimize, nnls
from scipy.special import ndtri

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_WINDOW = 12.0  # N(0,1) mass outside [-12, 12] is below 1e-30


class SplitOptimizationError(RuntimeError):
    """Optimizer failed on every restart; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class QuadratureError(RuntimeError):
    pass


@dataclass
class Split1D:
    """Mixture approximation of N(0,1): weights, means, shared sigma.

    `sigmas` is only populated when loading an external library with
    heterogeneous component deviations; splits built here always share one
    sigma = n_components^(-p).
    """

    weights: np.ndarray
    means: np.ndarray
    sigma: float
    p: float | None = None
    tv_error: float = float("nan")
    meta: dict = field(default_factory=dict)
    sigmas: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        if self.weights.shape != self.means.shape or self.weights.ndim != 1:
            raise ValueError("weights and means must be 1D arrays of equal length")
        if self.sigmas is not None:
            self.sigmas = np.asarray(self.sigmas, dtype=float)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_sigmas(self) -> np.ndarray:
        if self.sigmas is not None:
            return self.sigmas
        return np.full(self.n_components, self.sigma)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = self.component_sigmas()
        z = (x[..., None] - self.means) / s
        return np.sum(self.weights / (s * _SQRT_2PI) * np.exp(-0.5 * z * z), axis=-1)

    def check_invariants(self, atol_weights: float = 1e-12,
                         atol_sym: float = 1e-10) -> None:
        """Assert the construction invariants of optimized splits."""
        if abs(self.weights.sum() - 1.0) > atol_weights:
            raise AssertionError("weights do not sum to 1")
        if np.any(self.weights < -atol_weights):
            raise AssertionError("negative weight")
        if np.any(np.diff(self.means) < 0):
            raise AssertionError("means not sorted ascending")
        if np.abs(self.means + self.means[::-1]).max() > atol_sym:
            raise AssertionError("means not symmetric")
        if np.abs(self.weights - self.weights[::-1]).max() > atol_sym:
            raise AssertionError("weights not symmetric")
        if self.p is not None:
            expected = self.n_components ** (-self.p)
            if self.sigma != expected:
                raise AssertionError("sigma differs from n^(-p)")


def _std_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _gauss_cross(a, b, var):
    """int N(x;a,s^2) N(x;b,t^2) dx with var = s^2 + t^2, vectorized."""
    d = np.subtract.outer(a, b)
    return np.exp(-0.5 * d * d / var) / math.sqrt(2.0 * math.pi * var)


def l2_misfit(split: Split1D) -> float:
    """Closed-form squared L2 distance between N(0,1) and the mixture pdf."""
    w, mu = split.weights, split.means
    s = split.component_sigmas()
    const = 1.0 / (2.0 * math.sqrt(math.pi))  # int pdf0^2
    cross = np.exp(-0.5 * mu ** 2 / (1.0 + s ** 2)) / np.sqrt(2 * math.pi * (1 + s ** 2))
    var_ij = np.add.outer(s ** 2, s ** 2)
    d = np.subtract.outer(mu, mu)
    gram = np.exp(-0.5 * d * d / var_ij) / np.sqrt(2 * math.pi * var_ij)
    return float(const - 2.0 * np.dot(w, cross) + w @ gram @ w)


def tv_1d(split: Split1D) -> float:
    """Total variation distance between N(0,1) and the mixture.

    Half the L1 distance of the densities, by adaptive quadrature on
    [-12, 12] with absolute tolerance 1e-8.
    """
    pts = np.unique(np.clip(np.sort(split.means), -_WINDOW + 1e-9, _WINDOW - 1e-9))
    val, abserr = integrate.quad(
        lambda x: abs(_std_pdf(x) - split.pdf(x)),
        -_WINDOW, _WINDOW, points=pts.tolist(), limit=40 + 20 * len(pts),
        epsabs=1e-8, epsrel=1e-10)
    if abserr > 1e-7:
        raise QuadratureError(f"TV quadrature error estimate {abserr:.2e} too large")
    return 0.5 * val


def equispaced_split(n: int, p: float, half_width: float,
                     with_tv: bool = True) -> Split1D:
    """Equally spaced mixture on (-L, L) with density-proportional weights.

    Means sit at the centers of n equal subintervals; weights are
    proportional to the standard normal pdf at the means.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    L = float(half_width)
    k = np.arange(1, n + 1)
    means = -L - L / n + 2.0 * L * k / n
    w = _std_pdf(means)
    w = w / w.sum()
    split = Split1D(w, means, sigma=float(n) ** (-p), p=p,
                    meta={"kind": "equispaced", "half_width": L})
    if with_tv:
        split.tv_error = tv_1d(split)
    return split


# -- L2-optimal splits ------------------------------------------------------

def _expand_symmetric(offsets: np.ndarray, center_weight_slot: bool):
    """Full sorted mean vector from nonnegative pair offsets."""
    if center_weight_slot:
        return np.concatenate([-offsets[::-1], [0.0], offsets])
    return np.concatenate([-offsets[::-1], offsets])


def _solve_weights(offsets: np.ndarray, sigma: float, has_center: bool):
    """Best symmetric weights for fixed mean offsets.

    Works on the grouped basis (center Gaussian, mirrored pairs) so symmetry
    holds exactly; the simplex constraint is enforced by a penalty row in an
    NNLS solve followed by exact renormalization.
    """
    x = offsets
    K = len(x)
    var2 = 2.0 * sigma ** 2
    # pairwise product integrals between mirrored-pair basis functions
    gpp = (_gauss_cross(x, x, var2) + _gauss_cross(x, -x, var2))
    b_pairs = 2.0 * np.exp(-0.5 * x ** 2 / (1 + sigma ** 2)) / math.sqrt(
        2 * math.pi * (1 + sigma ** 2))
    if has_center:
        g0p = 2.0 * _gauss_cross(np.array([0.0]), x, var2)[0]
        g00 = 1.0 / math.sqrt(2 * math.pi * var2)
        G = np.zeros((K + 1, K + 1))
        G[0, 0] = g00
        G[0, 1:] = G[1:, 0] = g0p
        G[1:, 1:] = 2.0 * gpp
        bvec = np.empty(K + 1)
        bvec[0] = 1.0 / math.sqrt(2 * math.pi * (1 + sigma ** 2))
        bvec[1:] = b_pairs  # b_pairs already sums the mirrored pair
        csum = np.concatenate([[1.0], np.full(K, 2.0)])
    else:
        G = 2.0 * gpp
        bvec = b_pairs
        csum = np.full(K, 2.0)
    # G is the Gram matrix of the grouped basis: jitter guards coincident means
    jitter = 1e-12 * max(G.max(), 1.0)
    R = np.linalg.cholesky(G + jitter * np.eye(len(G))).T
    rhs_top = np.linalg.solve(R.T, bvec)
    rho = 1e4 * max(abs(bvec).max(), 1.0)
    A = np.vstack([R, rho * csum])
    rhs = np.concatenate([rhs_top, [rho]])
    w_half, _ = nnls(A, rhs)
    total = np.dot(csum, w_half)
    if total <= 0:
        raise SplitOptimizationError("weight subproblem returned zero mass")
    w_half = w_half / total
    const = 1.0 / (2.0 * math.sqrt(math.pi))
    obj = const - 2.0 * np.dot(bvec, w_half) + w_half @ G @ w_half
    return w_half, float(obj)


def _restart_offsets(n: int, K: int, has_center: bool, sigma: float):
    """Deterministic initial mean offsets for the outer optimizer."""
    inits = []
    for L in (2.0, 3.0, 4.0):
        k = np.arange(1, n + 1)
        means = -L - L / n + 2.0 * L * k / n
        pos = means[means > 1e-12] if has_center else means[means > 0]
        inits.append(np.sort(pos)[:K])
    for c in (0.7, 1.0, 1.3):
        q = (np.arange(1, n + 1) - 0.5) / n
        means = ndtri(q) * c
        pos = means[means > 1e-12] if has_center else means[means > 0]
        inits.append(np.sort(pos)[:K])
    rng = np.random.default_rng(20_000 + n)  # fixed seeds keep runs idempotent
    base = inits[4]
    while len(inits) < 16:
        inits.append(np.sort(np.abs(base * (1 + 0.25 * rng.standard_normal(K))
                                    + 0.1 * sigma * rng.standard_normal(K))))
    return inits


def optimize_split(n: int, p: float = 0.5, max_restarts: int = 16) -> Split1D:
    """L2-optimal symmetric split of N(0,1) with sigma = n^(-p).

    Minimizes the closed-form L2 density misfit over symmetric means and
    simplex weights; the returned split records its TV error and optimizer
    metadata. Raises SplitOptimizationError (carrying the best iterate) if
    every restart fails.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if n == 1:
        return Split1D(np.array([1.0]), np.array([0.0]), sigma=1.0, p=p,
                       tv_error=0.0, meta={"kind": "identity"})

    sigma = float(n) ** (-p)
    has_center = n % 2 == 1
    K = n // 2

    def objective(x):
        offsets = np.sort(x)
        w_half, obj = _solve_weights(offsets, sigma, has_center)
        # envelope gradient: differentiate J at the optimal weights
        means = _expand_symmetric(offsets, has_center)
        if has_center:
            weights = np.concatenate([w_half[:0:-1], [w_half[0]], w_half[1:]])
        else:
            weights = np.concatenate([w_half[::-1], w_half])
        kv = np.exp(-0.5 * means ** 2 / (1 + sigma ** 2)) / math.sqrt(
            2 * math.pi * (1 + sigma ** 2))
        dk = -means / (1 + sigma ** 2) * kv
        d = np.subtract.outer(means, means)
        Gf = np.exp(-0.5 * d * d / (2 * sigma ** 2)) / math.sqrt(4 * math.pi * sigma ** 2)
        dG = -d / (2 * sigma ** 2) * Gf
        dJ_dmu = -2.0 * weights * dk + 2.0 * weights * (dG @ weights)
        grad = 2.0 * dJ_dmu[-K:][np.argsort(np.argsort(x))]
        return obj, grad

    best = None
    failures = []
    restarts = _restart_offsets(n, K, has_center, sigma)[:max_restarts]
    for ridx, x0 in enumerate(restarts):
        try:
            res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                           bounds=[(0.0, _WINDOW)] * K,
                           options={"maxiter": 300, "ftol": 1e-14, "gtol": 1e-10})
        except Exception as exc:  # defensive: scipy failures become restarts
            failures.append(f"restart {ridx}: {exc}")
            continue
        if best is None or res.fun < best[0]:
            best = (res.fun, np.sort(res.x), ridx, bool(res.success))
    if best is None:
        raise SplitOptimizationError(
            "all restarts failed: " + "; ".join(failures), best=None)

    obj, offsets, ridx, converged = best
    w_half, obj = _solve_weights(offsets, sigma, has_center)
    means = _expand_symmetric(offsets, has_center)
    if has_center:
        weights = np.concatenate([w_half[:0:-1], [w_half[0]], w_half[1:]])
    else:
        weights = np.concatenate([w_half[::-1], w_half])
    weights = weights / weights.sum()
    split = Split1D(weights, means, sigma=sigma, p=p,
                    meta={"kind": "l2-optimized", "objective": obj,
                          "restart": ridx, "converged": converged})
    split.tv_error = tv_1d(split)
    return split


# -- library serialization --------------------------------------------------

def save_library(path, splits: list[Split1D]) -> None:
    """Write splits to a JSON library file; floats round-trip bit-exactly."""
    records = []
    for s in splits:
        rec = {
            "n": s.n_components,
            "p": s.p,
            "sigma": s.sigma,
            "weights": s.weights.tolist(),
            "means": s.means.tolist(),
            "tv_error": s.tv_error,
            "meta": s.meta,
        }
        if s.sigmas is not None:
            rec["sigmas"] = s.sigmas.tolist()
        records.append(rec)
    with open(path, "w") as f:
        json.dump({"format": "gmtaylor-split-library", "version": 1,
                   "splits": records}, f, indent=1)


def load_library(path) -> list[Split1D]:
    with open(path) as f:
        data = json.load(f)
    if data.get("format") != "gmtaylor-split-library":
        raise ValueError(f"{path} is not a split library file")
    out = []
    for rec in data["splits"]:
        out.append(Split1D(
            np.array(rec["weights"]), np.array(rec["means"]),
            sigma=rec["sigma"], p=rec["p"], tv_error=rec["tv_error"],
            meta=rec.get("meta", {}),
            sigmas=np.array(rec["sigmas"]) if "sigmas" in rec else None))
    return out
