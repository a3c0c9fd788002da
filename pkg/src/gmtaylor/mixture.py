"""Gaussian-mixture approximations of N(mean, C) built from 1D splits.

A 1D split of the standard normal induces a mixture of the full measure
along any direction psi in range(C): component means shift along psi and
component covariances are symmetric rank-one updates

    C_i = C + (sigma_i^2 - 1) * lambda_psi * psi psi^T,
    lambda_psi = <psi, C^{-1} psi>^{-1}.

Components never materialize C_i; all algebra (inverse, quadratic forms,
trace, sampling) runs through the update stack against the shared base
covariance, which also covers recursively split components carrying more
than one update. Total-variation bookkeeping follows the exact 1D reduction
for a single split and weighted accumulation for recursive splits.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .measure import GaussianMeasure
from .split1d import Split1D

#: reject directions with lambda_psi below this multiple of the top eigenvalue
DIRECTION_CONDITION_FLOOR = 1e-14


@dataclass(frozen=True)
class RankOneUpdate:
    """One split generation: C -> C + (sigma^2 - 1) * lam * psi psi^T."""

    psi: np.ndarray  # unit Euclidean norm
    lam: float       # lambda_psi against the covariance being split
    sigma: float     # component deviation factor from the 1D split

    @property
    def coeff(self) -> float:
        return (self.sigma ** 2 - 1.0) * self.lam


class MixtureComponent:
    """Weighted Gaussian component sharing the base covariance operator."""

    def __init__(self, weight: float, mean: np.ndarray, base: GaussianMeasure,
                 updates: tuple[RankOneUpdate, ...] = (), mu_offset: float = 0.0):
        self.weight = float(weight)
        self.mean = np.asarray(mean, dtype=float)
        self.base = base
        self.updates = tuple(u for u in updates if u.coeff != 0.0)
        self.mu_offset = float(mu_offset)
        self._cache: dict = {}

    # convenience accessors for the most recent split generation
    @property
    def psi(self) -> np.ndarray | None:
        return self.updates[-1].psi if self.updates else None

    @property
    def lam_psi(self) -> float:
        return self.updates[-1].lam if self.updates else float("nan")

    @property
    def sigma(self) -> float:
        return self.updates[-1].sigma if self.updates else 1.0

    @property
    def dim(self) -> int:
        return self.base.dim

    def _coeffs(self) -> np.ndarray:
        return np.array([u.coeff for u in self.updates])

    def _U(self) -> np.ndarray:
        return np.column_stack([u.psi for u in self.updates])

    def cov_apply(self, x: np.ndarray) -> np.ndarray:
        y = self.base.covariance.apply(x)
        for u in self.updates:
            y = y + u.coeff * np.multiply.outer(u.psi, u.psi @ x)
        return y

    def _woodbury(self):
        """Cached pieces of (C + U diag(c) U^T)^{-1} via Woodbury."""
        if "woodbury" not in self._cache:
            U = self._U()
            c = self._coeffs()
            W = self.base.covariance.apply_inv(U)
            S = np.diag(1.0 / c) + U.T @ W
            self._cache["woodbury"] = (W, np.linalg.inv(S))
        return self._cache["woodbury"]

    def cov_apply_inv(self, x: np.ndarray) -> np.ndarray:
        y = self.base.covariance.apply_inv(x)
        if not self.updates:
            return y
        W, Sinv = self._woodbury()
        return y - W @ (Sinv @ (W.T @ x))

    def cov_quad_form(self, g: np.ndarray) -> float:
        val = self.base.cov_quad_form(g)
        for u in self.updates:
            val += u.coeff * np.dot(u.psi, g) ** 2
        return float(val)

    def cov_trace(self) -> float:
        t = self.base.covariance.trace()
        if self.updates:
            t += self._coeffs().sum()  # psi are unit vectors
        return float(t)

    def cov_dense(self) -> np.ndarray:
        C = self.base.covariance.dense()
        for u in self.updates:
            C = C + u.coeff * np.outer(u.psi, u.psi)
        return C

    def _sqrt_update(self):
        """Whitened-space factor: C_i^{1/2} = C^{1/2}(I + P diag(f) P^T)."""
        if "sqrt" not in self._cache:
            cov = self.base.covariance
            E = cov.sqrt_apply_inv(self._U())
            Q, T = np.linalg.qr(E)
            S = (T * self._coeffs()) @ T.T
            s, V = np.linalg.eigh((S + S.T) / 2)
            if np.any(s <= -1.0):
                raise ValueError("component covariance is not positive definite")
            self._cache["sqrt"] = (Q @ V, np.sqrt(1.0 + s) - 1.0)
        return self._cache["sqrt"]

    def sample(self, seed: int, count: int) -> np.ndarray:
        """Draws via the whitened low-rank construction; no dense factors."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        cov = self.base.covariance
        w = rng.standard_normal((cov.dim, count))
        if self.updates:
            P, f = self._sqrt_update()
            w = w + P @ (f[:, None] * (P.T @ w))
        return self.mean + cov.sqrt_apply(w).T

    def density(self, points: np.ndarray) -> np.ndarray:
        C = self.cov_dense()
        diff = np.atleast_2d(points) - self.mean
        Cinv = np.linalg.inv(C)
        _, logdet = np.linalg.slogdet(C)
        q = np.einsum("ij,jk,ik->i", diff, Cinv, diff)
        return np.exp(-0.5 * (q + logdet + diff.shape[1] * np.log(2 * np.pi)))


@dataclass
class GaussianMixtureApprox:
    """Mixture of rank-one-updated Gaussians with TV-error bookkeeping."""

    base: GaussianMeasure
    components: list[MixtureComponent]
    tv_bound: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        w = self.weights
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {w.sum()}, expected 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.base.dim

    def density(self, points: np.ndarray) -> np.ndarray:
        out = np.zeros(np.atleast_2d(points).shape[0])
        for c in self.components:
            out += c.weight * c.density(points)
        return out

    def sd_box(self, nsd: float = 10.0) -> np.ndarray:
        boxes = [self.base.sd_box(nsd)]
        for c in self.components:
            sd = np.sqrt(np.maximum(np.diag(c.cov_dense()), 0.0))
            boxes.append(np.column_stack([c.mean - nsd * sd, c.mean + nsd * sd]))
        lo = np.min([b[:, 0] for b in boxes], axis=0)
        hi = np.max([b[:, 1] for b in boxes], axis=0)
        return np.column_stack([lo, hi])

    def provenance_record(self) -> dict:
        rec = dict(self.provenance)
        rec["n_components"] = self.n_components
        rec["tv_bound"] = self.tv_bound
        rec["weights"] = self.weights.tolist()
        return rec


def _validated_direction(psi: np.ndarray, cov_apply_inv, lambda_max: float):
    psi = np.asarray(psi, dtype=float)
    nrm = np.linalg.norm(psi)
    if nrm == 0.0:
        raise ValueError("direction must be nonzero")
    psi = psi / nrm
    lam = 1.0 / float(np.dot(psi, cov_apply_inv(psi)))
    if not np.isfinite(lam) or lam < DIRECTION_CONDITION_FLOOR * lambda_max:
        raise ValueError(
            f"direction lies outside the well-conditioned range of the "
            f"covariance (lambda_psi={lam:.3e})")
    return psi, lam


def _split_components(base, parent_mean, parent_weight, parent_updates,
                      psi, lam, split: Split1D):
    sigmas = split.component_sigmas()
    comps = []
    for w, mu, sig in zip(split.weights, split.means, sigmas):
        upd = parent_updates + (RankOneUpdate(psi, lam, float(sig)),)
        comps.append(MixtureComponent(
            weight=parent_weight * float(w),
            mean=parent_mean + mu * np.sqrt(lam) * psi,
            base=base, updates=upd, mu_offset=float(mu)))
    return comps


def split_along_kle(measure: GaussianMeasure, basis, mode: int,
                    split: Split1D) -> GaussianMixtureApprox:
    """Mixture from a 1D split along KLE mode `mode` (1-based index)."""
    if not 1 <= mode <= basis.rank:
        raise ValueError(f"mode {mode} out of range 1..{basis.rank}")
    phi = basis.eigenvectors[:, mode - 1]
    lam = float(basis.eigenvalues[mode - 1])
    comps = _split_components(measure, measure.mean, 1.0, (), phi, lam, split)
    return GaussianMixtureApprox(
        base=measure, components=comps, tv_bound=float(split.tv_error),
        provenance={"construction": "kle", "mode": mode,
                    "split_n": split.n_components, "split_p": split.p})


def split_along_direction(measure: GaussianMeasure, psi: np.ndarray,
                          split: Split1D) -> GaussianMixtureApprox:
    """Mixture from a 1D split along an arbitrary direction in range(C)."""
    psi, lam = _validated_direction(
        psi, measure.covariance.apply_inv, measure.covariance.lambda_max())
    comps = _split_components(measure, measure.mean, 1.0, (), psi, lam, split)
    return GaussianMixtureApprox(
        base=measure, components=comps, tv_bound=float(split.tv_error),
        provenance={"construction": "direction", "lambda_psi": lam,
                    "split_n": split.n_components, "split_p": split.p})


def tensor_split(measure: GaussianMeasure, basis, modes: list[int],
                 splits: list[Split1D], max_components: int = 4000
                 ) -> GaussianMixtureApprox:
    """Tensor product of 1D splits along several distinct KLE modes."""
    if len(modes) != len(splits):
        raise ValueError("need one split per mode")
    if len(set(modes)) != len(modes):
        raise ValueError("modes must be distinct")
    total = int(np.prod([s.n_components for s in splits]))
    if total > max_components:
        raise ValueError(f"{total} components exceeds cap {max_components}")
    for mode in modes:
        if not 1 <= mode <= basis.rank:
            raise ValueError(f"mode {mode} out of range 1..{basis.rank}")

    phis = [basis.eigenvectors[:, m - 1] for m in modes]
    lams = [float(basis.eigenvalues[m - 1]) for m in modes]
    comps = []
    index_lists = [range(s.n_components) for s in splits]
    for multi in itertools.product(*index_lists):
        w = 1.0
        mean = measure.mean.copy()
        updates = []
        for k, i in enumerate(multi):
            s = splits[k]
            w *= float(s.weights[i])
            mean = mean + float(s.means[i]) * np.sqrt(lams[k]) * phis[k]
            updates.append(RankOneUpdate(phis[k], lams[k],
                                         float(s.component_sigmas()[i])))
        comps.append(MixtureComponent(w, mean, measure, tuple(updates)))
    tv = float(sum(s.tv_error for s in splits))
    return GaussianMixtureApprox(
        base=measure, components=comps, tv_bound=tv,
        provenance={"construction": "tensor", "modes": list(modes),
                    "split_ns": [s.n_components for s in splits]})


def recursive_split(mix: GaussianMixtureApprox, index: int, psi: np.ndarray,
                    split: Split1D) -> GaussianMixtureApprox:
    """Replace component `index` by its own 1D mixture along `psi`.

    lambda_psi is computed against the component's covariance through its
    rank-one-update inverse; the TV bound grows by the component weight
    times the split's 1D TV error.
    """
    if not 0 <= index < mix.n_components:
        raise ValueError(f"component index {index} out of range")
    parent = mix.components[index]
    psi_n, lam = _validated_direction(
        psi, parent.cov_apply_inv, mix.base.covariance.lambda_max())
    children = _split_components(mix.base, parent.mean, parent.weight,
                                 parent.updates, psi_n, lam, split)
    comps = (mix.components[:index] + children + mix.components[index + 1:])
    prov = dict(mix.provenance)
    prov.setdefault("recursions", []).append(
        {"index": index, "split_n": split.n_components, "lambda_psi": lam})
    return GaussianMixtureApprox(
        base=mix.base, components=comps,
        tv_bound=mix.tv_bound + parent.weight * float(split.tv_error),
        provenance=prov)


def component_sample(component: MixtureComponent, seed: int, count: int
                     ) -> np.ndarray:
    return component.sample(seed, count)


def tv_numeric_2d(measure_a, measure_b, abs_tol: float = 2e-4,
                  nsd: float = 10.0, max_refinements: int = 6) -> float:
    """Numeric TV distance between two 2D densities.

    Tensor-product trapezoid quadrature of 0.5*|pi_a - pi_b| over the union
    of the +/- nsd-sd boxes, refined until successive values differ by less
    than abs_tol / 2.
    """
    if measure_a.dim != 2 or measure_b.dim != 2:
        raise ValueError("tv_numeric_2d requires dimension 2")
    box_a, box_b = measure_a.sd_box(nsd), measure_b.sd_box(nsd)
    lo = np.minimum(box_a[:, 0], box_b[:, 0])
    hi = np.maximum(box_a[:, 1], box_b[:, 1])

    def integrate(m):
        x = np.linspace(lo[0], hi[0], m)
        y = np.linspace(lo[1], hi[1], m)
        X, Y = np.meshgrid(x, y, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        f = 0.5 * np.abs(measure_a.density(pts) - measure_b.density(pts))
        return float(np.trapezoid(np.trapezoid(f.reshape(m, m), y, axis=1), x))

    m = 300
    last = integrate(m)
    for _ in range(max_refinements):
        m = int(m * 1.6)
        cur = integrate(m)
        if abs(cur - last) < abs_tol / 2:
            return cur
        last = cur
    raise RuntimeError("2D TV quadrature did not converge to tolerance")
