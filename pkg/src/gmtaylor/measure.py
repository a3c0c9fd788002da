"""Gaussian measures on regular grids with elliptic-operator covariances.

The reference covariance is C = A^(-2) for the discretized operator
A = delta*I - gamma*Laplacian with zero-flux boundaries, realized with
second-order finite differences on a cell-centered uniform grid over
[0,1]^d (d = 1 or 2). White noise is discretized as i.i.d. standard
normals scaled by h^(-d/2), so as a matrix acting on coefficient vectors

    C = h^(-d) * L^(-2),      L = delta*I - gamma*Delta_h,

which keeps sample statistics stable under grid refinement. The
cell-centered Neumann Laplacian is diagonalized exactly by the tensor
cosine (DCT-II) basis, so the full eigensystem, trace, and pointwise
variance are available analytically; solves go through a banded Cholesky
factorization of L.

A dense-matrix covariance (`DenseCovariance`) implements the same
interface for small synthetic problems and test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .banded import BandedCholesky


class SizeCapError(ValueError):
    """Grid size exceeds the configured dense-factorization cap."""


DEFAULT_SIZE_CAP = 20_000


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on [0,1]^d.

    Cells are indexed in x-major (C) order: flat index = ix * npts + iy in 2D.
    """

    dimension: int
    npts: int  # points per axis

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.npts < 2:
            raise ValueError(f"need at least 2 points per axis, got {self.npts}")

    @property
    def h(self) -> float:
        return 1.0 / self.npts

    @property
    def size(self) -> int:
        return self.npts ** self.dimension

    def axis_centers(self) -> np.ndarray:
        return (np.arange(self.npts) + 0.5) * self.h

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all cells, shape (size, dimension), x-major order."""
        c = self.axis_centers()
        if self.dimension == 1:
            return c[:, None]
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


def _neumann_modes(npts: int, h: float):
    """Eigenpairs of the 1D cell-centered Neumann FD stiffness -Delta_h.

    Eigenvalues s_k = (4/h^2) sin^2(k*pi/(2*npts)), k = 0..npts-1, with
    orthonormal DCT-II eigenvectors v_k(i) ~ cos(k*pi*(i+1/2)/npts).
    """
    k = np.arange(npts)
    s = (4.0 / h / h) * np.sin(k * np.pi / (2 * npts)) ** 2
    i = np.arange(npts)
    V = np.cos(np.pi * np.outer(i + 0.5, k) / npts)
    V *= np.sqrt(2.0 / npts)
    V[:, 0] = np.sqrt(1.0 / npts)
    return s, V


def _stiffness_1d(npts: int, h: float) -> sp.csr_matrix:
    ih2 = 1.0 / h / h
    main = np.full(npts, 2.0 * ih2)
    main[0] = main[-1] = ih2  # zero-flux: boundary cells have one neighbor
    off = np.full(npts - 1, -ih2)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


class CovarianceOperator:
    """C = h^(-d) * (delta*I - gamma*Delta_h)^(-2) on a cell-centered grid.

    Immutable after construction; all methods are safe for concurrent
    read-only use. `apply` performs two banded-Cholesky solves of L,
    `apply_inv` two sparse matvecs.
    """

    def __init__(self, grid: Grid, gamma: float, delta: float,
                 size_cap: int = DEFAULT_SIZE_CAP):
        if gamma <= 0 or delta <= 0:
            raise ValueError("gamma and delta must be positive")
        if grid.size > size_cap:
            raise SizeCapError(
                f"grid size {grid.size} exceeds cap {size_cap}; "
                "dense/banded factorization would be too large")
        self.grid = grid
        self.gamma = float(gamma)
        self.delta = float(delta)
        self.scale = grid.h ** (-grid.dimension)  # white-noise mass factor

        npts, h = grid.npts, grid.h
        s1, V1 = _neumann_modes(npts, h)
        self._axis_eigvals = s1
        self._axis_eigvecs = V1

        S = _stiffness_1d(npts, h)
        if grid.dimension == 1:
            self._L = (delta * sp.identity(npts) + gamma * S).tocsr()
            lap = s1
        else:
            I = sp.identity(npts)
            self._L = (delta * sp.identity(grid.size)
                       + gamma * (sp.kron(S, I) + sp.kron(I, S))).tocsr()
            lap = (s1[:, None] + s1[None, :]).ravel()
        self._op_eigvals = delta + gamma * lap  # eigenvalues of L, x-major

        # upper band form for the SPD Cholesky
        ku = 1 if grid.dimension == 1 else npts
        n = grid.size
        ab = np.zeros((ku + 1, n))
        Lc = self._L.tocoo()
        keep = Lc.row <= Lc.col
        ab[ku + Lc.row[keep] - Lc.col[keep], Lc.col[keep]] = Lc.data[keep]
        self._chol = BandedCholesky(ab)

    @property
    def dim(self) -> int:
        return self.grid.size

    # -- operator actions (x may be a vector or an (n, k) matrix of columns)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * self._chol.solve(self._chol.solve(x))

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        return (self._L @ (self._L @ x)) / self.scale

    def sqrt_apply(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.scale) * self._chol.solve(x)

    def sqrt_apply_inv(self, x: np.ndarray) -> np.ndarray:
        return (self._L @ x) / np.sqrt(self.scale)

    # -- spectral quantities (analytic in the DCT basis)

    def trace(self) -> float:
        return float(self.scale * np.sum(self._op_eigvals ** -2.0))

    def lambda_max(self) -> float:
        """Largest covariance eigenvalue, scale / delta^2 under zero-flux."""
        return float(self.scale * np.min(self._op_eigvals) ** -2.0)

    def eigensystem(self, rank: int):
        """Top-`rank` covariance eigenpairs, eigenvalues descending."""
        lam = self.scale * self._op_eigvals ** -2.0
        order = np.argsort(-lam, kind="stable")[:rank]
        if self.grid.dimension == 1:
            vecs = self._axis_eigvecs[:, order]
        else:
            npts = self.grid.npts
            kx, ky = np.divmod(order, npts)
            V = self._axis_eigvecs
            vecs = np.empty((self.dim, rank))
            for j in range(rank):
                vecs[:, j] = np.outer(V[:, kx[j]], V[:, ky[j]]).ravel()
        return lam[order], vecs

    def pointwise_variance(self) -> np.ndarray:
        """diag(C) for every cell, computed from the tensor eigenbasis."""
        V2 = self._axis_eigvecs ** 2
        if self.grid.dimension == 1:
            return self.scale * (V2 @ self._op_eigvals ** -2.0)
        npts = self.grid.npts
        M = self._op_eigvals.reshape(npts, npts) ** -2.0
        return self.scale * (V2 @ M @ V2.T).ravel()

    def dense(self) -> np.ndarray:
        """Materialize C as a dense matrix (small grids / test oracles)."""
        lam, vecs = self.eigensystem(self.dim)
        return (vecs * lam) @ vecs.T


class DenseCovariance:
    """Dense SPD covariance matrix with the same interface as the elliptic one."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(matrix, matrix.T, atol=1e-12 * np.abs(matrix).max()):
            raise ValueError("covariance must be symmetric")
        w, U = np.linalg.eigh(matrix)
        if w.min() <= 0:
            raise ValueError("covariance must be positive definite")
        self._mat = matrix
        self._w = w
        self._U = U

    @property
    def dim(self) -> int:
        return self._mat.shape[0]

    def apply(self, x):
        return self._U @ ((self._U.T @ x).T * self._w).T

    def apply_inv(self, x):
        return self._U @ ((self._U.T @ x).T / self._w).T

    def sqrt_apply(self, x):
        return self._U @ ((self._U.T @ x).T * np.sqrt(self._w)).T

    def sqrt_apply_inv(self, x):
        return self._U @ ((self._U.T @ x).T / np.sqrt(self._w)).T

    def trace(self) -> float:
        return float(self._w.sum())

    def lambda_max(self) -> float:
        return float(self._w.max())

    def eigensystem(self, rank: int):
        order = np.argsort(-self._w, kind="stable")[:rank]
        return self._w[order], self._U[:, order]

    def pointwise_variance(self) -> np.ndarray:
        return np.diag(self._mat).copy()

    def dense(self) -> np.ndarray:
        return self._mat.copy()


def build_elliptic_covariance(grid: Grid, gamma: float, delta: float,
                              size_cap: int = DEFAULT_SIZE_CAP) -> CovarianceOperator:
    return CovarianceOperator(grid, gamma, delta, size_cap=size_cap)


def correlation_length(gamma: float, delta: float, dimension: int) -> float:
    """Characteristic correlation length sqrt(8*(2 - d/2)*gamma/delta)."""
    nu = 2.0 - dimension / 2.0
    return float(np.sqrt(8.0 * nu * gamma / delta))


def calibrate_elliptic(grid: Grid, corr_length: float, pointwise_var: float,
                       size_cap: int = DEFAULT_SIZE_CAP) -> tuple[float, float]:
    """Choose (gamma, delta) hitting a target correlation length and variance.

    The ratio delta/gamma is fixed by the correlation-length formula; the
    overall scale is then set so the cell-averaged pointwise variance of C
    equals `pointwise_var` (variance scales as gamma^(-2) at fixed ratio).
    """
    if corr_length <= 0 or pointwise_var <= 0:
        raise ValueError("targets must be positive")
    nu = 2.0 - grid.dimension / 2.0
    ratio = 8.0 * nu / corr_length ** 2
    probe = CovarianceOperator(grid, 1.0, ratio, size_cap=size_cap)
    v1 = float(np.mean(probe.pointwise_variance()))
    gamma = float(np.sqrt(v1 / pointwise_var))
    return gamma, ratio * gamma


@dataclass(frozen=True)
class GaussianMeasure:
    """N(mean, C) over the grid's coefficient vectors."""

    mean: np.ndarray
    covariance: CovarianceOperator | DenseCovariance

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        if m.shape != (self.covariance.dim,):
            raise ValueError(
                f"mean length {m.shape} does not match covariance dim {self.covariance.dim}")
        object.__setattr__(self, "mean", m)

    @property
    def dim(self) -> int:
        return self.covariance.dim

    def sample(self, seed: int, count: int) -> np.ndarray:
        """`count` i.i.d. draws as rows, deterministic in `seed`."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((self.dim, count))
        return self.mean + self.covariance.sqrt_apply(w).T

    def whiten(self, m: np.ndarray) -> np.ndarray:
        return self.covariance.sqrt_apply_inv(np.asarray(m, dtype=float) - self.mean)

    def unwhiten(self, w: np.ndarray) -> np.ndarray:
        return self.mean + self.covariance.sqrt_apply(np.asarray(w, dtype=float))

    # component-like interface shared with mixture components
    def cov_apply(self, x):
        return self.covariance.apply(x)

    def cov_apply_inv(self, x):
        return self.covariance.apply_inv(x)

    def cov_quad_form(self, g: np.ndarray) -> float:
        return float(np.dot(g, self.covariance.apply(g)))

    def cov_trace(self) -> float:
        return self.covariance.trace()

    def density(self, points: np.ndarray) -> np.ndarray:
        """Gaussian pdf at rows of `points` (intended for dim <= 3 oracles)."""
        C = self.covariance.dense()
        d = self.dim
        diff = np.atleast_2d(points) - self.mean
        Cinv = np.linalg.inv(C)
        _, logdet = np.linalg.slogdet(C)
        q = np.einsum("ij,jk,ik->i", diff, Cinv, diff)
        return np.exp(-0.5 * (q + logdet + d * np.log(2 * np.pi)))

    def sd_box(self, nsd: float = 10.0) -> np.ndarray:
        """Per-axis [low, high] bounds mean +/- nsd marginal sd, shape (d, 2)."""
        sd = np.sqrt(self.covariance.pointwise_variance())
        return np.column_stack([self.mean - nsd * sd, self.mean + nsd * sd])


@dataclass(frozen=True)
class KLBasis:
    """Leading eigenpairs of a covariance operator, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n, rank) columns, Euclidean-orthonormal

    @property
    def rank(self) -> int:
        return len(self.eigenvalues)


def kle(covariance, rank: int) -> KLBasis:
    """Karhunen-Loeve basis: top-`rank` eigenpairs of the covariance."""
    if not 1 <= rank <= covariance.dim:
        raise ValueError(f"rank must be in [1, {covariance.dim}], got {rank}")
    lam, vecs = covariance.eigensystem(rank)
    return KLBasis(np.asarray(lam, dtype=float), np.asarray(vecs, dtype=float))
