"""Randomized solver for the covariance-preconditioned Hessian eigenproblem.

Solves H phi = lam * Cinv phi for a symmetric operator H available only
through matrix-vector products, with C SPD. The double-pass scheme applies
H to a block of k = rank + oversample random vectors, maps through C,
orthonormalizes in the Cinv inner product, and applies H once more to form
the small projected eigenproblem, for 2*k operator applications total.
Returned eigenvectors satisfy phi_i^T Cinv phi_j = delta_ij; eigenvalues
are sorted by descending magnitude with their signs kept (the operator need
not be definite).
"""

from __future__ import annotations

import numpy as np


class EigensolverError(RuntimeError):
    pass


def _cinv_orthonormalize(Y: np.ndarray, cov_apply_inv):
    """Columns spanning range(Y), orthonormal in the Cinv inner product.

    The column count can drop below Y's when the sampled operator is
    numerically rank-deficient; the dropped directions carry (numerically)
    zero eigenvalues.
    """
    Q = Y
    for _ in range(2):  # one reorthogonalization pass for stability
        M = Q.T @ cov_apply_inv(Q)
        M = (M + M.T) / 2
        w, V = np.linalg.eigh(M)
        wmax = w.max() if len(w) else 0.0
        if wmax <= 0.0:
            return np.zeros((Y.shape[0], 0))
        keep = w > wmax * 1e-12
        Q = Q @ (V[:, keep] / np.sqrt(w[keep]))
    return Q


def randomized_ghep(hess_apply, cov_apply, cov_apply_inv, dim: int,
                    rank: int, oversample: int, seed: int):
    """Top-`rank` eigenpairs of H phi = lam Cinv phi by double-pass sampling.

    `hess_apply` acts on single vectors; `cov_apply`/`cov_apply_inv` may act
    on matrices columnwise. Exactly 2*(rank + oversample) Hessian actions
    are performed unless the operator's numerical rank is smaller, in which
    case fewer pairs (and fewer second-pass actions) come back: missing
    eigenvalues are exact zeros and contribute nothing to the trace sums.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank + oversample > dim:
        raise ValueError(
            f"rank + oversample = {rank + oversample} exceeds dimension {dim}")
    k = rank + oversample
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((dim, k))

    HY = np.column_stack([hess_apply(omega[:, j]) for j in range(k)])
    Y = cov_apply(HY)
    Q = _cinv_orthonormalize(Y, cov_apply_inv)
    if Q.shape[1] == 0:
        return np.zeros(0), np.zeros((dim, 0))

    HQ = np.column_stack([hess_apply(Q[:, j]) for j in range(Q.shape[1])])
    T = Q.T @ HQ
    T = (T + T.T) / 2
    vals, vecs = np.linalg.eigh(T)
    order = np.argsort(-np.abs(vals), kind="stable")[:rank]
    return vals[order], Q @ vecs[:, order]


def ghep_residuals(hess_apply, cov_apply_inv, eigvals, eigvecs) -> np.ndarray:
    """Relative residuals |H phi - lam Cinv phi| / |H phi| per eigenpair."""
    out = np.empty(len(eigvals))
    for j, lam in enumerate(eigvals):
        phi = eigvecs[:, j]
        hphi = hess_apply(phi)
        r = hphi - lam * cov_apply_inv(phi)
        out[j] = np.linalg.norm(r) / max(np.linalg.norm(hphi), 1e-300)
    return out
