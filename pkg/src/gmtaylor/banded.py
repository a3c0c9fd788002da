"""Thin wrappers around LAPACK banded factorizations.

The discretized elliptic operators and ADR Jacobians in this package are
5-point stencils on regular grids, so with row-major unknown ordering they
are banded with bandwidth equal to the points-per-axis. Band storage plus
dgbtrf/dgbtrs (general) or pbtrf-style Cholesky (SPD) is considerably faster
than generic sparse LU at the grid sizes this package targets and gives
reusable factorizations for repeated solves.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy.linalg import lapack


class BandedLU:
    """LU factorization of a general banded matrix (LAPACK gbtrf/gbtrs).

    The matrix is given in LAPACK band storage with room for fill-in:
    ``ab`` has shape ``(2*kl + ku + 1, n)`` and ``ab[kl + ku + i - j, j]``
    holds entry ``(i, j)``. Rows ``0..kl-1`` are workspace for the
    factorization and need not be set.
    """

    def __init__(self, ab: np.ndarray, kl: int, ku: int):
        if ab.shape[0] != 2 * kl + ku + 1:
            raise ValueError("band storage must have 2*kl + ku + 1 rows")
        lu, piv, info = lapack.dgbtrf(ab, kl, ku)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded LU factorization failed (info={info})")
        self._lu = lu
        self._piv = piv
        self.kl = kl
        self.ku = ku
        self.n = ab.shape[1]

    def solve(self, b: np.ndarray, trans: bool = False) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, b, self._piv,
                                trans=1 if trans else 0)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded solve failed (info={info})")
        return x


class BandedCholesky:
    """Cholesky factorization of a symmetric positive definite banded matrix.

    ``ab_upper`` has shape ``(ku + 1, n)`` with ``ab_upper[ku + i - j, j]``
    holding entry ``(i, j)`` for ``j - ku <= i <= j`` (upper band form).
    """

    def __init__(self, ab_upper: np.ndarray):
        self._c = cholesky_banded(ab_upper, lower=False)
        self.n = ab_upper.shape[1]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self._c, False), np.asarray(b, dtype=float))


def band_row_index(kl: int, ku: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Row index into dgbtrf-style band storage for entries (rows, cols)."""
    return kl + ku + rows - cols
