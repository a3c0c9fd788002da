"""Semilinear advection-diffusion-reaction model on the unit square.

Discrete residual on a cell-centered N x N grid (finite volumes, x-major
ordering):

    R(u, m) = K(m) u + A u + a * u^3 - f

where K(m) is the 5-point diffusion operator with face conductivities given
by the harmonic mean of exp(m) in the adjacent cells, A is first-order
upwind advection for the constant velocity (0.1, 0.1), and f is a Gaussian
source bump. The left boundary is homogeneous Dirichlet (value 0 at the
face, enforced through ghost reflection); all other boundaries are
zero-flux.

Derivatives are exact for the discrete system (discretize-then-optimize):
the gradient costs one adjoint solve with the transposed linearized
operator, each Hessian action two incremental solves reusing the two
factorizations built at the converged state. Linearized operators are
factorized with LAPACK's banded LU; the solve counter reproduces the
state/adjoint/incremental/unique-factorization accounting exactly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .banded import BandedLU
from .measure import Grid
from .model import QoIModel, SolveCounter, WorkPoint

QOI_KINDS = ("l2", "l3", "energy")


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message, residual_norm):
        super().__init__(message)
        self.residual_norm = residual_norm


def _band_transpose(ab: np.ndarray, kl: int, ku: int) -> np.ndarray:
    """Band storage of A^T given band storage of A (kl == ku assumed)."""
    n = ab.shape[1]
    out = np.zeros_like(ab)
    for o in range(-ku, kl + 1):
        src = ab[kl + ku - o]
        if o >= 0:
            out[kl + ku + o, :n - o] = src[o:]
        else:
            out[kl + ku + o, -o:] = src[:n + o]
    return out


class ADRModel(QoIModel):
    """Parameter-to-QoI map for the semilinear ADR equation.

    `qoi` is one of "l2" (integral of u^2), "l3" (integral of u^3), or
    "energy" (integral of exp(m) |grad u|^2, which also depends explicitly
    on the parameter).
    """

    def __init__(self, grid: Grid, qoi: str = "l2",
                 velocity: tuple[float, float] = (0.1, 0.1),
                 reaction: float = 0.01,
                 source_amplitude: float = 1.0,
                 source_width: float = 0.05,
                 source_center: tuple[float, float] = (0.25, 0.5),
                 newton_tol: float = 1e-10,
                 newton_max_iter: int = 25):
        super().__init__()
        if grid.dimension != 2:
            raise ValueError("ADR model requires a 2D grid")
        if qoi not in QOI_KINDS:
            raise ValueError(f"qoi must be one of {QOI_KINDS}")
        self.grid = grid
        self.qoi = qoi
        self.velocity = (float(velocity[0]), float(velocity[1]))
        self.reaction = float(reaction)
        self.source = dict(amplitude=source_amplitude, width=source_width,
                           center=tuple(source_center))
        self.newton_tol = float(newton_tol)
        self.newton_max_iter = int(newton_max_iter)
        self.dim = grid.size
        self._setup_geometry()

    # -- geometry, stencils, and scatter indices ----------------------------

    def _setup_geometry(self):
        N = self.grid.npts
        n = self.dim
        h = self.grid.h
        idx = np.arange(n).reshape(N, N)  # [ix, iy]

        fxL = idx[:-1, :].ravel()
        fxR = idx[1:, :].ravel()
        fyL = idx[:, :-1].ravel()
        fyR = idx[:, 1:].ravel()
        self._faceL = np.concatenate([fxL, fyL])
        self._faceR = np.concatenate([fxR, fyR])
        self._dcells = idx[0, :].ravel()  # left-boundary Dirichlet cells

        xc = self.grid.axis_centers()
        X, Y = np.meshgrid(xc, xc, indexing="ij")
        cx, cy = self.source["center"]
        w = self.source["width"]
        self.f = (self.source["amplitude"]
                  * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))).ravel()

        vx, vy = self.velocity
        # upwind advection for positive velocity components; the zero-flux
        # boundaries contribute nothing (reflected ghost), the Dirichlet
        # inflow contributes 2*vx/h on the diagonal (ghost value -u0)
        rows = np.concatenate([fxR, fxR, fyR, fyR, self._dcells])
        cols = np.concatenate([fxR, fxL, fyR, fyL, self._dcells])
        vals = np.concatenate([
            np.full(fxR.size, vx / h), np.full(fxR.size, -vx / h),
            np.full(fyR.size, vy / h), np.full(fyR.size, -vy / h),
            np.full(self._dcells.size, 2 * vx / h)])
        self._adv = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

        # banded storage layout (kl = ku = N) and scatter indices
        self.kl = self.ku = N
        nrows = 2 * self.kl + self.ku + 1
        self._ab_shape = (nrows, n)

        def flat(r, c):
            return (self.kl + self.ku + r - c) * n + c

        L, R, D = self._faceL, self._faceR, self._dcells
        self._ix_diff = np.concatenate([flat(L, L), flat(R, R),
                                        flat(L, R), flat(R, L), flat(D, D)])
        self._ix_diff_T = np.concatenate([flat(L, L), flat(R, R),
                                          flat(R, L), flat(L, R), flat(D, D)])
        adv_coo = self._adv.tocoo()
        self._adv_band = np.zeros(self._ab_shape)
        np.add.at(self._adv_band.ravel(), flat(adv_coo.row, adv_coo.col),
                  adv_coo.data)
        self._ix_diag = flat(np.arange(n), np.arange(n))
        self._ih2 = 1.0 / h / h

    # -- face conductivities and their m-derivatives ------------------------

    def _face_coeffs(self, m):
        em = np.exp(-m)
        S = em[self._faceL] + em[self._faceR]
        kf = 2.0 / S
        kd = np.exp(m[self._dcells])
        return kf, kd, em, S

    def _diff_weights(self, kf, kd):
        """Scatter weights matching `_ix_diff` for the diffusion operator."""
        a = kf * self._ih2
        d = 2.0 * kd * self._ih2
        return np.concatenate([a, a, -a, -a, d])

    def _diffusion_band(self, m):
        kf, kd, _, _ = self._face_coeffs(m)
        ab = np.bincount(self._ix_diff, weights=self._diff_weights(kf, kd),
                         minlength=self._adv_band.size)
        return ab.reshape(self._ab_shape), kf, kd

    def _k_apply(self, kf, kd, u):
        du = kf * (u[self._faceL] - u[self._faceR]) * self._ih2
        out = np.bincount(self._faceL, weights=du, minlength=self.dim)
        out -= np.bincount(self._faceR, weights=du, minlength=self.dim)
        out[self._dcells] += 2.0 * kd * u[self._dcells] * self._ih2
        return out

    def _kprime_action(self, coeffs, mhat, u):
        """K'(m)[mhat] u via the face-coefficient chain rule."""
        kf, kd, em, S = coeffs
        dL = 2.0 * em[self._faceL] / S ** 2
        dR = 2.0 * em[self._faceR] / S ** 2
        dkf = dL * mhat[self._faceL] + dR * mhat[self._faceR]
        dkd = kd * mhat[self._dcells]
        du = dkf * (u[self._faceL] - u[self._faceR]) * self._ih2
        out = np.bincount(self._faceL, weights=du, minlength=self.dim)
        out -= np.bincount(self._faceR, weights=du, minlength=self.dim)
        out[self._dcells] += 2.0 * dkd * u[self._dcells] * self._ih2
        return out

    def _kprime_adjoint(self, coeffs, u, v):
        """m-space vector y with y . mhat = v^T K'(m)[mhat] u."""
        kf, kd, em, S = coeffs
        ef = ((u[self._faceL] - u[self._faceR])
              * (v[self._faceL] - v[self._faceR]) * self._ih2)
        dL = 2.0 * em[self._faceL] / S ** 2
        dR = 2.0 * em[self._faceR] / S ** 2
        y = np.bincount(self._faceL, weights=dL * ef, minlength=self.dim)
        y += np.bincount(self._faceR, weights=dR * ef, minlength=self.dim)
        y[self._dcells] += kd * 2.0 * u[self._dcells] * v[self._dcells] * self._ih2
        return y

    def _ksecond_adjoint(self, coeffs, u, v, mhat):
        """m-space vector y with y . m' = v^T K''(m)[mhat, m'] u."""
        kf, kd, em, S = coeffs
        eL, eR = em[self._faceL], em[self._faceR]
        hLL = -2.0 * eL / S ** 2 + 4.0 * eL ** 2 / S ** 3
        hRR = -2.0 * eR / S ** 2 + 4.0 * eR ** 2 / S ** 3
        hLR = 4.0 * eL * eR / S ** 3
        mL, mR = mhat[self._faceL], mhat[self._faceR]
        ef = ((u[self._faceL] - u[self._faceR])
              * (v[self._faceL] - v[self._faceR]) * self._ih2)
        y = np.bincount(self._faceL, weights=(hLL * mL + hLR * mR) * ef,
                        minlength=self.dim)
        y += np.bincount(self._faceR, weights=(hLR * mL + hRR * mR) * ef,
                         minlength=self.dim)
        d = self._dcells
        y[d] += kd * mhat[d] * 2.0 * u[d] * v[d] * self._ih2
        return y

    # -- residual, state solve, QoI ------------------------------------------

    def _residual(self, kf, kd, u):
        return (self._k_apply(kf, kd, u) + self._adv @ u
                + self.reaction * u ** 3 - self.f)

    def _solve_state(self, m):
        """Newton with backtracking; returns (u, n_iterations)."""
        kf, kd, em, S = self._face_coeffs(m)
        band_km = None
        u = np.zeros(self.dim)
        fnorm = np.linalg.norm(self.f)
        tol = self.newton_tol * fnorm
        r = self._residual(kf, kd, u)
        rnorm = np.linalg.norm(r)
        nit = 0
        while rnorm > tol:
            if nit >= self.newton_max_iter:
                raise NewtonDivergenceError(
                    f"Newton stalled at |R| = {rnorm:.3e} after {nit} iterations",
                    rnorm)
            if band_km is None:
                diff_band, _, _ = self._diffusion_band(m)
                band_km = diff_band + self._adv_band
            ab = band_km.copy()
            ab.ravel()[self._ix_diag] += 3.0 * self.reaction * u ** 2
            lu = BandedLU(ab, self.kl, self.ku)
            self.counter.factorizations += 1
            du = lu.solve(-r)
            self.counter.newton_iterations += 1
            alpha = 1.0
            while alpha > 1e-6:
                u_new = u + alpha * du
                r_new = self._residual(kf, kd, u_new)
                rnorm_new = np.linalg.norm(r_new)
                if rnorm_new < rnorm:
                    break
                alpha *= 0.5
            else:
                raise NewtonDivergenceError(
                    f"line search failed at |R| = {rnorm:.3e}", rnorm)
            u, r, rnorm = u_new, r_new, rnorm_new
            nit += 1
        return u, nit

    def _qoi_value(self, coeffs, u):
        h2 = self.grid.h ** 2
        if self.qoi == "l2":
            return h2 * float(np.sum(u ** 2))
        if self.qoi == "l3":
            return h2 * float(np.sum(u ** 3))
        kf, kd = coeffs[0], coeffs[1]
        return h2 * float(np.dot(u, self._k_apply(kf, kd, u)))

    def _qoi_du(self, coeffs, u):
        h2 = self.grid.h ** 2
        if self.qoi == "l2":
            return 2.0 * h2 * u
        if self.qoi == "l3":
            return 3.0 * h2 * u ** 2
        return 2.0 * h2 * self._k_apply(coeffs[0], coeffs[1], u)

    def _qoi_duu(self, coeffs, u, uhat):
        h2 = self.grid.h ** 2
        if self.qoi == "l2":
            return 2.0 * h2 * uhat
        if self.qoi == "l3":
            return 6.0 * h2 * u * uhat
        return 2.0 * h2 * self._k_apply(coeffs[0], coeffs[1], uhat)

    # -- work point -----------------------------------------------------------

    def _linearize_impl(self, m):
        m = np.asarray(m, dtype=float)
        if not np.all(np.isfinite(m)):
            raise ValueError("parameter contains non-finite entries")
        u, nit = self._solve_state(m)
        coeffs = self._face_coeffs(m)
        q0 = self._qoi_value(coeffs, u)
        state = {"m": m, "u": u, "coeffs": coeffs, "newton_iterations": nit}

        def jacobian_band():
            if "jband" not in state:
                diff_band, _, _ = self._diffusion_band(m)
                ab = diff_band + self._adv_band
                ab.ravel()[self._ix_diag] += 3.0 * self.reaction * u ** 2
                state["jband"] = ab
            return state["jband"]

        def adjoint_state():
            # transposed linearized operator at the converged state: its own
            # factorization context, shared by all incremental adjoints
            if "v" not in state:
                abT = _band_transpose(jacobian_band(), self.kl, self.ku)
                state["luT"] = BandedLU(abT, self.kl, self.ku)
                self.counter.factorizations += 1
                state["v"] = state["luT"].solve(-self._qoi_du(coeffs, u))
                self.counter.adjoint_solves += 1
            return state["v"]

        def gradient():
            v = adjoint_state()
            g = self._kprime_adjoint(coeffs, u, v)
            if self.qoi == "energy":
                g = g + self.grid.h ** 2 * self._kprime_adjoint(coeffs, u, u)
            return g

        def hessvec(mhat):
            mhat = np.asarray(mhat, dtype=float)
            v = adjoint_state()
            if "lu" not in state:
                state["lu"] = BandedLU(jacobian_band(), self.kl, self.ku)
                self.counter.factorizations += 1
            uhat = state["lu"].solve(-self._kprime_action(coeffs, mhat, u))
            self.counter.incremental_solves += 1
            rhs = (6.0 * self.reaction * u * uhat * v
                   + self._kprime_action(coeffs, mhat, v)
                   + self._qoi_duu(coeffs, u, uhat))
            if self.qoi == "energy":
                rhs = rhs + 2.0 * self.grid.h ** 2 * self._kprime_action(
                    coeffs, mhat, u)
            vhat = state["luT"].solve(-rhs)
            self.counter.incremental_solves += 1
            out = (self._kprime_adjoint(coeffs, u, vhat)
                   + self._kprime_adjoint(coeffs, uhat, v)
                   + self._ksecond_adjoint(coeffs, u, v, mhat))
            if self.qoi == "energy":
                h2 = self.grid.h ** 2
                out = out + h2 * self._ksecond_adjoint(coeffs, u, u, mhat)
                out = out + 2.0 * h2 * self._kprime_adjoint(coeffs, u, uhat)
            return out

        wp = WorkPoint(m, q0, gradient, hessvec)
        wp.state = u
        wp.newton_iterations = nit
        return wp

    def solve_state(self, m) -> np.ndarray:
        """Converged PDE state at parameter m (mainly for inspection)."""
        return self.linearize(m).state

    def evaluate_qoi(self, u, m) -> float:
        """QoI value for a given state/parameter pair."""
        return self._qoi_value(self._face_coeffs(np.asarray(m, dtype=float)),
                               np.asarray(u, dtype=float))

    def clone(self) -> "ADRModel":
        return ADRModel(self.grid, self.qoi, self.velocity, self.reaction,
                        self.source["amplitude"], self.source["width"],
                        self.source["center"], self.newton_tol,
                        self.newton_max_iter)
