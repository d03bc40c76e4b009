"""Primal-dual interior point solver for check-loss minimization.

The quantile regression problem ``min_b sum_i rho_{r_i}(y_i - x_i'b)`` is
solved through its bounded dual

    max  y'd   s.t.  X'd = X'(1 - r),  0 <= d <= 1

with a Frisch-Newton (Mehrotra predictor-corrector) iteration. Each
iteration needs solves with ``X' diag(q) X``; how those are done is
delegated to a *system* object so that designs whose leading columns are
firm dummies can be handled by block elimination instead of forming a
dense (N + k) x (N + k) matrix.

Rows may carry their own quantile level ``r_i``. Penalty pseudo-rows
``2*lam*e_i'`` with response 0 and level 0.5 contribute ``lam*|alpha_i|``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

_STEP = 0.99995
_BIG = 1e20


class ConvergenceError(RuntimeError):
    """Raised when the iteration cap is hit before the duality gap closes.

    ``coefficients`` holds the iterate with the smallest certified gap.
    """

    def __init__(self, message: str, coefficients: np.ndarray, gap: float, iterations: int):
        super().__init__(message)
        self.coefficients = coefficients
        self.gap = gap
        self.iterations = iterations


def _chol_solve(Q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(Q, check_finite=False), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(Q, rhs, rcond=None)[0]


class DenseSystem:
    """Rows of an ordinary dense design matrix."""

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.n_rows, self.n_params = self.X.shape

    def matvec(self, b):
        return self.X @ b

    def rmatvec(self, v):
        return self.X.T @ v

    def normal_solve(self, q, rhs):
        Q = self.X.T @ (q[:, None] * self.X)
        return _chol_solve(Q, rhs)


class FirmEffectsSystem:
    """Design ``[D, Z]`` with D the firm-dummy block, plus optional penalty rows.

    Parameters are ordered ``(alpha_1..alpha_N, slopes)``. Data rows come
    first, then (if ``penalty_scale > 0``) one pseudo-row per firm.
    """

    def __init__(self, codes: np.ndarray, n_firms: int, Z: np.ndarray, penalty_scale: float = 0.0):
        self.codes = np.asarray(codes, dtype=np.intp)
        self.n_firms = int(n_firms)
        Z = np.asarray(Z, dtype=float)
        self.Z = Z.reshape(len(self.codes), -1)
        self.k = self.Z.shape[1]
        self.pen = float(penalty_scale)
        self.n_data = len(self.codes)
        self.n_rows = self.n_data + (self.n_firms if self.pen > 0 else 0)
        self.n_params = self.n_firms + self.k

    def _firm_sum(self, v):
        return np.bincount(self.codes, weights=v, minlength=self.n_firms)

    def matvec(self, b):
        alpha, slope = b[: self.n_firms], b[self.n_firms:]
        out = alpha[self.codes] + self.Z @ slope
        if self.pen > 0:
            out = np.concatenate([out, self.pen * alpha])
        return out

    def rmatvec(self, v):
        vd = v[: self.n_data]
        top = self._firm_sum(vd)
        if self.pen > 0:
            top = top + self.pen * v[self.n_data:]
        return np.concatenate([top, self.Z.T @ vd])

    def normal_solve(self, q, rhs):
        qd = q[: self.n_data]
        diag = self._firm_sum(qd)
        if self.pen > 0:
            diag = diag + self.pen**2 * q[self.n_data:]
        r1, r2 = rhs[: self.n_firms], rhs[self.n_firms:]
        if self.k == 0:
            return r1 / diag
        qZ = qd[:, None] * self.Z
        B = np.zeros((self.n_firms, self.k))
        np.add.at(B, self.codes, qZ)
        C = self.Z.T @ qZ
        Binv = B / diag[:, None]
        S = C - B.T @ Binv
        d2 = _chol_solve(S, r2 - Binv.T @ r1)
        d1 = (r1 - B @ d2) / diag
        return np.concatenate([d1, d2])


def _step_bound(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return _BIG
    return float(np.min(-x[neg] / dx[neg]))


def check_objective(resid: np.ndarray, r: np.ndarray) -> float:
    return float(np.sum(r * np.maximum(resid, 0.0) + (1.0 - r) * np.maximum(-resid, 0.0)))


@dataclass
class IpmResult:
    coefficients: np.ndarray
    objective: float
    gap: float
    iterations: int
    dual: np.ndarray


def solve(system, y: np.ndarray, r: np.ndarray, tol: float = 1e-8, max_iter: int = 200) -> IpmResult:
    """Minimize ``sum rho_{r_i}(y_i - row_i'b)`` over b.

    Stops once the certified gap between the check-loss objective and the
    dual value is at most ``tol * (1 + |objective|)``.
    """
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    n = system.n_rows
    c = -y
    x = 1.0 - r
    u = np.ones(n)
    s = u - x

    # least-squares start for the dual multipliers
    ydual = system.normal_solve(np.ones(n), system.rmatvec(c))
    res = c - system.matvec(ydual)
    # pad both slacks where the residual is tiny so that z - w = res exactly
    z = np.maximum(res, 0.0) + np.where(np.abs(res) < 1e-3, 1e-3, 0.0)
    w = z - res

    def certified(ydual, x):
        coef = -ydual
        resid = y - system.matvec(coef)
        f = check_objective(resid, r)
        dual_val = float(y @ (x - (1.0 - r)))
        return coef, f, max(f - dual_val, 0.0)

    coef, f, gap = certified(ydual, x)
    best = (gap, coef, f, x.copy())
    it = 0
    while gap > tol * (1.0 + abs(f)) and it < max_iter:
        it += 1
        q = 1.0 / (z / x + w / s)
        rr = z - w
        rhs = system.rmatvec(q * rr)
        dy = system.normal_solve(q, rhs)
        dx = q * (system.matvec(dy) - rr)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(_STEP * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
        fd = min(_STEP * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            rhs2 = rhs + system.rmatvec(q * (dxdz - dsdw - xi))
            dy = system.normal_solve(q, rhs2)
            dx = q * (system.matvec(dy) + xi - rr - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(_STEP * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
            fd = min(_STEP * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        x = x + fp * dx
        s = s + fp * ds
        ydual = ydual + fd * dy
        w = w + fd * dw
        z = z + fd * dz
        if not (np.all(np.isfinite(ydual)) and np.all(np.isfinite(x))):
            break
        coef, f, gap = certified(ydual, x)
        if gap < best[0]:
            best = (gap, coef, f, x.copy())

    gap, coef, f, x = best
    if gap > tol * (1.0 + abs(f)):
        raise ConvergenceError(
            f"interior point stopped after {it} iterations with duality gap {gap:.3e}",
            coef, gap, it,
        )
    return IpmResult(coef, f, gap, it, x)
