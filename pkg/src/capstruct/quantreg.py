"""Cross-sectional quantile regression."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ipm
from .ipm import ConvergenceError
from .numerics import RandomSource, check_loss

__all__ = [
    "ConvergenceError",
    "RankDeficientError",
    "QrFit",
    "Certificate",
    "BootstrapResult",
    "fit_quantile",
    "certify_optimality",
    "brute_force_qr",
    "bootstrap_covariance",
]

BRUTE_FORCE_MAX_N = 14
BRUTE_FORCE_MAX_P = 3


class RankDeficientError(ValueError):
    def __init__(self, dependent: Sequence[str]):
        self.dependent = list(dependent)
        super().__init__(f"design is rank deficient; dependent columns: {', '.join(self.dependent)}")


@dataclass(frozen=True)
class Certificate:
    passed: bool
    n_negative: int
    n_zero: int
    n_tau: float


@dataclass
class QrFit:
    tau: float
    coefficients: np.ndarray
    objective: float
    residuals: np.ndarray
    iterations: int
    gap: float
    names: list[str] = field(default_factory=list)
    certificate: Certificate | None = None

    @property
    def nobs(self) -> int:
        return len(self.residuals)


def _validate_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")


def dependent_columns(X: np.ndarray, names: Sequence[str] | None = None, rtol: float = 1e-10) -> list[str]:
    """Columns that are linear combinations of earlier columns (greedy left to right)."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    kept: list[int] = []
    dependent = []
    for j in range(p):
        trial = Xs[:, kept + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] <= rtol * max(s[0], 1.0) or not np.any(X[:, j]):
            dependent.append(names[j])
        else:
            kept.append(j)
    return dependent


def _vertex_polish(X, y, tau, coef, objective):
    """Try the basic solution through the p smallest residuals.

    Interior point iterates stop inside the optimal face; when the
    interpolating vertex is at least as good it is returned instead.
    """
    n, p = X.shape
    order = np.argsort(np.abs(y - X @ coef), kind="stable")
    rows: list[int] = []
    for i in order:
        cand = rows + [int(i)]
        if np.linalg.matrix_rank(X[cand]) == len(cand):
            rows = cand
            if len(rows) == p:
                break
    if len(rows) < p:
        return coef, objective
    try:
        vcoef = np.linalg.solve(X[rows], y[rows])
    except np.linalg.LinAlgError:
        return coef, objective
    vobj = float(np.sum(check_loss(tau, y - X @ vcoef)))
    if vobj <= objective:
        return vcoef, vobj
    return coef, objective


def fit_quantile(X, y, tau: float, *, names: Sequence[str] | None = None, tol: float = 1e-8,
                 max_iter: int = 200, polish: bool = True) -> QrFit:
    """Minimize total check loss ``sum rho_tau(y - X b)``.

    Parameters
    ----------
    X : (n, p) array
        Design matrix; include a column of ones for an intercept.
    y : (n,) array
    tau : float
        Quantile level in (0, 1).
    polish : bool
        Replace the interior point iterate by the interpolating vertex
        through its p smallest residuals when that is no worse.

    Raises
    ------
    RankDeficientError
        If a column of X is a linear combination of the others.
    ConvergenceError
        If the duality gap does not close within ``max_iter`` iterations.
    """
    _validate_tau(tau)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n != len(y):
        raise ValueError(f"X has {n} rows but y has {len(y)} entries")
    if n <= p:
        raise ValueError(f"need n > p (n={n}, p={p})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(dependent_columns(X, names))

    res = ipm.solve(ipm.DenseSystem(X), y, np.full(n, tau), tol=tol, max_iter=max_iter)
    coef, obj = res.coefficients, res.objective
    if polish:
        coef, obj = _vertex_polish(X, y, tau, coef, obj)
    resid = y - X @ coef
    fit = QrFit(tau, coef, float(np.sum(check_loss(tau, resid))), resid,
                res.iterations, res.gap, names)
    fit.certificate = certify_optimality(fit, y=y)
    return fit


def certify_optimality(fit: QrFit, n: int | None = None, tau: float | None = None, *,
                       y=None, tol: float | None = None) -> Certificate:
    """Residual-sign counting check ``N- <= n*tau <= N- + N0``.

    Zero residuals are those within ``1e-7 * scale(y)`` where scale is the
    largest absolute response (at least 1). Necessary for optimality
    whenever the design has an intercept.
    """
    resid = np.asarray(fit.residuals, dtype=float)
    n = len(resid) if n is None else int(n)
    tau = fit.tau if tau is None else float(tau)
    if tol is None:
        if y is None:
            y = resid
        tol = 1e-7 * max(1.0, float(np.max(np.abs(y))) if len(y) else 1.0)
    n_neg = int(np.sum(resid < -tol))
    n_zero = int(np.sum(np.abs(resid) <= tol))
    n_tau = n * tau
    slack = 1e-12 * max(n, 1)
    passed = (n_neg <= n_tau + slack) and (n_tau <= n_neg + n_zero + slack)
    return Certificate(bool(passed), n_neg, n_zero, n_tau)


def brute_force_qr(X, y, tau: float) -> tuple[float, np.ndarray]:
    """Reference optimum by enumerating every interpolating p-subset.

    Some optimum of the LP passes through p observations, so the best
    exact-interpolation fit over all nonsingular subsets is optimal.
    Only for tiny problems (n <= 14, p <= 3).
    """
    _validate_tau(tau)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n > BRUTE_FORCE_MAX_N or p > BRUTE_FORCE_MAX_P:
        raise ValueError(
            f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, p <= {BRUTE_FORCE_MAX_P} (got n={n}, p={p})"
        )
    best_obj, best_coef = np.inf, None
    for rows in itertools.combinations(range(n), p):
        sub = X[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        coef = np.linalg.solve(sub, y[list(rows)])
        obj = float(np.sum(check_loss(tau, y - X @ coef)))
        if obj < best_obj:
            best_obj, best_coef = obj, coef
    if best_coef is None:
        raise ValueError("every p-subset of rows is singular")
    return best_obj, best_coef


@dataclass
class BootstrapResult:
    covariance: np.ndarray
    standard_errors: np.ndarray
    replicates: np.ndarray
    draws: int


def _resample_rows(rng: np.random.Generator, n: int, clusters) -> np.ndarray:
    if clusters is None:
        return rng.integers(0, n, size=n)
    labels, inverse = np.unique(clusters, return_inverse=True)
    members = [np.flatnonzero(inverse == g) for g in range(len(labels))]
    picks = rng.integers(0, len(labels), size=len(labels))
    return np.concatenate([members[g] for g in picks])


def run_bootstrap(refit, n_units_draw, B: int, rng: RandomSource, n_jobs: int = 1) -> BootstrapResult:
    """Shared replicate loop.

    ``n_units_draw(gen)`` returns the resampled index set for one draw and
    ``refit(idx)`` the coefficient vector (raising on failure). Replicate r
    uses child stream r; failed replicates are redrawn from further
    children, up to ``10 * B`` draws in total.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2 replicates")

    def attempt(r):
        gen = rng.child(r).generator
        try:
            return refit(n_units_draw(gen))
        except (RankDeficientError, ConvergenceError, ValueError, np.linalg.LinAlgError):
            return None

    cap = 10 * B
    results: list[np.ndarray] = []
    next_draw = 0
    while len(results) < B and next_draw < cap:
        batch = list(range(next_draw, min(next_draw + (B - len(results)), cap)))
        next_draw = batch[-1] + 1
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                out = list(pool.map(attempt, batch))
        else:
            out = [attempt(r) for r in batch]
        results.extend(o for o in out if o is not None)
    if len(results) < B:
        raise RuntimeError(f"only {len(results)} of {B} bootstrap replicates succeeded in {cap} draws")
    reps = np.vstack(results[:B])
    cov = np.atleast_2d(np.cov(reps, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    return BootstrapResult(cov, np.sqrt(np.clip(np.diag(cov), 0.0, None)), reps, next_draw)


def bootstrap_covariance(X, y, tau: float, B: int, rng: RandomSource, clusters=None,
                         n_jobs: int = 1) -> BootstrapResult:
    """Pairs (or cluster) bootstrap covariance of quantile regression coefficients."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)

    def refit(idx):
        return fit_quantile(X[idx], y[idx], tau).coefficients

    return run_bootstrap(refit, lambda g: _resample_rows(g, n, clusters), B, rng, n_jobs)
