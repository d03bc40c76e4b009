"""Small deterministic numeric kernels shared by the estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

PINV_RTOL = 1e-10


def check_loss(tau: float, u):
    """Asymmetric absolute loss ``u * (tau - 1{u < 0})``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    u = np.asarray(u, dtype=float)
    out = tau * np.maximum(u, 0.0) + (1.0 - tau) * np.maximum(-u, 0.0)
    return float(out) if out.ndim == 0 else out


def empirical_quantile(values, tau: float) -> float:
    """Inverse-CDF (type 1) quantile: the ceil(n * tau)-th order statistic."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empirical_quantile needs at least one value")
    k = max(int(math.ceil(v.size * tau)), 1)
    return float(v[min(k, v.size) - 1])


@dataclass(frozen=True)
class LstsqResult:
    coefficients: np.ndarray
    rank: int
    rank_deficient: bool


def solve_least_squares(X, y) -> LstsqResult:
    """Minimum-norm least squares with a rank-deficiency flag."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n < p:
        raise ValueError(f"need at least as many rows as columns (n={n}, p={p})")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    return LstsqResult(coef, int(rank), int(rank) < p)


def pseudo_inverse(A, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``rtol * s_max`` count as zero."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("pseudo_inverse requires finite entries")
    if A.size == 0 or not np.any(A):
        return np.zeros(A.T.shape)
    return np.linalg.pinv(A, rcond=rtol)


def numerical_rank(A, rtol: float = PINV_RTOL) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variate with ``df`` degrees of freedom."""
    if x < 0:
        raise ValueError(f"chi-square statistic must be nonnegative, got {x}")
    if int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df}")
    if x == 0:
        return 1.0
    return float(stats.chi2.sf(x, int(df)))


class RandomSource:
    """Seeded random stream with deterministic child streams.

    Child ``i`` depends only on ``(seed, path, i)``, so parallel tasks that
    each take their own child produce the same draws regardless of
    scheduling.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(_path)
        self._ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self.generator = np.random.default_rng(self._ss)

    def child(self, index: int) -> "RandomSource":
        return RandomSource(self.seed, self._path + (int(index),))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, path={self._path})"
