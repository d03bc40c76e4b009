"""Conditional-mean panel estimators and chi-square specification tests."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import DesignMatrix
from .numerics import chi_square_sf, numerical_rank, pseudo_inverse, solve_least_squares

logger = logging.getLogger(__name__)

COV_TYPES = ("conventional", "clustered")


class AbsorbedRegressorWarning(UserWarning):
    """A regressor has no within-firm variation and was dropped."""


class EstimationError(RuntimeError):
    pass


@dataclass
class MeanFit:
    kind: str
    names: list[str]
    params: np.ndarray
    cov: np.ndarray
    sigma2: float
    nobs: int
    n_firms: int
    constant: float = float("nan")
    effects: dict = field(default_factory=dict)
    cov_type: str = "conventional"
    dropped: list[str] = field(default_factory=list)
    theta: np.ndarray | None = None
    sigma2_alpha: float | None = None

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def coef(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.params.tolist()))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    names: tuple[str, ...] = ()

    def rejects(self, level: float = 0.05) -> bool:
        return self.p_value < level


def _group_means(values: np.ndarray, codes: np.ndarray, n_groups: int) -> np.ndarray:
    counts = np.bincount(codes, minlength=n_groups).astype(float)
    if values.ndim == 1:
        return np.bincount(codes, weights=values, minlength=n_groups) / counts
    out = np.empty((n_groups, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(codes, weights=values[:, j], minlength=n_groups)
    return out / counts[:, None]


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _sandwich(Xt: np.ndarray, resid: np.ndarray, codes: np.ndarray, n_groups: int, bread: np.ndarray) -> np.ndarray:
    scores = Xt * resid[:, None]
    g = np.zeros((n_groups, Xt.shape[1]))
    np.add.at(g, codes, scores)
    meat = g.T @ g
    adj = n_groups / (n_groups - 1) if n_groups > 1 else 1.0
    return _symmetrize(adj * bread @ meat @ bread)


def _drop_singletons(design: DesignMatrix) -> DesignMatrix:
    counts = np.bincount(design.firm_codes, minlength=design.n_firms)
    single = counts[design.firm_codes] < 2
    if single.any():
        lonely = [design.firms[i] for i in np.flatnonzero(counts < 2)]
        logger.warning("dropping %d firm(s) with a single design row: %s", len(lonely), lonely[:10])
        design = design.take(np.flatnonzero(~single))
    return design


def fit_pooled(design: DesignMatrix) -> MeanFit:
    """OLS with a common constant and no firm effects."""
    n = design.nobs
    X = np.column_stack([np.ones(n), design.X])
    sol = solve_least_squares(X, design.y)
    if sol.rank_deficient:
        raise EstimationError("pooled design is rank deficient")
    resid = design.y - X @ sol.coefficients
    dof = n - X.shape[1]
    sigma2 = float(resid @ resid / dof)
    cov = _symmetrize(sigma2 * np.linalg.inv(X.T @ X))
    return MeanFit("pooled", list(design.names), sol.coefficients[1:], cov[1:, 1:], sigma2, n,
                   design.n_firms, constant=float(sol.coefficients[0]))


def fit_fixed_effects(design: DesignMatrix, cov_type: str = "conventional") -> MeanFit:
    """Within estimator with firm effects.

    Effects are reported demeaned across firms, with their average as the
    grand constant: fitted value = constant + effect_i + x'b.
    """
    if cov_type not in COV_TYPES:
        raise ValueError(f"cov_type must be one of {COV_TYPES}")
    design = _drop_singletons(design)
    codes, N = design.firm_codes, design.n_firms
    Xm = _group_means(design.X, codes, N)
    ym = _group_means(design.y, codes, N)
    Xt = design.X - Xm[codes]
    yt = design.y - ym[codes]

    scale = np.sqrt(np.sum(design.X**2, axis=0))
    scale[scale == 0] = 1.0
    within = np.sqrt(np.sum(Xt**2, axis=0)) / scale
    absorbed = [n for n, v in zip(design.names, within) if v < 1e-10]
    for name in absorbed:
        msg = f"regressor '{name}' is constant within every firm and was dropped"
        warnings.warn(msg, AbsorbedRegressorWarning, stacklevel=2)
        logger.warning(msg)
    if absorbed:
        design = design.drop_columns(absorbed)
        keep = [j for j, v in enumerate(within) if v >= 1e-10]
        Xt, Xm = Xt[:, keep], Xm[:, keep]
    n, p = Xt.shape
    if p == 0:
        raise EstimationError("no regressor has within-firm variation")
    dof = n - p - N
    if dof <= 0:
        raise EstimationError(f"fixed-effects model is under-identified (n={n}, p={p}, firms={N})")
    sol = solve_least_squares(Xt, yt)
    if sol.rank_deficient:
        raise EstimationError("within-transformed design is rank deficient")
    b = sol.coefficients
    resid = yt - Xt @ b
    sigma2 = float(resid @ resid / dof)
    bread = np.linalg.inv(Xt.T @ Xt)
    if cov_type == "clustered":
        cov = _sandwich(Xt, resid, codes, N, bread)
    else:
        cov = _symmetrize(sigma2 * bread)
    alpha = ym - Xm @ b
    const = float(alpha.mean())
    effects = {f: float(a - const) for f, a in zip(design.firms, alpha)}
    return MeanFit("fixed_effects", list(design.names), b, cov, sigma2, n, N, const, effects,
                   cov_type, absorbed)


def fit_random_effects(design: DesignMatrix, cov_type: str = "conventional") -> MeanFit:
    """Feasible GLS with Swamy-Arora variance components.

    sigma2_e comes from the within regression and sigma2_alpha from the
    between regression on firm means (floored at zero); firm i is
    quasi-demeaned with theta_i = 1 - sqrt(s2e / (s2e + T_i * s2a)).
    """
    if cov_type not in COV_TYPES:
        raise ValueError(f"cov_type must be one of {COV_TYPES}")
    design = _drop_singletons(design)
    codes, N = design.firm_codes, design.n_firms
    n, p = design.X.shape
    T_i = np.bincount(codes, minlength=N).astype(float)

    Xm = _group_means(design.X, codes, N)
    ym = _group_means(design.y, codes, N)
    Xt = design.X - Xm[codes]
    yt = design.y - ym[codes]
    bw = solve_least_squares(Xt, yt).coefficients
    rw = yt - Xt @ bw
    dof_w = n - N - numerical_rank(Xt)
    if dof_w <= 0:
        raise EstimationError("not enough within variation for the idiosyncratic variance")
    s2e = float(rw @ rw / dof_w)
    if not s2e > 0:
        raise EstimationError("estimated idiosyncratic variance is not positive; degenerate fit")

    Xb = np.column_stack([np.ones(N), Xm])
    bb = solve_least_squares(Xb, ym)
    rb = ym - Xb @ bb.coefficients
    dof_b = N - bb.rank
    if dof_b > 0:
        s2b = float(rb @ rb / dof_b)
        t_bar = N / float(np.sum(1.0 / T_i))
        s2a = max(s2b - s2e / t_bar, 0.0)
    else:
        s2a = 0.0

    theta = 1.0 - np.sqrt(s2e / (s2e + T_i * s2a))
    th = theta[codes]
    Xs = np.column_stack([1.0 - th, design.X - th[:, None] * Xm[codes]])
    ys = design.y - th * ym[codes]
    sol = solve_least_squares(Xs, ys)
    if sol.rank_deficient:
        raise EstimationError("random-effects design is rank deficient")
    coef = sol.coefficients
    resid = ys - Xs @ coef
    sigma2 = float(resid @ resid / (n - p - 1))
    bread = np.linalg.inv(Xs.T @ Xs)
    if cov_type == "clustered":
        cov = _sandwich(Xs, resid, codes, N, bread)
    else:
        cov = _symmetrize(sigma2 * bread)
    return MeanFit("random_effects", list(design.names), coef[1:], cov[1:, 1:], sigma2, n, N,
                   float(coef[0]), cov_type=cov_type, theta=theta, sigma2_alpha=s2a)


def hausman_test(fe: MeanFit, re: MeanFit, rtol: float = 1e-10) -> TestResult:
    """Contrast of FE and RE slopes on their common regressors.

    Uses the pseudo-inverse of V_fe - V_re, with df equal to its numerical
    rank, so an indefinite difference still yields a statistic.
    """
    common = [n for n in fe.names if n in re.names]
    if not common:
        raise EstimationError("FE and RE fits share no regressors")
    i_fe = [fe.names.index(n) for n in common]
    i_re = [re.names.index(n) for n in common]
    d = fe.params[i_fe] - re.params[i_re]
    V = fe.cov[np.ix_(i_fe, i_fe)] - re.cov[np.ix_(i_re, i_re)]
    V = _symmetrize(V)
    df = numerical_rank(V, rtol)
    if not np.any(d) or df == 0:
        return TestResult(0.0, df, 1.0, tuple(common))
    H = max(float(d @ pseudo_inverse(V, rtol) @ d), 0.0)
    p = chi_square_sf(H, df) if H > 0 else 1.0
    return TestResult(H, df, p, tuple(common))


def wald_test(fit, names: Sequence[str], rtol: float = 1e-10) -> TestResult:
    """Joint test that the named coefficients are all zero.

    ``fit`` needs ``names``, ``params`` and ``cov``. A singular covariance
    block falls back to the pseudo-inverse with df set to its rank.
    """
    names = list(names)
    if not names:
        raise ValueError("wald_test needs at least one coefficient")
    unknown = [n for n in names if n not in fit.names]
    if unknown:
        raise KeyError(f"unknown coefficient(s): {unknown}")
    if fit.cov is None:
        raise EstimationError("fit has no covariance matrix")
    idx = [fit.names.index(n) for n in names]
    b = np.asarray(fit.params, dtype=float)[idx]
    V = _symmetrize(np.asarray(fit.cov, dtype=float)[np.ix_(idx, idx)])
    rank = numerical_rank(V, rtol)
    if rank == len(idx):
        W = float(b @ np.linalg.solve(V, b))
        df = len(idx)
    else:
        W = float(b @ pseudo_inverse(V, rtol) @ b)
        df = max(rank, 1)
    W = max(W, 0.0)
    return TestResult(W, df, chi_square_sf(W, df), tuple(names))
