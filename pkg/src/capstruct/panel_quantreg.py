"""Fixed-effects panel quantile regression.

For each quantile level the per-firm intercepts and common slopes are
estimated jointly from

    sum_i sum_t rho_tau(y_it - alpha_i - w_it'b) + lam * sum_i |alpha_i|

as a single LP whose firm-intercept columns are unit-sparse. There is no
global intercept; with ``lam = 0`` the alphas absorb it.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import ipm
from .features import DesignMatrix
from .ipm import ConvergenceError
from .numerics import RandomSource, check_loss
from .quantreg import BootstrapResult, Certificate, RankDeficientError, dependent_columns, run_bootstrap

logger = logging.getLogger(__name__)

DECILES = tuple(round(0.1 * k, 1) for k in range(1, 10))


class SingletonFirmWarning(UserWarning):
    """A firm with one usable row was dropped from a panel quantile fit."""


@dataclass
class PanelQrFit:
    tau: float
    names: list[str]
    coefficients: np.ndarray
    firms: list
    alphas: np.ndarray
    objective: float
    lam: float
    iterations: int
    gap: float
    nobs: int
    residuals: np.ndarray
    cov: np.ndarray | None = None
    dropped_firms: list = field(default_factory=list)
    bootstrap_draws: int = 0

    @property
    def params(self) -> np.ndarray:
        return self.coefficients

    @property
    def std_errors(self) -> np.ndarray | None:
        if self.cov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def alpha(self, firm) -> float:
        try:
            return float(self.alphas[self.firms.index(firm)])
        except ValueError:
            raise KeyError(f"firm {firm!r} is not part of this fit") from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def _drop_single_row_firms(design: DesignMatrix) -> tuple[DesignMatrix, list]:
    counts = np.bincount(design.firm_codes, minlength=design.n_firms)
    lonely = [design.firms[i] for i in np.flatnonzero(counts < 2)]
    if lonely:
        msg = f"dropping {len(lonely)} firm(s) with a single row: {lonely[:10]}"
        warnings.warn(msg, SingletonFirmWarning, stacklevel=3)
        logger.warning(msg)
        design = design.take(np.flatnonzero(counts[design.firm_codes] >= 2))
    return design, lonely


def _check_rank(codes, n_firms, Z, names):
    if Z.shape[1] == 0:
        return
    counts = np.bincount(codes, minlength=n_firms).astype(float)
    means = np.zeros((n_firms, Z.shape[1]))
    np.add.at(means, codes, Z)
    Zw = Z - (means / counts[:, None])[codes]
    if np.linalg.matrix_rank(Zw) < Z.shape[1]:
        # a column collinear with the firm dummies (or other columns)
        raise RankDeficientError(dependent_columns(Zw, names))


def _solve(codes, n_firms, Z, y, tau, lam, tol, max_iter):
    system = ipm.FirmEffectsSystem(codes, n_firms, Z, penalty_scale=2.0 * lam)
    r = np.full(len(y), tau)
    yy = y
    if lam > 0:
        r = np.concatenate([r, np.full(n_firms, 0.5)])
        yy = np.concatenate([y, np.zeros(n_firms)])
    res = ipm.solve(system, yy, r, tol=tol, max_iter=max_iter)
    alphas = res.coefficients[:n_firms]
    slopes = res.coefficients[n_firms:]
    return alphas, slopes, res


def panel_objective(y, codes, Z, alphas, slopes, tau, lam) -> float:
    resid = y - alphas[codes] - Z @ slopes
    return float(np.sum(check_loss(tau, resid)) + lam * np.sum(np.abs(alphas)))


def fit_panel_quantile(design: DesignMatrix, tau: float, lam: float = 0.0, *, bootstrap: int = 0,
                       rng: RandomSource | None = None, tol: float = 1e-8, max_iter: int = 200,
                       n_jobs: int = 1) -> PanelQrFit:
    """Joint fit of firm intercepts and slopes at quantile ``tau``.

    With ``bootstrap = B > 0`` the slope covariance comes from B firm-cluster
    bootstrap replicates (whole firms resampled with replacement; repeated
    firms get separate intercepts). ``rng`` is then required.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    if lam < 0:
        raise ValueError("penalty weight must be nonnegative")
    design, dropped = _drop_single_row_firms(design)
    if design.nobs == 0:
        raise ValueError("no firm has two or more rows")
    codes, N, Z, y = design.firm_codes, design.n_firms, design.X, design.y
    _check_rank(codes, N, Z, design.names)
    alphas, slopes, res = _solve(codes, N, Z, y, tau, lam, tol, max_iter)
    resid = y - alphas[codes] - Z @ slopes
    obj = float(np.sum(check_loss(tau, resid)) + lam * np.sum(np.abs(alphas)))
    fit = PanelQrFit(tau, list(design.names), slopes, list(design.firms), alphas, obj, lam,
                     res.iterations, res.gap, design.nobs, resid, dropped_firms=dropped)
    if bootstrap:
        if rng is None:
            raise ValueError("bootstrap requires a RandomSource")
        boot = panel_bootstrap(design, tau, lam, bootstrap, rng, tol=tol, max_iter=max_iter, n_jobs=n_jobs)
        fit.cov = boot.covariance
        fit.bootstrap_draws = boot.draws
    return fit


def panel_bootstrap(design: DesignMatrix, tau: float, lam: float, B: int, rng: RandomSource, *,
                    tol: float = 1e-8, max_iter: int = 200, n_jobs: int = 1) -> BootstrapResult:
    codes, N, Z, y = design.firm_codes, design.n_firms, design.X, design.y
    order = np.argsort(codes, kind="stable")
    starts = np.searchsorted(codes[order], np.arange(N + 1))
    members = [order[starts[g]: starts[g + 1]] for g in range(N)]

    def draw(gen):
        return gen.integers(0, N, size=N)

    def refit(picks):
        rows = np.concatenate([members[g] for g in picks])
        new_codes = np.repeat(np.arange(len(picks)), [len(members[g]) for g in picks])
        Zb = Z[rows]
        _check_rank(new_codes, len(picks), Zb, design.names)
        _, slopes, _ = _solve(new_codes, len(picks), Zb, y[rows], tau, lam, tol, max_iter)
        return slopes

    return run_bootstrap(refit, draw, B, rng, n_jobs)


@dataclass
class TauGridResult:
    fits: dict[float, PanelQrFit]
    failures: dict[float, str]

    @property
    def taus(self) -> list[float]:
        return sorted(self.fits)

    def __getitem__(self, tau: float) -> PanelQrFit:
        return self.fits[tau]

    def __len__(self) -> int:
        return len(self.fits)


def fit_tau_grid(design: DesignMatrix, taus: Sequence[float] = DECILES, lam: float = 0.0, *,
                 bootstrap: int = 0, rng: RandomSource | None = None, **kwargs) -> TauGridResult:
    """Independent fits across a strictly increasing grid; failures are recorded, not raised.

    The bootstrap stream for grid position k is ``rng.child(k)``.
    """
    taus = [float(t) for t in taus]
    if not taus or any(not 0.0 < t < 1.0 for t in taus) or any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be strictly increasing inside (0, 1)")
    fits: dict[float, PanelQrFit] = {}
    failures: dict[float, str] = {}
    for k, tau in enumerate(taus):
        child = rng.child(k) if rng is not None else None
        try:
            fits[tau] = fit_panel_quantile(design, tau, lam, bootstrap=bootstrap, rng=child, **kwargs)
        except (ConvergenceError, RankDeficientError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("panel quantile fit failed at tau=%s: %s", tau, exc)
            failures[tau] = f"{type(exc).__name__}: {exc}"
    return TauGridResult(fits, failures)


def predict_conditional_quantile(fit: PanelQrFit, firm, x) -> float:
    """alpha_i(tau) + w'b(tau); ``x`` is a vector in ``fit.names`` order or a name->value mapping."""
    a = fit.alpha(firm)
    if isinstance(x, Mapping):
        missing = [n for n in fit.names if n not in x]
        if missing:
            raise KeyError(f"missing covariate values for {missing}")
        vec = np.array([x[n] for n in fit.names], dtype=float)
    else:
        vec = np.asarray(x, dtype=float).ravel()
        if vec.size != len(fit.names):
            raise ValueError(f"expected {len(fit.names)} covariate values, got {vec.size}")
    return float(a + vec @ fit.coefficients)


def quantile_at_mean(fit: PanelQrFit, design: DesignMatrix) -> float:
    """Fitted quantile at the sample mean of the full regressor vector.

    The firm indicators enter at their sample means, so the firm part is the
    row-weighted average of the effects. Because the indicators span a
    constant, this value is nondecreasing in tau for unpenalized fits.
    """
    index = {f: g for g, f in enumerate(fit.firms)}
    keep = np.array([f in index for f in design.firm_ids])
    if not keep.any():
        raise ValueError("design shares no firms with the fit")
    codes = np.array([index[f] for f in design.firm_ids[keep]])
    cols = [design.names.index(n) for n in fit.names]
    xbar = design.X[keep][:, cols].mean(axis=0)
    return float(fit.alphas[codes].mean() + xbar @ fit.coefficients)


def certify_panel_optimality(fit: PanelQrFit, y, codes) -> list[Certificate]:
    """Residual-sign counts within each firm; valid for unpenalized fits only."""
    y = np.asarray(y, dtype=float)
    tol = 1e-7 * max(1.0, float(np.max(np.abs(y))))
    out = []
    resid = fit.residuals
    for g in range(len(fit.firms)):
        r = resid[codes == g]
        n_neg = int(np.sum(r < -tol))
        n_zero = int(np.sum(np.abs(r) <= tol))
        nt = len(r) * fit.tau
        ok = (n_neg <= nt + 1e-9) and (nt <= n_neg + n_zero + 1e-9)
        out.append(Certificate(bool(ok), n_neg, n_zero, nt))
    return out
