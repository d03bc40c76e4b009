"""Partial-adjustment model with a recession dummy.

Estimated equation (rows at year t, regressors lagged one year)::

    DR_t = a + a_i + a_c*c_t + delta*DR_{t-1} + delta_c*DR_{t-1}*c_t
           + beta'X_{t-1} + beta_c'X_{t-1}*c_t + gamma'M_{t-1} + gamma_c'M_{t-1}*c_t + e

Substituting the target equation into the adjustment rule gives a lag
coefficient of 1 - speed, so speed_good = 1 - delta and
speed_bad = 1 - (delta + delta_c). The remaining coefficients are the
target parameters scaled by the speed of the same state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import DesignMatrix, interaction_name
from .mean_panel import EstimationError, TestResult, fit_fixed_effects, wald_test
from .numerics import RandomSource
from .panel_quantreg import fit_panel_quantile

ENGINES = ("mean_fe", "panel_qr")
MIN_INVERTIBLE_SPEED = 0.05
NICKELL_ADVISORY = (
    "Fixed-effects estimates with a lagged dependent variable carry an O(1/T) "
    "(Nickell) bias; no correction is applied."
)


class StateVariationError(EstimationError):
    pass


@dataclass
class RegimeCoefficients:
    source: str
    tau: float | None
    a: float
    a_c: float
    delta: float
    delta_c: float
    beta: dict[str, float]
    beta_c: dict[str, float]
    gamma: dict[str, float]
    gamma_c: dict[str, float]
    names: list[str]
    params: np.ndarray
    cov: np.ndarray | None
    nobs: int
    n_firms: int
    lam: float = 0.0

    def __post_init__(self):
        if set(self.beta) != set(self.beta_c) or set(self.gamma) != set(self.gamma_c):
            raise ValueError("state interactions must mirror the base coefficients")

    @property
    def label(self) -> str:
        return self.source if self.tau is None else f"{self.source}@{self.tau:g}"


@dataclass(frozen=True)
class SpeedEstimates:
    speed_good: float
    speed_bad: float
    delta: float | None = None
    delta_c: float | None = None


@dataclass(frozen=True)
class TargetModelParams:
    state: str
    speed: float
    a_star: float
    beta_star: dict[str, float]
    gamma_star: dict[str, float]


@dataclass
class StateDummyTests:
    delta_c: TestResult
    beta_c: dict[str, TestResult]
    gamma_c: dict[str, TestResult]
    firm_block: TestResult | None
    macro_block: TestResult | None


@dataclass
class AdjustmentCell:
    coefficients: RegimeCoefficients
    speeds: SpeedEstimates
    targets: dict[str, TargetModelParams | None]
    tests: StateDummyTests | None
    target_errors: dict[str, str] = field(default_factory=dict)


@dataclass
class AdjustmentReport:
    leverage_form: str
    cells: list[AdjustmentCell]
    taus: list[float]
    failures: dict[str, str] = field(default_factory=dict)
    advisory: str = NICKELL_ADVISORY


def _require_states(design: DesignMatrix) -> None:
    if not design.include_state_dummies or "c" not in design.names:
        raise StateVariationError("design was built without state dummies")
    c = design.column("c")
    if np.all(c == 0) or np.all(c == 1):
        raise StateVariationError("state dummy has no variation: the sample needs recession and growth years")
    # c and every macro*c column vary by year only, so they need enough distinct recession years
    bad_years = np.unique(design.years[c == 1]).size
    needed = 1 + len(design.macro_factors)
    if bad_years < needed:
        raise EstimationError(f"{bad_years} recession year(s) in the sample cannot identify the state intercept "
                              f"and {len(design.macro_factors)} macro interactions (need at least {needed})")


def _regime_from(names, params, cov, design: DesignMatrix, source, tau, a, nobs, n_firms, lam=0.0):
    values = dict(zip(names, np.asarray(params, dtype=float).tolist()))

    def get(n):
        return values.get(n, float("nan"))

    beta = {f: get(f) for f in design.firm_factors}
    gamma = {m: get(m) for m in design.macro_factors}
    return RegimeCoefficients(
        source=source, tau=tau, a=float(a), a_c=get("c"),
        delta=get("lag_dr"), delta_c=get(interaction_name("lag_dr")),
        beta=beta, beta_c={f: get(interaction_name(f)) for f in beta},
        gamma=gamma, gamma_c={m: get(interaction_name(m)) for m in gamma},
        names=list(names), params=np.asarray(params, dtype=float), cov=cov,
        nobs=nobs, n_firms=n_firms, lam=lam,
    )


def fit_adjustment(design: DesignMatrix, engine: str = "mean_fe", *, tau: float = 0.5, lam: float = 0.0,
                   bootstrap: int = 0, rng: RandomSource | None = None,
                   cov_type: str = "conventional") -> RegimeCoefficients:
    """Estimate the state-dependent adjustment model with one engine.

    ``mean_fe`` is the within estimator; ``panel_qr`` the fixed-effects
    quantile fit at ``tau`` (covariance from ``bootstrap`` firm-cluster
    replicates when B > 0). For the quantile engine the reported constant is
    the average firm intercept.
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
    _require_states(design)
    if not design.dynamic:
        raise ValueError("the adjustment model needs the lagged debt ratio (dynamic design)")
    if engine == "mean_fe":
        fe = fit_fixed_effects(design, cov_type=cov_type)
        return _regime_from(fe.names, fe.params, fe.cov, design, engine, None, fe.constant, fe.nobs, fe.n_firms)
    fit = fit_panel_quantile(design, tau, lam, bootstrap=bootstrap, rng=rng)
    return _regime_from(fit.names, fit.coefficients, fit.cov, design, engine, tau,
                        float(np.mean(fit.alphas)), fit.nobs, len(fit.firms), lam)


def adjustment_speeds(rc: RegimeCoefficients) -> SpeedEstimates:
    return SpeedEstimates(1.0 - rc.delta, 1.0 - (rc.delta + rc.delta_c), rc.delta, rc.delta_c)


def recover_targets(rc: RegimeCoefficients, state: str = "good") -> TargetModelParams:
    """Target-equation parameters: the state's coefficients divided by its speed."""
    if state not in ("good", "bad"):
        raise ValueError("state must be 'good' or 'bad'")
    sp = adjustment_speeds(rc)
    speed = sp.speed_good if state == "good" else sp.speed_bad
    if not speed > MIN_INVERTIBLE_SPEED:
        raise EstimationError(f"adjustment speed too small to invert ({speed:.4g} <= {MIN_INVERTIBLE_SPEED})")
    bad = state == "bad"
    a = rc.a + (rc.a_c if bad else 0.0)
    beta = {k: (v + (rc.beta_c[k] if bad else 0.0)) / speed for k, v in rc.beta.items()}
    gamma = {k: (v + (rc.gamma_c[k] if bad else 0.0)) / speed for k, v in rc.gamma.items()}
    return TargetModelParams(state, speed, a / speed, beta, gamma)


def test_state_dummies(rc: RegimeCoefficients) -> StateDummyTests:
    """Wald tests on the multiplicative dummies, singly and by firm/macro block."""
    if rc.cov is None:
        raise EstimationError(f"{rc.label} has no covariance; rerun with bootstrap replicates")
    delta = wald_test(rc, [interaction_name("lag_dr")])
    beta = {k: wald_test(rc, [interaction_name(k)]) for k in rc.beta}
    gamma = {k: wald_test(rc, [interaction_name(k)]) for k in rc.gamma}
    firm_block = wald_test(rc, [interaction_name(k) for k in rc.beta]) if rc.beta else None
    macro_block = wald_test(rc, [interaction_name(k) for k in rc.gamma]) if rc.gamma else None
    return StateDummyTests(delta, beta, gamma, firm_block, macro_block)


# keep pytest from collecting the public function above as a test
test_state_dummies.__test__ = False


def analyse(rc: RegimeCoefficients) -> AdjustmentCell:
    speeds = adjustment_speeds(rc)
    targets: dict[str, TargetModelParams | None] = {}
    errors: dict[str, str] = {}
    for state in ("good", "bad"):
        try:
            targets[state] = recover_targets(rc, state)
        except EstimationError as exc:
            targets[state] = None
            errors[state] = str(exc)
    tests = test_state_dummies(rc) if rc.cov is not None else None
    return AdjustmentCell(rc, speeds, targets, tests, errors)


def adjustment_report(design: DesignMatrix, engines: Sequence[str] = ENGINES, *, taus: Sequence[float] = (0.5,),
                      lam: float = 0.0, bootstrap: int = 50, rng: RandomSource | None = None,
                      cov_type: str = "conventional") -> AdjustmentReport:
    """Fit every requested engine (and each tau for the quantile engine).

    Quantile cell k draws its bootstrap stream from ``rng.child(k)``.
    Failures are recorded per cell and do not stop the others.
    """
    cells: list[AdjustmentCell] = []
    failures: dict[str, str] = {}
    if "mean_fe" in engines:
        try:
            cells.append(analyse(fit_adjustment(design, "mean_fe", cov_type=cov_type)))
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, StateVariationError):
                raise
            failures["mean_fe"] = str(exc)
    if "panel_qr" in engines:
        for k, tau in enumerate(taus):
            child = rng.child(k) if rng is not None else None
            try:
                rc = fit_adjustment(design, "panel_qr", tau=tau, lam=lam,
                                    bootstrap=bootstrap if child is not None else 0, rng=child)
                cells.append(analyse(rc))
            except StateVariationError:
                raise
            except (EstimationError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                failures[f"panel_qr@{tau:g}"] = f"{type(exc).__name__}: {exc}"
    return AdjustmentReport(design.leverage_form, cells, [float(t) for t in taus] if "panel_qr" in engines else [],
                            failures)
