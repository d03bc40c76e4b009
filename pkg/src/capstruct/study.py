"""End-to-end study: ingest, derive, describe, Hausman, adjustment fits."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .adjustment import ENGINES, adjustment_report
from .features import FIRM_FACTORS, LEVERAGE_FORMS, MACRO_FACTORS, DesignError, build_design, derive_rows
from .ipm import ConvergenceError
from .mean_panel import EstimationError, fit_fixed_effects, fit_random_effects, hausman_test
from .numerics import RandomSource
from .panel_quantreg import DECILES
from .panel_store import DataError, load_macro_csv, load_panel_csv, validate_and_merge
from .quantreg import RankDeficientError
from .reporting import StudyReport, adjustment_to_dict, correlation_matrix, yearly_means
from .simulate import ConfigError, DgpConfig, simulate_panel, true_speeds

logger = logging.getLogger(__name__)


@dataclass
class StudyConfig:
    panel: str | None = None
    macro: str | None = None
    dgp: dict | None = None
    leverage_forms: tuple[str, ...] = LEVERAGE_FORMS
    engines: tuple[str, ...] = ENGINES
    taus: tuple[float, ...] = DECILES
    lam: float = 0.0
    bootstrap: int = 50
    seed: int = 0
    winsorize: float | None = None
    cov_type: str = "conventional"
    firm_factors: tuple[str, ...] = FIRM_FACTORS
    macro_factors: tuple[str, ...] = MACRO_FACTORS
    n_jobs: int = 1

    def __post_init__(self):
        self.leverage_forms = tuple(f.lower() for f in self.leverage_forms)
        self.engines = tuple(self.engines)
        self.taus = tuple(float(t) for t in self.taus)
        self.firm_factors = tuple(self.firm_factors)
        self.macro_factors = tuple(self.macro_factors)
        problems = []
        if self.dgp is None and not (self.panel and self.macro):
            problems.append("either panel and macro paths or a dgp block is required")
        if self.dgp is not None and (self.panel or self.macro):
            problems.append("give either data paths or a dgp block, not both")
        if bad := [f for f in self.leverage_forms if f not in LEVERAGE_FORMS]:
            problems.append(f"unknown leverage forms {bad}")
        if bad := [e for e in self.engines if e not in ENGINES]:
            problems.append(f"unknown engines {bad}; choose from {ENGINES}")
        if any(not 0.0 < t < 1.0 for t in self.taus) or any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            problems.append("taus must be strictly increasing inside (0, 1)")
        if self.lam < 0:
            problems.append("lambda must be nonnegative")
        if self.bootstrap < 0:
            problems.append("bootstrap must be nonnegative")
        if self.winsorize is not None and not 0.0 < self.winsorize < 0.5:
            problems.append("winsorize must lie in (0, 0.5)")
        if self.cov_type not in ("conventional", "clustered"):
            problems.append("cov_type must be 'conventional' or 'clustered'")
        if bad := [f for f in self.firm_factors if f not in FIRM_FACTORS] + \
                [m for m in self.macro_factors if m not in MACRO_FACTORS]:
            problems.append(f"unknown factors {bad}")
        if problems:
            raise ConfigError("invalid study config: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "StudyConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        if unknown := sorted(set(d) - known):
            raise ConfigError(f"unknown study config keys {unknown}")
        for key in ("panel", "macro"):
            if d.get(key) and base_dir is not None and not Path(d[key]).is_absolute():
                d[key] = str(base_dir / d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def metadata(self) -> dict:
        return {
            "seed": self.seed, "taus": list(self.taus), "lambda": self.lam, "bootstrap": self.bootstrap,
            "winsorize": self.winsorize, "engines": list(self.engines), "leverage_forms": list(self.leverage_forms),
            "cov_type": self.cov_type, "firm_factors": list(self.firm_factors),
            "macro_factors": list(self.macro_factors), "mode": "simulated" if self.dgp is not None else "data",
        }


def load_study_config(path) -> StudyConfig:
    p = Path(path)
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"config {p} must hold a JSON object")
    return StudyConfig.from_dict(d, p.parent)


def load_dgp_config(path) -> DgpConfig:
    p = Path(path)
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    return DgpConfig.from_dict(d)


# error classification drives the CLI exit codes
def error_kind(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (DataError, DesignError)):
        return "data"
    return "estimation"


STAGE_ERRORS = (ConfigError, DataError, DesignError, EstimationError, ConvergenceError, RankDeficientError,
                ValueError, RuntimeError, np.linalg.LinAlgError)


def ingest(panel_path, macro_path):
    return validate_and_merge(load_panel_csv(panel_path), load_macro_csv(macro_path))


def describe(derived) -> dict:
    return {"year_means": yearly_means(derived).to_dict(), "correlations": correlation_matrix(derived).to_dict()}


def hausman_for_form(derived, form: str, firm_factors=FIRM_FACTORS, macro_factors=MACRO_FACTORS,
                     cov_type: str = "conventional") -> dict:
    """FE vs RE on the static model y_t = X_{t-1}, M_{t-1} without state dummies."""
    design = build_design(derived, form, False, dynamic=False, firm_factors=firm_factors,
                          macro_factors=macro_factors)
    fe = fit_fixed_effects(design, cov_type)
    re = fit_random_effects(design, cov_type)
    h = hausman_test(fe, re)
    return {"statistic": h.statistic, "df": h.df, "p_value": h.p_value, "nobs": fe.nobs, "n_firms": fe.n_firms,
            "fe": fe.as_dict(), "re": re.as_dict()}


def fit_form(derived, form: str, cfg: StudyConfig, rng: RandomSource) -> dict:
    design = build_design(derived, form, True, dynamic=True, firm_factors=cfg.firm_factors,
                          macro_factors=cfg.macro_factors)
    rep = adjustment_report(design, cfg.engines, taus=cfg.taus, lam=cfg.lam, bootstrap=cfg.bootstrap, rng=rng,
                            cov_type=cfg.cov_type)
    return adjustment_to_dict(rep)


class _Stages:
    """Runs named stages, recording the first error of each without stopping the study."""

    def __init__(self, report: StudyReport):
        self.report = report

    def run(self, name, fn, *args, **kwargs):
        try:
            return True, fn(*args, **kwargs)
        except STAGE_ERRORS as exc:
            logger.error("stage %s failed: %s", name, exc)
            self.report.errors[name] = {"kind": error_kind(exc), "message": f"{type(exc).__name__}: {exc}"}
            return False, None


def run_study(cfg: StudyConfig) -> StudyReport:
    """Full pipeline; deterministic for a given config (seed included).

    Leverage form k uses ``RandomSource(seed).child(k)`` for its bootstrap
    draws, so selecting a subset of forms does not change the others.
    """
    report = StudyReport(metadata=cfg.metadata())
    stages = _Stages(report)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if cfg.dgp is not None:
            def load():
                sim = simulate_panel(DgpConfig.from_dict(cfg.dgp))
                sp = true_speeds(sim.config)
                report.metadata["dgp_truth"] = {"speed_good": sp.speed_good, "speed_bad": sp.speed_bad}
                panel, macro = sim.to_raw()
                return validate_and_merge(panel, macro)
            ok, dataset = stages.run("ingest", load)
        else:
            ok, dataset = stages.run("ingest", ingest, cfg.panel, cfg.macro)
        if ok:
            report.diagnostics["merge"] = dataset.diagnostics.to_dict()
            report.diagnostics["firms"] = len(dataset.firms)
            ok, derived = stages.run("features", derive_rows, dataset, cfg.winsorize)
        if ok:
            report.diagnostics["derived_rows"] = len(derived)
            done, desc = stages.run("descriptives", describe, derived)
            if done:
                report.descriptives = desc
            root = RandomSource(cfg.seed)
            for k, form in enumerate(LEVERAGE_FORMS):
                if form not in cfg.leverage_forms:
                    continue
                done, h = stages.run(f"hausman:{form}", hausman_for_form, derived, form, cfg.firm_factors,
                                     cfg.macro_factors, cfg.cov_type)
                if done:
                    report.hausman[form] = h
                done, adj = stages.run(f"adjustment:{form}", fit_form, derived, form, cfg, root.child(k))
                if done:
                    report.adjustment[form] = adj
    report.diagnostics["warnings"] = sorted({str(w.message) for w in caught})
    return report


def first_error_kind(report: StudyReport) -> str | None:
    if not report.errors:
        return None
    return next(iter(report.errors.values()))["kind"]
