"""Synthetic panels from the partial-adjustment model with known parameters.

Each firm has a target ratio

    DR*_it = a* + alpha_i + beta*'X_{i,t-1} + gamma*'M_{t-1}

and closes a fraction of the gap every year,

    DR_it = DR_{i,t-1} + speed_t * (DR*_it - DR_{i,t-1}) + e_it,

with ``speed_t = speed + bad_speed_shift * c_t``. Covariates are AR(1)
around firm-specific means whose correlation with alpha_i is ``rho``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .adjustment import SpeedEstimates
from .features import FIRM_FACTORS, MACRO_FACTORS, DesignMatrix, build_design
from .numerics import RandomSource
from .panel_store import PANEL_COLUMNS, PanelDataset, macro_frame, write_macro_csv, write_panel_csv

RAW_INVERTIBLE = ("as_ratio", "size", "pr", "ndts", "ntcs", "cashta", "finexp")
ERROR_DISTS = ("normal", "t3")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    n_firms: int = 200
    n_years: int = 30
    speed: float = 0.4
    bad_speed_shift: float = 0.0
    a_star: float = 0.3
    firm_factors: tuple[str, ...] = ("pr", "cashta", "as_ratio")
    beta_star: tuple[float, ...] = (-0.4, -0.3, 0.25)
    covariate_means: tuple[float, ...] = (0.08, 0.10, 0.30)
    covariate_scales: tuple[float, ...] = (0.05, 0.05, 0.10)
    macro_factors: tuple[str, ...] = ("intr", "infl", "cred")
    gamma_star: tuple[float, ...] = (-0.005, 0.004, 0.3)
    macro_means: tuple[float, ...] = (6.0, 3.0, 0.05)
    macro_scales: tuple[float, ...] = (2.0, 1.5, 0.03)
    covariate_persistence: float = 0.5
    macro_persistence: float = 0.5
    sigma_alpha: float = 0.05
    rho: float = 0.0
    sigma_eps: float = 0.01
    error_dist: str = "normal"
    error_tau: float = 0.5
    recession_years: tuple[int, ...] | None = None
    recession_enter_prob: float = 0.15
    recession_stay_prob: float = 0.4
    start_year: int = 1980
    ltdr_share: float = 0.4
    initial_gap: float = 0.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.n_firms < 2:
            problems.append("n_firms must be >= 2")
        if self.n_years < 3:
            problems.append("n_years must be >= 3")
        for label, s in (("speed", self.speed), ("speed + bad_speed_shift", self.speed + self.bad_speed_shift)):
            if not 0.0 < s <= 1.0:
                problems.append(f"{label} must lie in (0, 1], got {s}")
        if self.sigma_alpha < 0 or self.sigma_eps < 0:
            problems.append("standard deviations must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            problems.append("rho must lie in [-1, 1]")
        if self.error_dist not in ERROR_DISTS:
            problems.append(f"error_dist must be one of {ERROR_DISTS}")
        if not 0.0 < self.error_tau < 1.0:
            problems.append("error_tau must lie in (0, 1)")
        k = len(self.firm_factors)
        if not (len(self.beta_star) == len(self.covariate_means) == len(self.covariate_scales) == k):
            problems.append("beta_star, covariate_means and covariate_scales must match firm_factors")
        j = len(self.macro_factors)
        if not (len(self.gamma_star) == len(self.macro_means) == len(self.macro_scales) == j):
            problems.append("gamma_star, macro_means and macro_scales must match macro_factors")
        unknown = [f for f in self.firm_factors if f not in FIRM_FACTORS]
        unknown += [m for m in self.macro_factors if m not in MACRO_FACTORS]
        if unknown:
            problems.append(f"unknown factor names {unknown}")
        for label, v in (("covariate_persistence", self.covariate_persistence),
                         ("macro_persistence", self.macro_persistence)):
            if not -1.0 < v < 1.0:
                problems.append(f"{label} must lie in (-1, 1)")
        if not 0.0 <= self.ltdr_share <= 1.0:
            problems.append("ltdr_share must lie in [0, 1]")
        if self.recession_years is not None:
            outside = [y for y in self.recession_years if not self.start_year <= y < self.start_year + self.n_years]
            if outside:
                problems.append(f"recession years outside the sample: {outside}")
        if problems:
            raise ConfigError("invalid DGP config: " + "; ".join(problems))

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.start_year + self.n_years)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown DGP config keys {unknown}")
        clean = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        try:
            return cls(**clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def true_speeds(cfg: DgpConfig) -> SpeedEstimates:
    return SpeedEstimates(cfg.speed, cfg.speed + cfg.bad_speed_shift, 1.0 - cfg.speed, -cfg.bad_speed_shift)


def _ar1(gen: np.random.Generator, shape: tuple[int, int], phi: float) -> np.ndarray:
    """Unit-variance stationary AR(1) paths along axis 0."""
    e = gen.standard_normal(shape)
    out = np.empty(shape)
    out[0] = e[0]
    scale = np.sqrt(1.0 - phi**2)
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + scale * e[t]
    return out


def _regimes(cfg: DgpConfig, gen: np.random.Generator) -> np.ndarray:
    if cfg.recession_years is not None:
        bad = set(cfg.recession_years)
        return np.array([1 if y in bad else 0 for y in cfg.years], dtype=int)
    c = np.zeros(cfg.n_years, dtype=int)
    u = gen.random(cfg.n_years)
    for t in range(1, cfg.n_years):
        p = cfg.recession_stay_prob if c[t - 1] else cfg.recession_enter_prob
        c[t] = int(u[t] < p)
    return c


def _errors(cfg: DgpConfig, gen: np.random.Generator, n: int) -> np.ndarray:
    if cfg.sigma_eps == 0:
        return np.zeros(n)
    if cfg.error_dist == "normal":
        draw = gen.standard_normal(n) - stats.norm.ppf(cfg.error_tau)
    else:
        draw = gen.standard_t(3, n) - stats.t.ppf(cfg.error_tau, 3)
    return cfg.sigma_eps * draw


@dataclass
class SimulatedPanel:
    config: DgpConfig
    derived: pd.DataFrame
    truth: dict
    target: np.ndarray = field(repr=False)
    regimes: np.ndarray = field(repr=False)

    def design(self, leverage_form: str = "tdr", include_state_dummies: bool = True,
               dynamic: bool = True) -> DesignMatrix:
        return build_design(self.derived, leverage_form, include_state_dummies, dynamic=dynamic,
                            firm_factors=self.config.firm_factors, macro_factors=self.config.macro_factors)

    def to_raw(self) -> tuple[PanelDataset, pd.DataFrame]:
        return _raw_emission(self)

    def write_csv(self, out_dir) -> dict[str, Path]:
        """Write panel.csv, macro.csv and truth.json into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        panel, macro = self.to_raw()
        paths = {"panel": out / "panel.csv", "macro": out / "macro.csv", "truth": out / "truth.json"}
        write_panel_csv(panel, paths["panel"])
        write_macro_csv(macro, paths["macro"])
        paths["truth"].write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def simulate_panel(cfg: DgpConfig) -> SimulatedPanel:
    """Draw one panel; identical configs give identical panels."""
    root = RandomSource(cfg.seed)
    macro_gen = root.child(0).generator
    N, T = cfg.n_firms, cfg.n_years
    K, J = len(cfg.firm_factors), len(cfg.macro_factors)
    c = _regimes(cfg, macro_gen)
    m_means = np.asarray(cfg.macro_means, dtype=float)
    m_scales = np.asarray(cfg.macro_scales, dtype=float)
    M = m_means + m_scales * _ar1(macro_gen, (T, J), cfg.macro_persistence) if J else np.empty((T, 0))
    beta = np.asarray(cfg.beta_star, dtype=float)
    gamma = np.asarray(cfg.gamma_star, dtype=float)
    x_means = np.asarray(cfg.covariate_means, dtype=float)
    x_scales = np.asarray(cfg.covariate_scales, dtype=float)
    speed_t = cfg.speed + cfg.bad_speed_shift * c

    DR = np.empty((N, T))
    target = np.full((N, T), np.nan)
    X = np.empty((N, T, K))
    alphas = np.empty(N)
    firms_stream = root.child(1)
    for i in range(N):
        gen = firms_stream.child(i).generator
        z = gen.standard_normal()
        xi = gen.standard_normal(K)
        mu = cfg.rho * z + np.sqrt(1.0 - cfg.rho**2) * xi
        X[i] = x_means + x_scales * (mu + _ar1(gen, (T, K), cfg.covariate_persistence))
        alphas[i] = cfg.sigma_alpha * z
        eps = _errors(cfg, gen, T)
        stationary = cfg.a_star + alphas[i] + beta @ (x_means + x_scales * mu) + gamma @ m_means
        DR[i, 0] = stationary + cfg.initial_gap
        for t in range(1, T):
            target[i, t] = cfg.a_star + alphas[i] + beta @ X[i, t - 1] + gamma @ M[t - 1]
            DR[i, t] = DR[i, t - 1] + speed_t[t] * (target[i, t] - DR[i, t - 1]) + eps[t]

    years = cfg.years
    ids = np.array([f"F{i + 1:04d}" for i in range(N)], dtype=object)
    derived = pd.DataFrame({
        "firm_id": np.repeat(ids, T),
        "year": np.tile(years, N).astype(np.int64),
        "tdr": DR.ravel(),
        "ltdr": cfg.ltdr_share * DR.ravel(),
        "stdr": (1.0 - cfg.ltdr_share) * DR.ravel(),
    })
    for f in FIRM_FACTORS:
        derived[f] = X[:, :, cfg.firm_factors.index(f)].ravel() if f in cfg.firm_factors else np.nan
    for m in MACRO_FACTORS:
        derived[m] = np.tile(M[:, cfg.macro_factors.index(m)], N) if m in cfg.macro_factors else np.nan
    derived["gdp_growth"] = np.nan
    derived["c"] = np.tile(c, N)

    sp = true_speeds(cfg)
    truth = {
        "speed_good": sp.speed_good,
        "speed_bad": sp.speed_bad,
        "delta": sp.delta,
        "delta_c": sp.delta_c,
        "a_star": cfg.a_star,
        "beta_star": dict(zip(cfg.firm_factors, map(float, beta))),
        "gamma_star": dict(zip(cfg.macro_factors, map(float, gamma))),
        "recession_years": [int(y) for y in years[c == 1]],
        "firm_effects": {str(f): float(a) for f, a in zip(ids, alphas)},
        "config": cfg.to_dict(),
    }
    return SimulatedPanel(cfg, derived, truth, target, c)


def _raw_emission(sim: SimulatedPanel) -> tuple[PanelDataset, pd.DataFrame]:
    """Balance-sheet rows whose derived ratios reproduce the simulated ones."""
    cfg = sim.config
    bad = [f for f in cfg.firm_factors if f not in RAW_INVERTIBLE]
    if bad:
        raise ConfigError(f"factors {bad} are computed from several years and cannot be emitted as raw fields")
    d = sim.derived
    n = len(d)
    gen = RandomSource(cfg.seed).child(2).generator
    ta = np.exp(gen.normal(7.0, 0.5, n))
    noise = {
        "sales_ratio": np.exp(gen.normal(0.0, 0.3, n)),
        "pr": gen.normal(0.08, 0.05, n),
        "ndts": gen.uniform(0.02, 0.08, n),
        "cashta": gen.uniform(0.02, 0.2, n),
        "as_ratio": gen.uniform(0.1, 0.6, n),
        "payables": gen.uniform(0.05, 0.15, n),
        "receivables": gen.uniform(0.05, 0.2, n),
        "finexp": gen.uniform(0.005, 0.03, n),
    }

    def factor(name, fallback):
        return d[name].to_numpy(float) if name in cfg.firm_factors else fallback

    sales = np.exp(d["size"].to_numpy(float)) if "size" in cfg.firm_factors else ta * noise["sales_ratio"]
    payables = sales * noise["payables"]
    if "ntcs" in cfg.firm_factors:
        receivables = payables + d["ntcs"].to_numpy(float) * sales
    else:
        receivables = sales * noise["receivables"]
    dr = d["tdr"].to_numpy(float)
    raw = pd.DataFrame({
        "firm_id": d["firm_id"].to_numpy(),
        "year": d["year"].to_numpy(np.int64),
        "sales": sales,
        "total_assets": ta,
        "short_term_debt": (1.0 - cfg.ltdr_share) * dr * ta,
        "long_term_debt": cfg.ltdr_share * dr * ta,
        "ebit": factor("pr", noise["pr"]) * ta,
        "depreciation": factor("ndts", noise["ndts"]) * ta,
        "cash": factor("cashta", noise["cashta"]) * ta,
        "financial_expenses": factor("finexp", noise["finexp"]) * sales,
        "trade_receivables": receivables,
        "trade_payables": payables,
        "tangible_assets": factor("as_ratio", noise["as_ratio"]) * ta,
    })[list(PANEL_COLUMNS)]

    T = cfg.n_years
    years = np.r_[cfg.start_year - 1, cfg.years]
    c = np.r_[0, sim.regimes]
    mgen = RandomSource(cfg.seed).child(3).generator
    magnitude = mgen.uniform(0.5, 3.5, T + 1)
    gdp = np.where(c == 1, -magnitude, magnitude)
    first = d["firm_id"].iloc[0]
    yearly = d.loc[d["firm_id"] == first].set_index("year")

    def macro_series(name, mean, sd):
        if name in cfg.macro_factors:
            vals = yearly[name].to_numpy(float)
            return np.r_[vals.mean(), vals]
        return mgen.normal(mean, sd, T + 1)

    lending = macro_series("intr", 6.0, 1.0)
    inflation = macro_series("infl", 3.0, 1.0)
    growth = macro_series("cred", 0.05, 0.02)
    credit = np.empty(T + 1)
    credit[0] = 100.0
    for t in range(1, T + 1):
        credit[t] = credit[t - 1] * (1.0 + growth[t])
    macro = macro_frame({"year": years, "gdp_growth": gdp, "lending_rate": lending,
                         "inflation": inflation, "credit_supply": credit})
    panel = PanelDataset(raw.sort_values(["firm_id", "year"], kind="stable").reset_index(drop=True))
    return panel, macro


def simulate_location_shift(n_firms: int = 50, n_years: int = 10, beta: float = 0.5, *, sigma_alpha: float = 1.0,
                            sigma_eps: float = 1.0, error_dist: str = "normal", seed: int = 0) -> DesignMatrix:
    """Static design ``y = alpha_i + beta*x + e`` with iid errors.

    Every conditional quantile has slope ``beta``; only the firm intercepts
    move with tau.
    """
    gen = RandomSource(seed).generator
    alphas = sigma_alpha * gen.standard_normal(n_firms)
    x = gen.standard_normal((n_firms, n_years)) + 0.5 * alphas[:, None]
    if error_dist == "normal":
        e = gen.standard_normal((n_firms, n_years))
    elif error_dist == "t3":
        e = gen.standard_t(3, (n_firms, n_years))
    else:
        raise ValueError(f"error_dist must be one of {ERROR_DISTS}")
    y = alphas[:, None] + beta * x + sigma_eps * e
    ids = np.array([f"F{i + 1:04d}" for i in range(n_firms)], dtype=object)
    return DesignMatrix(np.repeat(ids, n_years), np.tile(np.arange(n_years), n_firms).astype(np.int64),
                        y.ravel(), x.reshape(-1, 1), ["x"], "tdr", ("x",), (), False, False)
