"""Leverage ratios, firm and macro determinants, and the lagged design matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .panel_store import FirmYearRecord, PanelDataset, DataError

LEVERAGE_FORMS = ("tdr", "ltdr", "stdr")
FIRM_FACTORS = ("as_ratio", "size", "gr", "pr", "ndts", "risk", "ntcs", "cashta", "finexp")
MACRO_FACTORS = ("intr", "infl", "cred")
DERIVED_COLUMNS = LEVERAGE_FORMS + FIRM_FACTORS + MACRO_FACTORS

# display names used in the text tables
LABELS = {
    "tdr": "TDR", "ltdr": "LTDR", "stdr": "STDR", "as_ratio": "AS", "size": "SIZE",
    "gr": "GR", "pr": "PR", "ndts": "NDTS", "risk": "RISK", "ntcs": "NTCS",
    "cashta": "CASHTA", "finexp": "FINEXP", "intr": "INTR", "infl": "INFL", "cred": "CRED",
}


class DesignError(ValueError):
    pass


def _div(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / b
    return np.where(np.isfinite(out), out, np.nan)


def compute_leverage_ratios(record) -> tuple[float, float, float]:
    """(tdr, ltdr, stdr) as book debt over total assets; NaN where undefined."""
    ta = getattr(record, "total_assets")
    st = getattr(record, "short_term_debt")
    lt = getattr(record, "long_term_debt")
    if ta is None or not ta > 0 or st is None or lt is None or math.isnan(st) or math.isnan(lt):
        return (math.nan, math.nan, math.nan)
    stdr = st / ta
    ltdr = lt / ta
    return (stdr + ltdr, ltdr, stdr)


def _lag_mask(firm: np.ndarray, year: np.ndarray, k: int) -> np.ndarray:
    """True where row i-k is the same firm at year - k (rows sorted by firm, year)."""
    ok = np.zeros(len(year), dtype=bool)
    if len(year) > k:
        ok[k:] = (firm[k:] == firm[:-k]) & (year[k:] - year[:-k] == k)
    return ok


def _shift(values: np.ndarray, k: int, mask: np.ndarray) -> np.ndarray:
    out = np.full(len(values), np.nan)
    if len(values) > k:
        out[k:] = values[:-k]
    out[~mask] = np.nan
    return out


def _as_frame(history) -> pd.DataFrame:
    if isinstance(history, PanelDataset):
        return history.records
    if isinstance(history, pd.DataFrame):
        return history
    recs = list(history)
    if recs and isinstance(recs[0], FirmYearRecord):
        return pd.DataFrame([r.__dict__ for r in recs])
    return pd.DataFrame(recs)


def compute_firm_factors(history) -> pd.DataFrame:
    """Per firm-year determinants from raw balance-sheet fields.

    Accepts one firm's history or a whole panel (anything with firm_id,
    year and the raw columns). Growth needs the prior year; risk needs the
    three consecutive years t-2..t. Undefined values are NaN.
    """
    df = _as_frame(history).sort_values(["firm_id", "year"], kind="stable").reset_index(drop=True)
    firm = df["firm_id"].to_numpy()
    year = df["year"].to_numpy()
    sales = df["sales"].to_numpy(float)
    ta = df["total_assets"].to_numpy(float)
    ta = np.where(ta > 0, ta, np.nan)
    ebit = df["ebit"].to_numpy(float)

    lag1 = _lag_mask(firm, year, 1)
    lag2 = _lag_mask(firm, year, 2)
    prev_sales = _shift(sales, 1, lag1)
    with np.errstate(divide="ignore", invalid="ignore"):
        size = np.where(sales > 0, np.log(np.where(sales > 0, sales, 1.0)), np.nan)
    gr = np.where(prev_sales > 0, _div(sales - prev_sales, prev_sales), np.nan)

    e1 = _shift(ebit, 1, lag1)
    e2 = _shift(ebit, 2, lag2)
    window = np.column_stack([e2, e1, ebit])
    risk = np.full(len(df), np.nan)
    full = np.all(np.isfinite(window), axis=1)
    if full.any():
        risk[full] = np.std(window[full], axis=1, ddof=1)

    out = pd.DataFrame({
        "firm_id": firm,
        "year": year,
        "as_ratio": _div(df["tangible_assets"], ta),
        "size": size,
        "gr": gr,
        "pr": _div(ebit, ta),
        "ndts": _div(df["depreciation"], ta),
        "risk": risk,
        "ntcs": _div(df["trade_receivables"] - df["trade_payables"], np.where(sales != 0, sales, np.nan)),
        "cashta": _div(df["cash"], ta),
        "finexp": _div(df["financial_expenses"], np.where(sales != 0, sales, np.nan)),
    })
    return out


def regime_indicator(gdp_growth) -> int:
    """1 in a year of negative GDP growth, else 0."""
    if gdp_growth is None or (isinstance(gdp_growth, float) and math.isnan(gdp_growth)):
        raise DataError("gdp_growth is missing; the state dummy must be defined in every sample year")
    return int(gdp_growth < 0)


def compute_macro_factors(macro: pd.DataFrame) -> pd.DataFrame:
    """Credit growth from the credit-supply level; inflation and lending rate pass through."""
    m = macro.sort_values("year").reset_index(drop=True)
    years = m["year"].to_numpy()
    if len(years) and np.any(np.diff(years) != 1):
        raise DataError("macro series must cover a contiguous year range")
    cs = m["credit_supply"].to_numpy(float)
    prev = np.r_[np.nan, cs[:-1]]
    cred = np.where(prev != 0, _div(cs - prev, prev), np.nan)
    gdp = m["gdp_growth"].to_numpy(float)
    c = np.where(np.isnan(gdp), np.nan, (gdp < 0).astype(float))
    return pd.DataFrame({
        "year": years,
        "gdp_growth": gdp,
        "cred": cred,
        "infl": m["inflation"].to_numpy(float),
        "intr": m["lending_rate"].to_numpy(float),
        "c": c,
    })


def winsorize(df: pd.DataFrame, p: float, columns: Sequence[str]) -> pd.DataFrame:
    """Clamp each column at its p and 1-p sample quantiles (NaN ignored)."""
    if not 0.0 < p < 0.5:
        raise ValueError(f"winsorization level must lie in (0, 0.5), got {p}")
    out = df.copy()
    for col in columns:
        s = out[col]
        lo, hi = s.quantile(p), s.quantile(1.0 - p)
        out[col] = s.clip(lo, hi)
    return out


def derive_rows(dataset: PanelDataset, winsorize_p: float | None = None) -> pd.DataFrame:
    """All derived variables per firm-year, merged with year-level macro factors."""
    if dataset.macro is None:
        raise DataError("dataset has no macro series; run validate_and_merge first")
    rec = dataset.records
    st = rec["short_term_debt"].to_numpy(float)
    lt = rec["long_term_debt"].to_numpy(float)
    ta = rec["total_assets"].to_numpy(float)
    ta = np.where(ta > 0, ta, np.nan)
    stdr = _div(st, ta)
    ltdr = _div(lt, ta)
    firm = compute_firm_factors(rec)
    rows = pd.DataFrame({
        "firm_id": rec["firm_id"].to_numpy(),
        "year": rec["year"].to_numpy(),
        "tdr": stdr + ltdr,
        "ltdr": ltdr,
        "stdr": stdr,
    })
    for col in FIRM_FACTORS:
        rows[col] = firm[col].to_numpy()
    macro = compute_macro_factors(dataset.macro)
    rows = rows.merge(macro, on="year", how="left", validate="many_to_one")
    if rows["c"].isna().any():
        bad = sorted(rows.loc[rows["c"].isna(), "year"].unique().tolist())
        raise DataError(f"gdp_growth missing for sample years {bad}")
    rows["c"] = rows["c"].astype(int)
    if winsorize_p:
        rows = winsorize(rows, winsorize_p, LEVERAGE_FORMS + FIRM_FACTORS)
        # keep tdr = ltdr + stdr exact after clamping the components
        rows["tdr"] = rows["ltdr"] + rows["stdr"]
    return rows


@dataclass
class DesignMatrix:
    """Regression design with rows grouped by firm and years ascending.

    ``X`` holds regressors only (no constant); firm effects are handled by
    the estimators through ``firm_codes``.
    """

    firm_ids: np.ndarray
    years: np.ndarray
    y: np.ndarray
    X: np.ndarray
    names: list[str]
    leverage_form: str
    firm_factors: tuple[str, ...]
    macro_factors: tuple[str, ...]
    include_state_dummies: bool
    dynamic: bool = True

    def __post_init__(self):
        codes, uniques = pd.factorize(self.firm_ids, sort=False)
        self.firm_codes = codes.astype(np.intp)
        self.firms = list(uniques)

    @property
    def nobs(self) -> int:
        return len(self.y)

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def keys(self) -> list[tuple]:
        return list(zip(self.firm_ids.tolist(), self.years.tolist()))

    def take(self, rows) -> "DesignMatrix":
        rows = np.asarray(rows)
        return replace(self, firm_ids=self.firm_ids[rows], years=self.years[rows],
                       y=self.y[rows], X=self.X[rows])

    def drop_columns(self, drop: Iterable[str]) -> "DesignMatrix":
        drop = set(drop)
        keep = [j for j, n in enumerate(self.names) if n not in drop]
        return replace(self, X=self.X[:, keep], names=[self.names[j] for j in keep])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.names)
        df.insert(0, "y", self.y)
        df.insert(0, "year", self.years)
        df.insert(0, "firm_id", self.firm_ids)
        return df


def interaction_name(name: str) -> str:
    return f"{name}:c"


def build_design(derived: pd.DataFrame, leverage_form: str = "tdr", include_state_dummies: bool = True, *,
                 dynamic: bool = True, firm_factors: Sequence[str] = FIRM_FACTORS,
                 macro_factors: Sequence[str] = MACRO_FACTORS) -> DesignMatrix:
    """Lagged regressors for ``y_t``: DR_{t-1}, X_{t-1}, M_{t-1}, and optionally c_t interactions.

    A row at year t needs the same firm's row at t-1 and every required
    value present (listwise deletion). ``dynamic=False`` omits DR_{t-1}
    (static determinants model).
    """
    form = leverage_form.lower()
    if form not in LEVERAGE_FORMS:
        raise ValueError(f"leverage form must be one of {LEVERAGE_FORMS}, got {leverage_form!r}")
    firm_factors = tuple(firm_factors)
    macro_factors = tuple(macro_factors)
    df = derived.sort_values(["firm_id", "year"], kind="stable").reset_index(drop=True)
    firm = df["firm_id"].to_numpy()
    year = df["year"].to_numpy()
    lag = _lag_mask(firm, year, 1)

    names: list[str] = []
    cols: list[np.ndarray] = []
    if dynamic:
        names.append("lag_dr")
        cols.append(_shift(df[form].to_numpy(float), 1, lag))
    for f in firm_factors:
        names.append(f)
        cols.append(_shift(df[f].to_numpy(float), 1, lag))

    macro_by_year = df.drop_duplicates("year").set_index("year")
    for m in macro_factors:
        lookup = macro_by_year[m]
        cols.append(pd.Series(year - 1).map(lookup).to_numpy(float))
        names.append(m)
    base = len(names)
    c = df["c"].to_numpy(float)
    if include_state_dummies:
        names.append("c")
        cols.append(c)
        for j in range(base):
            names.append(interaction_name(names[j]))
            cols.append(cols[j] * c)

    X = np.column_stack(cols) if cols else np.empty((len(df), 0))
    y = df[form].to_numpy(float)
    ok = lag & np.isfinite(y) & np.all(np.isfinite(X), axis=1) & np.isfinite(c)
    if ok.sum() < X.shape[1] + 2:
        raise DesignError(
            f"only {int(ok.sum())} usable rows for {X.shape[1]} regressors; design is under-identified"
        )
    return DesignMatrix(firm[ok], year[ok].astype(np.int64), y[ok], X[ok], names, form,
                        firm_factors, macro_factors, include_state_dummies, dynamic)
