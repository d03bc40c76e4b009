import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from capstruct.features import (LEVERAGE_FORMS, DesignError, build_design, compute_firm_factors,
                                compute_leverage_ratios, compute_macro_factors, derive_rows, interaction_name,
                                regime_indicator, winsorize)
from capstruct.panel_store import DataError, FirmYearRecord, macro_frame, panel_from_records, validate_and_merge

CURRENCY = ("sales", "total_assets", "short_term_debt", "long_term_debt", "ebit", "depreciation", "cash",
            "financial_expenses", "trade_receivables", "trade_payables", "tangible_assets")


def record(firm, year, **kw):
    base = dict(sales=100.0, total_assets=200.0, short_term_debt=10.0, long_term_debt=30.0, ebit=20.0,
                depreciation=5.0, cash=8.0, financial_expenses=2.0, trade_receivables=10.0, trade_payables=4.0,
                tangible_assets=80.0)
    base.update(kw)
    return FirmYearRecord(firm, year, **base)


def macro(years, gdp=None):
    n = len(years)
    gdp = [1.0] * n if gdp is None else gdp
    return macro_frame({"year": list(years), "gdp_growth": gdp, "lending_rate": [5.0 + k for k in range(n)],
                        "inflation": [2.0] * n, "credit_supply": [100.0 * 1.1**k for k in range(n)]})


def random_panel(seed, n_firms=6, years=range(2000, 2008), drop=0.15):
    g = np.random.default_rng(seed)
    recs = []
    for i in range(n_firms):
        for y in years:
            if g.random() < drop:
                continue
            vals = {c: float(g.uniform(1, 100)) for c in CURRENCY}
            vals["total_assets"] = float(g.uniform(100, 500))
            vals["ebit"] = float(g.normal(10, 5))
            recs.append(FirmYearRecord(f"F{i}", y, **vals))
    ys = list(years)
    gdp = [(-1.0 if k % 3 == 1 else 2.0) for k in range(len(ys) + 1)]
    return validate_and_merge(panel_from_records(recs), macro([ys[0] - 1] + ys, gdp))


class TestLeverage:
    def test_direct_division(self):
        assert compute_leverage_ratios(record("A", 2000)) == (0.20, 0.15, 0.05)

    def test_zero_debt(self):
        assert compute_leverage_ratios(record("A", 2000, short_term_debt=0.0, long_term_debt=0.0)) == (0, 0, 0)

    def test_above_one_permitted(self):
        tdr, _, _ = compute_leverage_ratios(record("A", 2000, total_assets=100.0, short_term_debt=150.0,
                                                   long_term_debt=0.0))
        assert tdr == 1.5

    def test_missing_debt_marks_missing(self):
        out = compute_leverage_ratios(record("A", 2000, long_term_debt=math.nan))
        assert all(math.isnan(v) for v in out)


class TestFirmFactors:
    def test_examples(self):
        hist = [record("A", 2000, sales=100.0), record("A", 2001, sales=110.0), record("A", 2002)]
        f = compute_firm_factors(hist)
        assert f.loc[0, "size"] == pytest.approx(4.605170, abs=1e-6)
        assert f.loc[1, "gr"] == pytest.approx(0.10)
        assert f.loc[2, "risk"] == 0.0
        assert f.loc[0, "ntcs"] == pytest.approx(0.06)
        assert f.loc[0, "pr"] == 0.1 and f.loc[0, "ndts"] == 0.025
        assert f.loc[0, "cashta"] == 0.04 and f.loc[0, "finexp"] == 0.02 and f.loc[0, "as_ratio"] == 0.4

    def test_risk_is_sample_std_of_three_years(self):
        f = compute_firm_factors([record("A", 2000 + k, ebit=e) for k, e in enumerate([1.0, 2.0, 3.0, 7.0])])
        assert math.isnan(f.loc[0, "risk"]) and math.isnan(f.loc[1, "risk"])
        assert f.loc[2, "risk"] == pytest.approx(1.0)
        assert f.loc[3, "risk"] == pytest.approx(np.std([2.0, 3.0, 7.0], ddof=1))

    def test_gaps_break_windows(self):
        f = compute_firm_factors([record("A", y) for y in (2000, 2001, 2003, 2004, 2005)])
        assert math.isnan(f.loc[2, "gr"])
        assert math.isnan(f.loc[3, "risk"])
        assert f.loc[4, "risk"] == 0.0

    def test_nonpositive_sales(self):
        f = compute_firm_factors([record("A", 2000, sales=0.0), record("A", 2001, sales=-5.0)])
        assert f["size"].isna().all()
        assert f["ntcs"].isna().iloc[0]
        assert math.isnan(f.loc[1, "gr"])

    def test_firms_do_not_leak(self):
        f = compute_firm_factors([record("A", 2000), record("B", 2001), record("B", 2002)])
        f = f.set_index(["firm_id", "year"])
        assert math.isnan(f.loc[("B", 2001), "gr"])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, k):
        ds = random_panel(seed, n_firms=3, drop=0.0)
        scaled = ds.records.copy()
        for c in CURRENCY:
            scaled[c] = scaled[c] * k
        a = compute_firm_factors(ds.records)
        b = compute_firm_factors(scaled)
        for col in ("pr", "ndts", "cashta", "as_ratio", "ntcs", "finexp", "gr"):
            assert_allclose(b[col], a[col], rtol=1e-12, atol=1e-15)
        assert_allclose(b["size"], a["size"] + math.log(k), rtol=0, atol=1e-12)
        assert_allclose(b["risk"], k * a["risk"], rtol=1e-12)
        for r1, r2 in zip(ds.records.itertuples(), scaled.itertuples()):
            assert_allclose(compute_leverage_ratios(r2), compute_leverage_ratios(r1), rtol=1e-12)


class TestMacro:
    def test_credit_growth(self):
        m = compute_macro_factors(macro_frame({"year": [2000, 2001, 2002], "gdp_growth": [1, -2, 0],
                                               "lending_rate": [4, 5, 6], "inflation": [1, 2, 3],
                                               "credit_supply": [100.0, 110.0, 110.0]}))
        assert math.isnan(m.loc[0, "cred"])
        assert m.loc[1, "cred"] == pytest.approx(0.10)
        assert m.loc[2, "cred"] == 0.0
        assert list(m["intr"]) == [4, 5, 6] and list(m["infl"]) == [1, 2, 3]
        assert list(m["c"]) == [0, 1, 0]

    def test_regime(self):
        assert regime_indicator(-1.0) == 1
        assert regime_indicator(2.0) == 0
        assert regime_indicator(0.0) == 0
        with pytest.raises(DataError):
            regime_indicator(math.nan)

    def test_missing_gdp_in_sample_year(self):
        ds = panel_from_records([record("A", 2000), record("A", 2001)])
        m = macro([2000, 2001], gdp=[1.0, math.nan])
        with pytest.raises(DataError, match="gdp_growth"):
            derive_rows(validate_and_merge(ds, m))


class TestDerivedRows:
    def test_tdr_identity(self):
        rows = derive_rows(random_panel(1))
        assert np.all((rows["tdr"] - (rows["ltdr"] + rows["stdr"])).dropna() == 0.0)
        assert set(rows["c"].unique()) <= {0, 1}
        assert (rows["risk"].dropna() >= 0).all()

    def test_winsorize_clamps_and_keeps_identity(self):
        rows = derive_rows(random_panel(2, n_firms=20), winsorize_p=0.1)
        assert np.all((rows["tdr"] - (rows["ltdr"] + rows["stdr"])).dropna() == 0.0)
        raw = derive_rows(random_panel(2, n_firms=20))
        assert rows["pr"].max() <= raw["pr"].max() and rows["pr"].min() >= raw["pr"].min()
        assert rows["pr"].max() == pytest.approx(raw["pr"].quantile(0.9))

    def test_winsorize_level(self):
        with pytest.raises(ValueError):
            winsorize(pd.DataFrame({"a": [1.0]}), 0.5, ["a"])


class TestBuildDesign:
    def derived(self, years, firm="A", **kw):
        ds = panel_from_records([record(firm, y, ebit=10.0 + y - 2000, **kw) for y in years])
        return derive_rows(validate_and_merge(ds, macro(range(1998, 2006), gdp=[1, 1, -1, 1, -1, 1, 1, 1])))

    def test_risk_window(self):
        rows = self.derived([2000, 2001, 2002]).set_index("year")
        assert rows["risk"].isna().tolist() == [True, True, False]

        def firms(years):
            return pd.concat([self.derived(years, firm=f) for f in "ABC"])

        # regressors are lagged: a row at t needs RISK_{t-1}, so three years give no usable row
        with pytest.raises(DesignError, match="only 0 usable rows"):
            build_design(firms([2000, 2001, 2002]), "tdr", False, dynamic=False, firm_factors=("risk",),
                         macro_factors=())
        d = build_design(firms([2000, 2001, 2002, 2003]), "tdr", False, dynamic=False, firm_factors=("risk",),
                         macro_factors=())
        assert d.keys() == [("A", 2003), ("B", 2003), ("C", 2003)]

    def test_gap_gives_no_rows(self):
        with pytest.raises(DesignError):
            build_design(self.derived([2000, 2002]), "tdr", False, firm_factors=("pr",), macro_factors=())

    def test_lags_and_interactions(self):
        rows = pd.concat([self.derived(range(2000, 2006), firm=f, sales=s) for f, s in zip("ABCDEF", (100.0, 50.0, 70.0, 20.0, 90.0, 40.0))])
        d = build_design(rows, "ltdr", True, firm_factors=("pr", "cashta"), macro_factors=("intr", "cred"))
        assert d.names == ["lag_dr", "pr", "cashta", "intr", "cred", "c",
                           "lag_dr:c", "pr:c", "cashta:c", "intr:c", "cred:c"]
        idx = rows.set_index(["firm_id", "year"])
        for k, (firm, year) in enumerate(d.keys()):
            assert d.y[k] == idx.loc[(firm, year), "ltdr"]
            assert d.X[k, 0] == idx.loc[(firm, year - 1), "ltdr"]
            assert d.X[k, 1] == idx.loc[(firm, year - 1), "pr"]
            assert d.X[k, 3] == idx.loc[(firm, year - 1), "intr"]
            assert d.X[k, 5] == idx.loc[(firm, year), "c"]
        c = d.column("c")
        for name in ("lag_dr", "pr", "cashta", "intr", "cred"):
            assert_array_equal(d.column(interaction_name(name)), d.column(name) * c)

    def test_interaction_cell(self):
        rows = self.derived(range(2000, 2006), cash=100.0)  # cashta = 0.5
        d = build_design(rows, "tdr", True, dynamic=False, firm_factors=("cashta",), macro_factors=())
        for k, (_, year) in enumerate(d.keys()):
            assert d.column("cashta:c")[k] == (0.5 if d.column("c")[k] == 1 else 0.0)

    def test_static_design_has_no_lagged_ratio(self):
        d = build_design(derive_rows(random_panel(4)), "stdr", False, dynamic=False, firm_factors=("pr",),
                         macro_factors=("infl",))
        assert d.names == ["pr", "infl"]
        assert not d.dynamic

    def test_unknown_form(self):
        with pytest.raises(ValueError):
            build_design(derive_rows(random_panel(4)), "mdr", False)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(LEVERAGE_FORMS))
    def test_lag_consistency_on_overlapping_rows(self, seed, form):
        rows = derive_rows(random_panel(seed, n_firms=8, drop=0.2))
        try:
            d = build_design(rows, form, True, firm_factors=("pr", "ndts", "gr"), macro_factors=("intr", "cred"))
        except DesignError:
            return
        pos = {key: k for k, key in enumerate(d.keys())}
        for k, (firm, year) in enumerate(d.keys()):
            prev = pos.get((firm, year - 1))
            if prev is not None:
                assert d.X[k, 0] == d.y[prev]
        # grouped by firm with years ascending
        f = pd.Series(d.firm_ids)
        assert all(np.all(np.diff(d.years[f == firm]) > 0) for firm in f.unique())
        assert f.ne(f.shift()).sum() == f.nunique()
