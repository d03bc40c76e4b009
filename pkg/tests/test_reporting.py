import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from capstruct.reporting import (StudyReport, canonical_json, correlation_matrix, render_text, report_csv_files,
                                 to_plain, write_report, yearly_means)


def pearson_two_pass(x, y):
    """Plain-Python two-pass Pearson on pairwise-complete entries."""
    pairs = [(a, b) for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b)]
    if len(pairs) < 3:
        return math.nan
    n = len(pairs)
    mx = math.fsum(a for a, _ in pairs) / n
    my = math.fsum(b for _, b in pairs) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in pairs)
    sxx = math.fsum((a - mx) ** 2 for a, _ in pairs)
    syy = math.fsum((b - my) ** 2 for _, b in pairs)
    if sxx == 0 or syy == 0:
        return math.nan
    return sxy / math.sqrt(sxx * syy)


def random_rows(seed, n=1000, k=5, missing=0.1):
    g = np.random.default_rng(seed)
    Z = g.standard_normal((n, k)) @ g.standard_normal((k, k)) + g.normal(0, 10, k)
    Z[g.random((n, k)) < missing] = np.nan
    df = pd.DataFrame(Z, columns=[f"v{j}" for j in range(k)])
    df.insert(0, "year", g.integers(1990, 1995, n))
    df.insert(0, "firm_id", [f"F{i}" for i in range(n)])
    return df


class TestYearlyMeans:
    def test_two_firms(self):
        rows = pd.DataFrame({"firm_id": ["a", "b"], "year": [1970, 1970], "tdr": [0.2, 0.4]})
        t = yearly_means(rows)
        assert t.variables == ["tdr"]
        assert t.means[0, 0] == pytest.approx(0.3)
        assert t.counts[0, 0] == 2

    def test_all_missing_cell(self):
        rows = pd.DataFrame({"firm_id": ["a", "b", "a"], "year": [1970, 1970, 1971],
                             "tdr": [0.2, 0.4, 0.1], "pr": [np.nan, np.nan, 0.3]})
        t = yearly_means(rows)
        assert math.isnan(t.means[0, 1]) and t.counts[0, 1] == 0
        assert t.means[1, 1] == pytest.approx(0.3)
        assert np.all(t.counts <= t.firms[:, None])

    def test_single_firm_identity(self):
        rows = pd.DataFrame({"firm_id": ["a"] * 3, "year": [2001, 2000, 2002], "tdr": [0.3, 0.1, 0.5]})
        t = yearly_means(rows)
        assert t.years == [2000, 2001, 2002]
        assert_array_equal(t.means[:, 0], [0.1, 0.3, 0.5])

    def test_empty(self):
        with pytest.raises(ValueError):
            yearly_means(pd.DataFrame({"firm_id": [], "year": [], "tdr": []}))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_row_order_invariant(self, seed):
        rows = random_rows(seed % 10_000, n=200)
        perm = rows.sample(frac=1.0, random_state=seed % 2**31)
        a, b = yearly_means(rows), yearly_means(perm)
        assert_array_equal(a.means, b.means)
        assert_array_equal(a.counts, b.counts)


class TestCorrelation:
    def test_perfect(self):
        rows = pd.DataFrame({"x": [1.0, 2, 3], "y": [2.0, 4, 6], "z": [3.0, 2, 1]})
        t = correlation_matrix(rows, ["x", "y", "z"])
        assert t.get("x", "y") == pytest.approx(1.0)
        assert t.get("x", "z") == pytest.approx(-1.0)

    def test_constant_column_missing(self):
        rows = pd.DataFrame({"x": [1.0, 2, 3, 4], "k": [5.0] * 4})
        t = correlation_matrix(rows, ["x", "k"])
        assert math.isnan(t.get("x", "k")) and math.isnan(t.get("k", "k"))
        assert t.get("x", "x") == 1.0

    def test_too_few_pairs(self):
        rows = pd.DataFrame({"x": [1.0, 2, np.nan, 4], "y": [1.0, np.nan, 3, 5]})
        t = correlation_matrix(rows, ["x", "y"])
        assert math.isnan(t.get("x", "y")) and t.counts[0, 1] == 2

    def test_precondition(self):
        with pytest.raises(ValueError):
            correlation_matrix(pd.DataFrame({"x": [1.0]}), ["x"])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_two_pass_oracle(self, seed):
        rows = random_rows(seed)
        cols = [c for c in rows.columns if c.startswith("v")]
        t = correlation_matrix(rows, cols)
        for i, a in enumerate(cols):
            for j, b in enumerate(cols):
                expected = 1.0 if i == j else pearson_two_pass(rows[a].tolist(), rows[b].tolist())
                assert abs(t.matrix[i, j] - expected) <= 1e-12
        assert_array_equal(t.matrix, t.matrix.T)
        assert np.all(np.abs(t.matrix[np.isfinite(t.matrix)]) <= 1.0)


def sample_report():
    return StudyReport(
        metadata={"seed": 3, "taus": [0.1, 0.5], "lambda": 0.0},
        diagnostics={"dropped": {"nonpositive assets": 2}, "warnings": []},
        descriptives={"x": [1 / 3, float("nan"), np.float64(2.0)]},
        hausman={"tdr": {"statistic": 12.3456789, "df": 6, "p_value": 0.0549}},
        adjustment={},
        errors={},
    )


class TestSerialization:
    def test_to_plain(self):
        assert to_plain({"a": np.float64(1 / 3), "b": float("inf"), "c": np.int64(4), 1: (True,)}) == \
            {"a": 0.333333, "b": None, "c": 4, "1": [True]}

    def test_canonical_json_sorted(self):
        text = canonical_json({"b": 1, "a": 2.0})
        assert text.index('"a"') < text.index('"b"') and text.endswith("\n")

    def test_write_read_write(self, tmp_path):
        first = sample_report().to_json()
        again = StudyReport.from_json(first).to_json()
        assert first == again
        assert json.loads(first)["hausman"]["tdr"]["statistic"] == 12.3457

    def test_unknown_section(self):
        with pytest.raises(ValueError):
            StudyReport.from_json('{"extra": 1}')

    def test_formats(self, tmp_path):
        rep = sample_report()
        assert [p.name for p in write_report(rep, tmp_path, "json")] == ["report.json"]
        assert write_report(rep, tmp_path, "text")[0].read_text().endswith("\n")
        assert isinstance(report_csv_files(rep), dict)
        assert "ERROR" not in render_text(rep)
        with pytest.raises(ValueError):
            write_report(rep, tmp_path, "xml")
