"""Descriptive tables, canonical serialization and text/CSV rendering."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .adjustment import AdjustmentCell, AdjustmentReport
from .features import DERIVED_COLUMNS, LABELS
from .mean_panel import TestResult

SIG_DIGITS = 6
DESCRIPTIVE_COLUMNS = DERIVED_COLUMNS


@dataclass
class YearMeansTable:
    variables: list[str]
    years: list[int]
    means: np.ndarray
    counts: np.ndarray
    firms: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.means, index=pd.Index(self.years, name="year"), columns=self.variables)
        df.insert(0, "n_firms", self.firms)
        return df

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "years": [int(y) for y in self.years],
            "means": self.means.tolist(),
            "counts": self.counts.astype(int).tolist(),
            "firms": self.firms.astype(int).tolist(),
        }


@dataclass
class CorrelationTable:
    variables: list[str]
    matrix: np.ndarray
    counts: np.ndarray

    def get(self, a: str, b: str) -> float:
        return float(self.matrix[self.variables.index(a), self.variables.index(b)])

    def to_dict(self) -> dict:
        return {"variables": list(self.variables), "matrix": self.matrix.tolist(),
                "counts": self.counts.astype(int).tolist()}


def _present_columns(rows: pd.DataFrame, columns: Sequence[str] | None) -> list[str]:
    if columns is not None:
        return list(columns)
    return [c for c in DESCRIPTIVE_COLUMNS if c in rows.columns]


def yearly_means(rows: pd.DataFrame, columns: Sequence[str] | None = None) -> YearMeansTable:
    """Per-year mean of each variable over the firms with a value that year."""
    if rows is None or len(rows) == 0:
        raise ValueError("yearly_means needs at least one row")
    cols = _present_columns(rows, columns)
    # a fixed summation order makes the means bit-identical under any row permutation
    data = rows[["firm_id", "year", *cols]].sort_values(["year", "firm_id"], kind="stable")
    years = np.sort(data["year"].unique())
    grouped = data.groupby("year", sort=True)
    means = grouped[cols].mean().reindex(years).to_numpy(float)
    counts = grouped[cols].count().reindex(years).to_numpy(int)
    firms = grouped["firm_id"].nunique().reindex(years).to_numpy(int)
    means = np.where(counts > 0, means, np.nan)
    return YearMeansTable(cols, [int(y) for y in years], means, counts, firms)


def correlation_matrix(rows: pd.DataFrame, columns: Sequence[str] | None = None,
                       min_pairs: int = 3) -> CorrelationTable:
    """Pairwise-complete Pearson correlations.

    Entries with fewer than ``min_pairs`` complete rows or a zero-variance
    side are NaN (missing).
    """
    if rows is None or len(rows) < 2:
        raise ValueError("correlation_matrix needs at least two rows")
    cols = _present_columns(rows, columns)
    A = rows[cols].to_numpy(float)
    k = len(cols)
    R = np.full((k, k), np.nan)
    C = np.zeros((k, k), dtype=int)
    finite = np.isfinite(A)
    for i in range(k):
        for j in range(i, k):
            ok = finite[:, i] & finite[:, j]
            n = int(ok.sum())
            C[i, j] = C[j, i] = n
            if n < min_pairs:
                continue
            x = A[ok, i] - A[ok, i].mean()
            y = A[ok, j] - A[ok, j].mean()
            sxx, syy = float(x @ x), float(y @ y)
            if sxx == 0.0 or syy == 0.0:
                continue
            r = float(x @ y) / math.sqrt(sxx * syy)
            R[i, j] = R[j, i] = 1.0 if i == j else min(1.0, max(-1.0, r))
    return CorrelationTable(cols, R, C)


# canonical JSON --------------------------------------------------------------

def _round(x: float) -> float | None:
    if not math.isfinite(x):
        return None
    if x == 0.0:
        return 0.0
    return float(format(x, f".{SIG_DIGITS}g"))


def to_plain(obj: Any) -> Any:
    """Recursively convert to JSON-ready builtins with 6-significant-digit floats."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False) + "\n"


# structured conversions -------------------------------------------------------

def test_to_dict(t: TestResult | None) -> dict | None:
    if t is None:
        return None
    return {"statistic": t.statistic, "df": t.df, "p_value": t.p_value, "names": list(t.names)}


test_to_dict.__test__ = False


def cell_to_dict(cell: AdjustmentCell) -> dict:
    rc = cell.coefficients
    se = None
    if rc.cov is not None:
        se = dict(zip(rc.names, np.sqrt(np.clip(np.diag(rc.cov), 0.0, None)).tolist()))
    tests = None
    if cell.tests is not None:
        t = cell.tests
        tests = {
            "delta_c": test_to_dict(t.delta_c),
            "beta_c": {k: test_to_dict(v) for k, v in t.beta_c.items()},
            "gamma_c": {k: test_to_dict(v) for k, v in t.gamma_c.items()},
            "firm_block": test_to_dict(t.firm_block),
            "macro_block": test_to_dict(t.macro_block),
        }
    targets = {}
    for state, tp in cell.targets.items():
        targets[state] = None if tp is None else {
            "speed": tp.speed, "a_star": tp.a_star, "beta_star": tp.beta_star, "gamma_star": tp.gamma_star,
        }
    return {
        "label": rc.label,
        "source": rc.source,
        "tau": rc.tau,
        "lambda": rc.lam,
        "nobs": rc.nobs,
        "n_firms": rc.n_firms,
        "coefficients": {
            "a": rc.a, "a_c": rc.a_c, "delta": rc.delta, "delta_c": rc.delta_c,
            "beta": rc.beta, "beta_c": rc.beta_c, "gamma": rc.gamma, "gamma_c": rc.gamma_c,
        },
        "std_errors": se,
        "speeds": {"speed_good": cell.speeds.speed_good, "speed_bad": cell.speeds.speed_bad},
        "targets": targets,
        "target_errors": dict(cell.target_errors),
        "tests": tests,
    }


def adjustment_to_dict(report: AdjustmentReport) -> dict:
    return {
        "leverage_form": report.leverage_form,
        "taus": list(report.taus),
        "cells": [cell_to_dict(c) for c in report.cells],
        "failures": dict(report.failures),
        "advisory": report.advisory,
    }


@dataclass
class StudyReport:
    """JSON-ready study output. Every section holds plain builtins."""

    metadata: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    descriptives: dict = field(default_factory=dict)
    hausman: dict = field(default_factory=dict)
    adjustment: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "diagnostics": self.diagnostics, "descriptives": self.descriptives,
                "hausman": self.hausman, "adjustment": self.adjustment, "errors": self.errors}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        d = json.loads(text)
        unknown = set(d) - {"metadata", "diagnostics", "descriptives", "hausman", "adjustment", "errors"}
        if unknown:
            raise ValueError(f"unknown report sections {sorted(unknown)}")
        return cls(**d)

    @property
    def ok(self) -> bool:
        return not self.errors


# CSV ----------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        r = _round(v)
        return "" if r is None else repr(r)
    return str(v)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def year_means_csv(table: dict) -> str:
    header = ["year", "n_firms"] + [f"{v}" for v in table["variables"]] + [f"n_{v}" for v in table["variables"]]
    rows = [[y, f, *m, *c] for y, f, m, c in zip(table["years"], table["firms"], table["means"], table["counts"])]
    return _csv(header, rows)


def correlations_csv(table: dict) -> str:
    v = table["variables"]
    rows = []
    for i, a in enumerate(v):
        for j, b in enumerate(v):
            rows.append([a, b, table["matrix"][i][j], table["counts"][i][j]])
    return _csv(["var1", "var2", "r", "n"], rows)


def hausman_csv(hausman: dict) -> str:
    rows = [[form, h.get("statistic"), h.get("df"), h.get("p_value"), h.get("nobs"), h.get("n_firms")]
            for form, h in sorted(hausman.items())]
    return _csv(["leverage_form", "statistic", "df", "p_value", "nobs", "n_firms"], rows)


def _flat_coefficients(cell: dict):
    co = cell["coefficients"]
    se = cell.get("std_errors") or {}
    yield "a", co["a"], None
    yield "c", co["a_c"], se.get("c")
    yield "lag_dr", co["delta"], se.get("lag_dr")
    yield "lag_dr:c", co["delta_c"], se.get("lag_dr:c")
    for group in ("beta", "gamma"):
        for name, v in co[group].items():
            yield name, v, se.get(name)
            yield f"{name}:c", co[f"{group}_c"][name], se.get(f"{name}:c")


def adjustment_csv(adjustment: dict) -> str:
    rows = []
    for form in sorted(adjustment):
        for cell in adjustment[form]["cells"]:
            for name, est, se in _flat_coefficients(cell):
                rows.append([form, cell["source"], cell["tau"], name, est, se])
    return _csv(["leverage_form", "engine", "tau", "term", "estimate", "std_error"], rows)


def speeds_csv(adjustment: dict) -> str:
    rows = []
    for form in sorted(adjustment):
        for cell in adjustment[form]["cells"]:
            t = (cell.get("tests") or {}).get("delta_c") or {}
            rows.append([form, cell["source"], cell["tau"], cell["coefficients"]["delta"],
                         cell["coefficients"]["delta_c"], cell["speeds"]["speed_good"], cell["speeds"]["speed_bad"],
                         t.get("statistic"), t.get("p_value")])
    return _csv(["leverage_form", "engine", "tau", "delta", "delta_c", "speed_good", "speed_bad",
                 "wald_delta_c", "p_delta_c"], rows)


def report_csv_files(report: StudyReport) -> dict[str, str]:
    out = {}
    d = report.descriptives
    if "year_means" in d:
        out["year_means.csv"] = year_means_csv(d["year_means"])
    if "correlations" in d:
        out["correlations.csv"] = correlations_csv(d["correlations"])
    if report.hausman:
        out["hausman.csv"] = hausman_csv(report.hausman)
    if report.adjustment:
        out["adjustment.csv"] = adjustment_csv(report.adjustment)
        out["speeds.csv"] = speeds_csv(report.adjustment)
    return out


# text -----------------------------------------------------------------------------

def _num(v, width=10, digits=4) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return " " * (width - 1) + "."
    if isinstance(v, int):
        return f"{v:>{width}d}"
    return f"{v:>{width}.{digits}f}"


def _stars(p) -> str:
    if p is None:
        return "   "
    return "***" if p < 0.01 else "** " if p < 0.05 else "*  " if p < 0.1 else "   "


def render_year_means(table: dict) -> str:
    v = table["variables"]
    lines = ["Mean values by year", "year  " + "".join(f"{LABELS.get(x, x):>10}" for x in v) + "   firms"]
    for y, f, m in zip(table["years"], table["firms"], table["means"]):
        lines.append(f"{y:<6}" + "".join(_num(x) for x in m) + f"{f:>8d}")
    return "\n".join(lines)


def render_correlations(table: dict) -> str:
    v = table["variables"]
    lines = ["Pearson correlations (pairwise complete)",
             "        " + "".join(f"{LABELS.get(x, x):>9}" for x in v)]
    for i, a in enumerate(v):
        row = table["matrix"][i]
        lines.append(f"{LABELS.get(a, a):<8}" + "".join(_num(row[j], 9, 3) if j <= i else " " * 9
                                                        for j in range(len(v))))
    return "\n".join(lines)


def render_hausman(hausman: dict) -> str:
    lines = ["Hausman test (FE vs RE, static determinants model)",
             f"{'form':<6}{'chi2':>14}{'df':>5}{'p-value':>12}"]
    for form, h in sorted(hausman.items()):
        lines.append(f"{LABELS.get(form, form):<6}{_num(h['statistic'], 14, 4)}{h['df']:>5d}{_num(h['p_value'], 12, 6)}")
    return "\n".join(lines)


def render_cell(form: str, cell: dict) -> str:
    tests = cell.get("tests") or {}
    lines = [f"{LABELS.get(form, form)} / {cell['label']}  (n={cell['nobs']}, firms={cell['n_firms']})",
             f"{'term':<12}{'estimate':>12}{'std.err':>12}"]
    for name, est, s in _flat_coefficients(cell):
        p = None
        if name == "lag_dr:c":
            p = (tests.get("delta_c") or {}).get("p_value")
        elif name.endswith(":c"):
            base = name[:-2]
            grp = tests.get("beta_c", {}) if base in cell["coefficients"]["beta"] else tests.get("gamma_c", {})
            p = (grp.get(base) or {}).get("p_value")
        label = LABELS.get(name.split(":")[0], name.split(":")[0]) + (":C" if name.endswith(":c") else "")
        lines.append(f"{label:<12}{_num(est, 12)}{_num(s, 12)} {_stars(p)}")
    sp = cell["speeds"]
    lines.append(f"delta = {_num(cell['coefficients']['delta'], 0).strip()}  "
                 f"speed (good) = {_num(sp['speed_good'], 0).strip()}  speed (bad) = {_num(sp['speed_bad'], 0).strip()}")
    for key, title in (("firm_block", "firm interactions"), ("macro_block", "macro interactions")):
        t = tests.get(key)
        if t:
            lines.append(f"joint test, {title}: W = {t['statistic']:.4f}, df = {t['df']}, p = {t['p_value']:.4g}")
    for state, msg in sorted(cell.get("target_errors", {}).items()):
        lines.append(f"target ({state}): {msg}")
    return "\n".join(lines)


def render_text(report: StudyReport) -> str:
    parts = []
    md = report.metadata
    if md:
        parts.append("Study settings\n" + "\n".join(f"  {k}: {json.dumps(to_plain(v))}" for k, v in sorted(md.items())))
    if report.diagnostics:
        parts.append("Diagnostics\n" + "\n".join(f"  {k}: {json.dumps(to_plain(v))}"
                                                 for k, v in sorted(report.diagnostics.items())))
    d = report.descriptives
    if "year_means" in d:
        parts.append(render_year_means(d["year_means"]))
    if "correlations" in d:
        parts.append(render_correlations(d["correlations"]))
    if report.hausman:
        parts.append(render_hausman(report.hausman))
    for form in sorted(report.adjustment):
        adj = report.adjustment[form]
        for cell in adj["cells"]:
            parts.append(render_cell(form, cell))
        for label, msg in sorted(adj.get("failures", {}).items()):
            parts.append(f"{LABELS.get(form, form)} / {label}: FAILED ({msg})")
        parts.append(f"note: {adj['advisory']}")
    for stage, msg in sorted(report.errors.items()):
        parts.append(f"ERROR in stage '{stage}': {msg}")
    return "\n\n".join(parts) + "\n"


def write_report(report: StudyReport, out_dir, fmt: str = "json") -> list[Path]:
    """Write the report in one format; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(report.to_json(), encoding="utf-8")
        written.append(p)
    elif fmt == "csv":
        for name, text in report_csv_files(report).items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            written.append(p)
    elif fmt == "text":
        p = out / "report.txt"
        p.write_text(render_text(report), encoding="utf-8")
        written.append(p)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return written
