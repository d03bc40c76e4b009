"""Loading and validating the firm-year panel and the macro series.

Empty CSV cells are missing values; no numeric sentinels are recognised.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

PANEL_COLUMNS = (
    "firm_id", "year", "sales", "total_assets", "short_term_debt", "long_term_debt",
    "ebit", "depreciation", "cash", "financial_expenses", "trade_receivables",
    "trade_payables", "tangible_assets",
)
PANEL_NUMERIC = PANEL_COLUMNS[2:]
MACRO_COLUMNS = ("year", "gdp_growth", "lending_rate", "inflation", "credit_supply")
MACRO_NUMERIC = MACRO_COLUMNS[1:]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class FirmYearRecord:
    firm_id: str
    year: int
    sales: float = math.nan
    total_assets: float = math.nan
    short_term_debt: float = math.nan
    long_term_debt: float = math.nan
    ebit: float = math.nan
    depreciation: float = math.nan
    cash: float = math.nan
    financial_expenses: float = math.nan
    trade_receivables: float = math.nan
    trade_payables: float = math.nan
    tangible_assets: float = math.nan


@dataclass(frozen=True)
class MacroYearRecord:
    year: int
    gdp_growth: float = math.nan
    lending_rate: float = math.nan
    inflation: float = math.nan
    credit_supply: float = math.nan


@dataclass(frozen=True)
class MergeDiagnostics:
    input_rows: int
    output_rows: int
    outside_macro_range: dict[int, int] = field(default_factory=dict)
    nonpositive_assets: int = 0
    missing_assets: int = 0

    @property
    def dropped(self) -> int:
        return sum(self.outside_macro_range.values()) + self.nonpositive_assets + self.missing_assets

    def to_dict(self) -> dict:
        return {
            "input_rows": self.input_rows,
            "output_rows": self.output_rows,
            "dropped": {
                "outside macro range": {str(k): v for k, v in sorted(self.outside_macro_range.items())},
                "nonpositive assets": self.nonpositive_assets,
                "missing assets": self.missing_assets,
            },
        }


@dataclass(frozen=True)
class PanelDataset:
    """Firm-year records (sorted by firm, year) plus an optional macro series.

    Treat as immutable; the frames are not copied on access.
    """

    records: pd.DataFrame
    macro: pd.DataFrame | None = None
    diagnostics: MergeDiagnostics | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def firms(self) -> list[str]:
        return list(pd.unique(self.records["firm_id"]))

    def firm_years(self) -> dict[str, np.ndarray]:
        return {f: g["year"].to_numpy() for f, g in self.records.groupby("firm_id", sort=False)}

    def iter_records(self):
        for row in self.records.itertuples(index=False):
            yield FirmYearRecord(**row._asdict())

    def equals(self, other: "PanelDataset") -> bool:
        if not self.records.equals(other.records):
            return False
        if (self.macro is None) != (other.macro is None):
            return False
        return self.macro is None or self.macro.equals(other.macro)


def _read_rows(path: Path, expected: tuple[str, ...]) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: file is empty") from None
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = [h.strip() for h in header]
    if header and header[0].startswith("﻿"):
        header[0] = header[0][1:]
    unknown = [h for h in header if h not in expected]
    missing = [h for h in expected if h not in header]
    dupes = [h for h, c in Counter(header).items() if c > 1]
    if unknown or missing or dupes:
        parts = []
        if missing:
            parts.append(f"missing columns {missing}")
        if unknown:
            parts.append(f"unknown columns {unknown}")
        if dupes:
            parts.append(f"duplicated columns {dupes}")
        raise DataError(f"{path}: bad header: " + "; ".join(parts))
    return header, rows


def _parse_number(cell: str, path: Path, line: int, column: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"{path}: row {line}, column '{column}': non-numeric value {cell!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}: row {line}, column '{column}': non-finite value {cell!r}")
    return value


def _parse_year(cell: str, path: Path, line: int) -> int:
    value = _parse_number(cell, path, line, "year")
    if math.isnan(value) or value != int(value):
        raise DataError(f"{path}: row {line}, column 'year': expected an integer year, got {cell!r}")
    return int(value)


def load_panel_csv(path) -> PanelDataset:
    """Read ``panel.csv`` into a dataset without macro data."""
    path = Path(path)
    header, rows = _read_rows(path, PANEL_COLUMNS)
    pos = {h: i for i, h in enumerate(header)}
    data: dict[str, list] = {c: [] for c in PANEL_COLUMNS}
    seen: dict[tuple[str, int], int] = {}
    for k, row in enumerate(rows):
        line = k + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        firm = row[pos["firm_id"]].strip()
        if firm == "":
            raise DataError(f"{path}: row {line}, column 'firm_id': empty identifier")
        year = _parse_year(row[pos["year"]], path, line)
        if (firm, year) in seen:
            raise DataError(
                f"{path}: duplicate key firm_id={firm!r}, year={year} (rows {seen[(firm, year)]} and {line})"
            )
        seen[(firm, year)] = line
        data["firm_id"].append(firm)
        data["year"].append(year)
        for col in PANEL_NUMERIC:
            data[col].append(_parse_number(row[pos[col]], path, line, col))
    return PanelDataset(_panel_frame(data))


def _panel_frame(data) -> pd.DataFrame:
    df = pd.DataFrame({c: data[c] for c in PANEL_COLUMNS})
    df["firm_id"] = df["firm_id"].astype(object)
    df["year"] = df["year"].astype(np.int64)
    for col in PANEL_NUMERIC:
        df[col] = df[col].astype(float)
    return df.sort_values(["firm_id", "year"], kind="stable").reset_index(drop=True)


def panel_from_records(records) -> PanelDataset:
    """Build a dataset from FirmYearRecord objects (or dicts with the same keys)."""
    data: dict[str, list] = {c: [] for c in PANEL_COLUMNS}
    seen = set()
    for rec in records:
        d = rec if isinstance(rec, dict) else {f.name: getattr(rec, f.name) for f in fields(rec)}
        key = (str(d["firm_id"]), int(d["year"]))
        if key in seen:
            raise DataError(f"duplicate key firm_id={key[0]!r}, year={key[1]}")
        seen.add(key)
        data["firm_id"].append(key[0])
        data["year"].append(key[1])
        for col in PANEL_NUMERIC:
            v = d.get(col)
            data[col].append(math.nan if v is None else float(v))
    return PanelDataset(_panel_frame(data))


def load_macro_csv(path) -> pd.DataFrame:
    """Read ``macro.csv``; years must be unique and contiguous."""
    path = Path(path)
    header, rows = _read_rows(path, MACRO_COLUMNS)
    pos = {h: i for i, h in enumerate(header)}
    data: dict[str, list] = {c: [] for c in MACRO_COLUMNS}
    for k, row in enumerate(rows):
        line = k + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        data["year"].append(_parse_year(row[pos["year"]], path, line))
        for col in MACRO_NUMERIC:
            data[col].append(_parse_number(row[pos[col]], path, line, col))
    return macro_frame(data, source=str(path))


def macro_frame(data, source: str = "macro series") -> pd.DataFrame:
    df = pd.DataFrame({c: data[c] for c in MACRO_COLUMNS})
    if df.empty:
        raise DataError(f"{source}: no rows")
    df["year"] = df["year"].astype(np.int64)
    for col in MACRO_NUMERIC:
        df[col] = df[col].astype(float)
    dupes = sorted(int(y) for y, c in Counter(df["year"]).items() if c > 1)
    if dupes:
        raise DataError(f"{source}: duplicate years {dupes}")
    df = df.sort_values("year").reset_index(drop=True)
    years = df["year"].to_numpy()
    gaps = sorted(set(range(int(years[0]), int(years[-1]) + 1)) - set(years.tolist()))
    if gaps:
        raise DataError(f"{source}: year range has gaps; missing years {gaps}")
    return df


def validate_and_merge(panel: PanelDataset, macro: pd.DataFrame | None = None) -> PanelDataset:
    """Attach the macro series and drop unusable rows.

    Drops rows outside the macro year range (counted per year) and rows
    whose total assets are missing or not strictly positive.
    """
    macro = panel.macro if macro is None else macro
    if macro is None:
        raise DataError("validate_and_merge needs a macro series")
    df = panel.records
    lo, hi = int(macro["year"].min()), int(macro["year"].max())
    outside = ~df["year"].between(lo, hi)
    by_year = {int(y): int(c) for y, c in df.loc[outside, "year"].value_counts().sort_index().items()}
    kept = df.loc[~outside]
    ta = kept["total_assets"]
    missing = ta.isna()
    nonpos = ~missing & (ta <= 0)
    out = kept.loc[~missing & ~nonpos].reset_index(drop=True)
    diag = MergeDiagnostics(len(df), len(out), by_year, int(nonpos.sum()), int(missing.sum()))
    if out.empty:
        raise DataError("no usable rows remain after validation (" + _describe_drops(diag) + ")")
    return PanelDataset(out, macro.reset_index(drop=True), diag)


def _describe_drops(diag: MergeDiagnostics) -> str:
    return (f"{sum(diag.outside_macro_range.values())} outside macro range, "
            f"{diag.nonpositive_assets} nonpositive assets, {diag.missing_assets} missing assets")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else repr(float(value))
    return str(value)


def write_panel_csv(dataset: PanelDataset | pd.DataFrame, path) -> None:
    """Write records in the ``panel.csv`` schema; floats use shortest round-trip repr."""
    df = dataset.records if isinstance(dataset, PanelDataset) else dataset
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_COLUMNS)
        for row in df[list(PANEL_COLUMNS)].itertuples(index=False):
            w.writerow([_fmt(v) for v in row])


def write_macro_csv(macro: pd.DataFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MACRO_COLUMNS)
        for row in macro[list(MACRO_COLUMNS)].itertuples(index=False):
            w.writerow([_fmt(v) for v in row])
