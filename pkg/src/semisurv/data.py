"""Clinical tables, preprocessing and survival labeling.

A :class:`ClinicalTable` is the raw ingested form: attribute columns with
explicit missing cells (``None``) plus the two outcome columns.  The
preprocessing protocol is

1. stratify every attribute into at most ``max_levels`` categories,
2. drop attributes that are (nearly) constant,
3. label rows for a survival threshold ``T`` (years).

Step 3 produces a :class:`SurvivalDataset`, whose feature matrix holds
integer level codes with ``-1`` marking a missing cell.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    EmptyColumn,
    InputError,
    InvalidOutcomeValue,
    MalformedCsv,
    MissingOutcomeColumn,
    NoLabeledSamples,
)

DAYS_PER_YEAR = 365.25
MISSING_TOKENS = {"", "na"}
OTHER_LEVEL = "OTHER"
ID_COLUMN = "patient_id"
OUTCOME_COLUMNS = ("vital_status", "survival_days")
MISSING = -1

POSITIVE, NEGATIVE, UNLABELED = 1, -1, 0


@dataclass(frozen=True)
class AttributeColumn:
    name: str
    kind: str
    values: tuple
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise InputError(f"unknown column kind {self.kind!r}")

    @property
    def observed(self) -> list:
        return [v for v in self.values if v is not None]

    @property
    def n_missing(self) -> int:
        return sum(v is None for v in self.values)


@dataclass(frozen=True)
class ClinicalTable:
    attributes: tuple
    vital_status: tuple
    survival_days: tuple
    row_ids: tuple

    def __post_init__(self):
        n = len(self.row_ids)
        if len(self.vital_status) != n or len(self.survival_days) != n:
            raise InputError("outcome columns differ in length")
        for col in self.attributes:
            if len(col.values) != n:
                raise InputError(f"column {col.name!r} has wrong length")

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    @property
    def names(self) -> list:
        return [c.name for c in self.attributes]

    def column(self, name: str) -> AttributeColumn:
        for col in self.attributes:
            if col.name == name:
                return col
        raise KeyError(name)

    def missing_fraction(self) -> float:
        cells = self.n_rows * len(self.attributes)
        if cells == 0:
            return 0.0
        return sum(c.n_missing for c in self.attributes) / cells

    def replace_attributes(self, attributes) -> "ClinicalTable":
        return ClinicalTable(tuple(attributes), self.vital_status,
                             self.survival_days, self.row_ids)


@dataclass(frozen=True)
class Schema:
    """Post-preprocessing attribute names with their ordered levels."""

    names: tuple
    levels: tuple

    @property
    def n_attributes(self) -> int:
        return len(self.names)

    @property
    def n_levels(self) -> tuple:
        return tuple(len(lv) for lv in self.levels)

    @classmethod
    def from_table(cls, table: ClinicalTable) -> "Schema":
        for col in table.attributes:
            if col.kind != "categorical":
                raise InputError(
                    f"column {col.name!r} is numeric; stratify the table first")
        return cls(tuple(table.names), tuple(tuple(c.levels) for c in table.attributes))

    @classmethod
    def from_n_levels(cls, n_levels: Sequence[int]) -> "Schema":
        names = tuple(f"x{j}" for j in range(len(n_levels)))
        return cls(names, tuple(tuple(str(i) for i in range(k)) for k in n_levels))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "levels": [list(lv) for lv in self.levels]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(tuple(d["names"]), tuple(tuple(lv) for lv in d["levels"]))


@dataclass(frozen=True)
class LabelingConfig:
    T: float
    days_per_year: float = DAYS_PER_YEAR

    def __post_init__(self):
        if not self.T > 0:
            raise InputError(f"survival threshold must be positive, got {self.T}")


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Level-coded samples split into positive, negative and unlabeled pools.

    ``X`` has one column per schema attribute holding a level index or
    ``-1`` for missing.  ``labels`` is +1, -1 or 0 (unlabeled).
    """

    X: np.ndarray
    labels: np.ndarray
    schema: Schema
    row_ids: tuple = ()
    T: float | None = None

    @property
    def labeled_pos(self) -> np.ndarray:
        return np.flatnonzero(self.labels == POSITIVE)

    @property
    def labeled_neg(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NEGATIVE)

    @property
    def unlabeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels == UNLABELED)

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def labeled_xy(self) -> tuple:
        idx = self.labeled
        return self.X[idx], self.labels[idx].astype(int)

    def unlabeled_x(self) -> np.ndarray:
        return self.X[self.unlabeled]

    def without_unlabeled(self) -> "SurvivalDataset":
        idx = self.labeled
        return SurvivalDataset(self.X[idx], self.labels[idx], self.schema,
                               tuple(self.row_ids[i] for i in idx) if self.row_ids else (),
                               self.T)


# --------------------------------------------------------------------------
# CSV input/output

def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _try_float(cell: str):
    try:
        x = float(cell)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def _parse_days(cell: str, row: int) -> int:
    text = cell.strip()
    try:
        x = float(text)
    except ValueError:
        raise InvalidOutcomeValue(f"row {row}: survival_days {cell!r} is not a number") from None
    if not math.isfinite(x) or x < 0 or x != int(x):
        raise InvalidOutcomeValue(
            f"row {row}: survival_days must be a non-negative integer, got {cell!r}")
    return int(x)


def parse_clinical_table(source, schema_hints: dict | None = None) -> ClinicalTable:
    """Read a clinical CSV from a text/byte stream, a path-like or a string of text.

    Non-outcome columns whose observed cells all parse as numbers become
    ``numeric``; everything else is ``categorical``.  ``schema_hints`` maps a
    column name to a forced kind.
    """
    text = _read_text(source)
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedCsv("empty file: header row missing")
    header = [h.strip() for h in rows[0]]
    if any(h == "" for h in header) or len(set(header)) != len(header):
        raise MalformedCsv("header has empty or duplicated column names")
    for name in OUTCOME_COLUMNS:
        if name not in header:
            raise MissingOutcomeColumn(f"required column {name!r} not found")
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise MalformedCsv(f"line {i}: expected {len(header)} fields, got {len(r)}")

    cols = {name: [r[j] for r in body] for j, name in enumerate(header)}

    vital = []
    for i, cell in enumerate(cols["vital_status"], start=2):
        v = cell.strip().lower()
        if v not in ("alive", "dead"):
            raise InvalidOutcomeValue(f"row {i}: vital_status {cell!r} not in {{alive, dead}}")
        vital.append(v)
    days = [_parse_days(c, i) for i, c in enumerate(cols["survival_days"], start=2)]
    if ID_COLUMN in cols:
        row_ids = tuple(c.strip() for c in cols[ID_COLUMN])
    else:
        row_ids = tuple(str(i) for i in range(len(body)))

    hints = schema_hints or {}
    attributes = []
    for name in header:
        if name in OUTCOME_COLUMNS or name == ID_COLUMN:
            continue
        raw = cols[name]
        kind = hints.get(name)
        if kind is None:
            observed = [c for c in raw if not _is_missing(c)]
            numeric = bool(observed) and all(_try_float(c) is not None for c in observed)
            kind = "numeric" if numeric else "categorical"
        attributes.append(_make_column(name, kind, raw))
    return ClinicalTable(tuple(attributes), tuple(vital), tuple(days), row_ids)


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8-sig") if isinstance(data, bytes) else data
    with open(source, encoding="utf-8-sig", newline="") as fh:
        return fh.read()


def _make_column(name: str, kind: str, raw: Iterable[str]) -> AttributeColumn:
    if kind == "numeric":
        values = []
        for c in raw:
            if _is_missing(c):
                values.append(None)
                continue
            x = _try_float(c)
            if x is None:
                raise MalformedCsv(f"column {name!r}: {c!r} is not numeric")
            values.append(x)
        return AttributeColumn(name, "numeric", tuple(values))
    if kind != "categorical":
        raise InputError(f"unknown column kind {kind!r} for {name!r}")
    values = tuple(None if _is_missing(c) else c.strip() for c in raw)
    levels = tuple(sorted({v for v in values if v is not None}))
    return AttributeColumn(name, "categorical", values, levels)


def format_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def write_clinical_table(table: ClinicalTable, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow([ID_COLUMN, *table.names, *OUTCOME_COLUMNS])
    for i in range(table.n_rows):
        cells = [table.row_ids[i]]
        for col in table.attributes:
            v = col.values[i]
            if v is None:
                cells.append("")
            elif col.kind == "numeric":
                cells.append(repr(float(v)))
            else:
                cells.append(v)
        cells += [table.vital_status[i], str(table.survival_days[i])]
        writer.writerow(cells)


def table_to_csv(table: ClinicalTable) -> str:
    buf = io.StringIO()
    write_clinical_table(table, buf)
    return buf.getvalue()


# --------------------------------------------------------------------------
# stratification and constancy filtering

def _quantile_edges(values: np.ndarray, max_levels: int) -> list:
    qs = np.quantile(values, np.arange(1, max_levels) / max_levels)
    edges = sorted({float(q) for q in qs})
    # interpolated quantiles can still leave a bin without observations
    while edges:
        counts = np.bincount(np.searchsorted(edges, values, side="left"),
                             minlength=len(edges) + 1)
        empty = np.flatnonzero(counts[1:] == 0)
        if len(empty) == 0:
            break
        del edges[empty[0]]
    return edges


def _bin_labels(edges: Sequence[float]) -> tuple:
    if not edges:
        return ("all",)
    f = [format_number(e) for e in edges]
    labels = [f"<={f[0]}"]
    labels += [f"({f[i]},{f[i + 1]}]" for i in range(len(f) - 1)]
    labels.append(f">{f[-1]}")
    return tuple(labels)


def _merge_rare_levels(values: Sequence, levels: Sequence[str], max_levels: int) -> dict:
    """Map each level to itself or to OTHER, keeping the ``max_levels - 1`` most frequent."""
    counts = Counter(v for v in values if v is not None)
    order = sorted(levels, key=lambda lv: (-counts[lv], lv))
    kept = set(order[: max_levels - 1])
    return {lv: (lv if lv in kept else OTHER_LEVEL) for lv in levels}


@dataclass
class _ColumnRule:
    kind: str  # "keep", "values", "bins" or "merge"
    levels: tuple
    edges: tuple = ()
    mapping: dict = field(default_factory=dict)

    def apply(self, v):
        if v is None:
            return None
        if self.kind == "keep":
            return v if v in self.levels else None
        if self.kind == "values":
            s = format_number(v)
            return s if s in self.levels else None
        if self.kind == "bins":
            return self.levels[int(np.searchsorted(self.edges, v, side="left"))]
        mapped = self.mapping.get(v)
        if mapped is None:
            return OTHER_LEVEL if OTHER_LEVEL in self.levels else None
        return mapped

    def to_dict(self) -> dict:
        return {"kind": self.kind, "levels": list(self.levels),
                "edges": list(self.edges), "mapping": dict(self.mapping)}

    @classmethod
    def from_dict(cls, d: dict) -> "_ColumnRule":
        return cls(d["kind"], tuple(d["levels"]), tuple(d["edges"]), dict(d["mapping"]))


class Stratifier(BaseEstimator, TransformerMixin):
    """Reduce every attribute to at most ``max_levels`` categories.

    Numeric columns with more distinct values than ``max_levels`` are cut at
    equal-frequency quantiles of their observed values; categorical columns
    keep their ``max_levels - 1`` most frequent levels and pool the rest into
    ``OTHER``.  Columns that already fit are left as they are (numeric ones
    become categorical over their distinct values).
    """

    def __init__(self, max_levels: int = 4):
        self.max_levels = max_levels

    def fit(self, table: ClinicalTable, y=None):
        if self.max_levels < 2:
            raise InputError("max_levels must be at least 2")
        self.rules_ = {}
        for col in table.attributes:
            obs = col.observed
            if not obs:
                raise EmptyColumn(f"column {col.name!r} has no observed values")
            if col.kind == "numeric":
                distinct = sorted(set(obs))
                if len(distinct) <= self.max_levels:
                    levels = tuple(format_number(v) for v in distinct)
                    rule = _ColumnRule("values", levels)
                else:
                    edges = _quantile_edges(np.asarray(obs, dtype=float), self.max_levels)
                    rule = _ColumnRule("bins", _bin_labels(edges), tuple(edges))
            elif len(col.levels) <= self.max_levels:
                rule = _ColumnRule("keep", tuple(col.levels))
            else:
                mapping = _merge_rare_levels(col.values, col.levels, self.max_levels)
                kept = tuple(lv for lv in col.levels if mapping[lv] == lv)
                rule = _ColumnRule("merge", kept + (OTHER_LEVEL,), mapping=mapping)
            self.rules_[col.name] = rule
        return self

    def transform(self, table: ClinicalTable) -> ClinicalTable:
        cols = []
        for col in table.attributes:
            rule = self.rules_[col.name]
            values = tuple(rule.apply(v) for v in col.values)
            cols.append(AttributeColumn(col.name, "categorical", values, rule.levels))
        return table.replace_attributes(cols)


def stratify_attributes(table: ClinicalTable, max_levels: int = 4) -> ClinicalTable:
    return Stratifier(max_levels).fit_transform(table)


def _is_near_constant(col: AttributeColumn, threshold_frac: float) -> bool:
    obs = col.observed
    if not obs:
        return True
    modal = Counter(obs).most_common(1)[0][1]
    return modal / len(obs) > threshold_frac


def drop_near_constant(table: ClinicalTable, threshold_frac: float = 0.99) -> ClinicalTable:
    """Remove attributes whose modal observed value covers more than ``threshold_frac``.

    Fractions count observed cells only; columns with no observed cell are removed.
    """
    if not 0 < threshold_frac < 1:
        raise InputError("threshold_frac must lie strictly between 0 and 1")
    kept = [c for c in table.attributes if not _is_near_constant(c, threshold_frac)]
    return table.replace_attributes(kept)


class ClinicalPreprocessor(BaseEstimator, TransformerMixin):
    """Stratify then drop near-constant attributes; remembers the fitted schema.

    ``transform`` returns the preprocessed table, ``encode`` a level-coded
    matrix that trees and ensembles consume.  The fitted state round-trips
    through ``to_dict``/``from_dict`` so new tables can be encoded at
    prediction time.
    """

    def __init__(self, max_levels: int = 4, constancy_threshold: float = 0.99):
        self.max_levels = max_levels
        self.constancy_threshold = constancy_threshold

    def fit(self, table: ClinicalTable, y=None):
        # fully missing columns would be dropped below anyway, but the
        # stratifier cannot bin them, so remove them first
        table = table.replace_attributes([c for c in table.attributes if c.observed])
        stratifier = Stratifier(self.max_levels).fit(table)
        stratified = stratifier.transform(table)
        kept = drop_near_constant(stratified, self.constancy_threshold)
        self.rules_ = {c.name: stratifier.rules_[c.name] for c in kept.attributes}
        self.schema_ = Schema.from_table(kept)
        return self

    def transform(self, table: ClinicalTable) -> ClinicalTable:
        cols = []
        for name in self.schema_.names:
            try:
                col = table.column(name)
            except KeyError:
                raise InputError(f"table lacks attribute {name!r}") from None
            rule = self.rules_[name]
            values = tuple(rule.apply(v) for v in col.values)
            cols.append(AttributeColumn(name, "categorical", values, rule.levels))
        return table.replace_attributes(cols)

    def encode(self, table: ClinicalTable) -> np.ndarray:
        return encode_table(self.transform(table), self.schema_)

    def to_dict(self) -> dict:
        return {"max_levels": self.max_levels,
                "constancy_threshold": self.constancy_threshold,
                "schema": self.schema_.to_dict(),
                "rules": {k: r.to_dict() for k, r in self.rules_.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalPreprocessor":
        obj = cls(d["max_levels"], d["constancy_threshold"])
        obj.schema_ = Schema.from_dict(d["schema"])
        obj.rules_ = {k: _ColumnRule.from_dict(r) for k, r in d["rules"].items()}
        return obj


def encode_table(table: ClinicalTable, schema: Schema | None = None) -> np.ndarray:
    schema = schema or Schema.from_table(table)
    X = np.full((table.n_rows, schema.n_attributes), MISSING, dtype=np.int64)
    for j, (name, levels) in enumerate(zip(schema.names, schema.levels)):
        index = {lv: i for i, lv in enumerate(levels)}
        col = table.column(name)
        for i, v in enumerate(col.values):
            if v is not None and v in index:
                X[i, j] = index[v]
    return X


# --------------------------------------------------------------------------
# labeling

def survival_labels(table: ClinicalTable, cfg: LabelingConfig) -> np.ndarray:
    years = np.asarray(table.survival_days, dtype=float) / cfg.days_per_year
    dead = np.asarray([v == "dead" for v in table.vital_status], dtype=bool)
    labels = np.full(table.n_rows, UNLABELED, dtype=np.int64)
    labels[years >= cfg.T] = POSITIVE
    labels[dead & (years < cfg.T)] = NEGATIVE
    return labels


def assign_labels(table: ClinicalTable, cfg: LabelingConfig) -> SurvivalDataset:
    """Dead before ``T`` is negative, alive or dead at or after ``T`` is
    positive, alive but followed for less than ``T`` is unlabeled."""
    schema = Schema.from_table(table)
    return SurvivalDataset(encode_table(table, schema), survival_labels(table, cfg),
                           schema, table.row_ids, cfg.T)


def suggest_balanced_threshold(table: ClinicalTable, grid: Sequence[float],
                               days_per_year: float = DAYS_PER_YEAR) -> float:
    if len(grid) == 0:
        raise InputError("threshold grid is empty")
    best = None
    for T in grid:
        labels = survival_labels(table, LabelingConfig(T, days_per_year))
        n_pos = int(np.sum(labels == POSITIVE))
        n_neg = int(np.sum(labels == NEGATIVE))
        if n_pos + n_neg == 0:
            continue
        key = (abs(n_pos - n_neg), T)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoLabeledSamples("no threshold in the grid yields a labeled sample")
    return best[1]


# --------------------------------------------------------------------------
# summary statistics

def round_half_away(x: Fraction | float) -> int:
    x = Fraction(x)
    r = math.floor(abs(x) + Fraction(1, 2))
    return r if x >= 0 else -r


@dataclass(frozen=True)
class DatasetSummary:
    n_pos: int
    n_neg: int
    n_unlabeled: int
    n_factors_before: int
    n_factors_after: int
    missing_before: Fraction
    missing_after: Fraction

    @property
    def unlabeled_fraction(self) -> Fraction:
        total = self.n_pos + self.n_neg + self.n_unlabeled
        return Fraction(self.n_unlabeled, total) if total else Fraction(0)

    @property
    def pct_unlabeled(self) -> int:
        return round_half_away(100 * self.unlabeled_fraction)

    def to_dict(self) -> dict:
        return {
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_unlabeled": self.n_unlabeled,
            "pct_unlabeled": self.pct_unlabeled,
            "n_factors_before": self.n_factors_before,
            "n_factors_after": self.n_factors_after,
            "pct_missing_before": round(float(100 * self.missing_before), 2),
            "pct_missing_after": round(float(100 * self.missing_after), 2),
        }


def _missing_ratio(n_missing: int, cells: int) -> Fraction:
    return Fraction(n_missing, cells) if cells else Fraction(0)


def summarize_dataset(ds: SurvivalDataset, before: ClinicalTable | None = None) -> DatasetSummary:
    n_before = len(before.attributes) if before is not None else ds.schema.n_attributes
    if before is not None:
        miss_before = _missing_ratio(sum(c.n_missing for c in before.attributes),
                                     before.n_rows * len(before.attributes))
    else:
        miss_before = _missing_ratio(int(np.sum(ds.X == MISSING)), ds.X.size)
    return DatasetSummary(
        n_pos=len(ds.labeled_pos),
        n_neg=len(ds.labeled_neg),
        n_unlabeled=len(ds.unlabeled),
        n_factors_before=n_before,
        n_factors_after=ds.schema.n_attributes,
        missing_before=miss_before,
        missing_after=_missing_ratio(int(np.sum(ds.X == MISSING)), ds.X.size),
    )


def summary_from_counts(n_pos: int, n_neg: int, n_unlabeled: int) -> DatasetSummary:
    """Summary of a dataset known only by its pool sizes."""
    labels = np.array([POSITIVE] * n_pos + [NEGATIVE] * n_neg + [UNLABELED] * n_unlabeled)
    ds = SurvivalDataset(np.zeros((len(labels), 0), dtype=np.int64), labels, Schema((), ()))
    return summarize_dataset(ds)


def preprocess(table: ClinicalTable, T: float, max_levels: int = 4,
               constancy_threshold: float = 0.99):
    """Run the full protocol; returns ``(dataset, fitted_preprocessor)``."""
    prep = ClinicalPreprocessor(max_levels, constancy_threshold).fit(table)
    processed = prep.transform(table)
    return assign_labels(processed, LabelingConfig(T)), prep
