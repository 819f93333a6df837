"""Metrics, stratified cross-validation and survival-threshold sweeps."""
from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .boosting import BoostConfig
from .data import (
    ClinicalPreprocessor,
    ClinicalTable,
    LabelingConfig,
    SurvivalDataset,
    assign_labels,
)
from .exceptions import EmptyMatrix, FoldTooSmall, LengthMismatch, SemisurvError
from .self_training import SelfTrainConfig, normalize_mode, train_model
from .tree import TreeConfig

METRICS = ("acc", "snsp2", "mcc")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    acc: float
    snsp2: float
    mcc: float


def confusion_matrix(predictions, truth) -> ConfusionMatrix:
    p = np.asarray(predictions)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatch(f"{p.shape} predictions vs {t.shape} labels")
    if len(p) == 0:
        raise EmptyMatrix("nothing to compare")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t != 1))),
        tn=int(np.sum((p != 1) & (t != 1))),
        fn=int(np.sum((p != 1) & (t == 1))),
    )


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, mean of sensitivity and specificity, and MCC.

    A zero denominator makes the affected term (sensitivity, specificity
    or the whole MCC) zero.
    """
    if cm.total < 1:
        raise EmptyMatrix("confusion matrix is empty")
    acc = (cm.tp + cm.tn) / cm.total
    sn = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    sp = cm.tn / (cm.tn + cm.fp) if cm.tn + cm.fp else 0.0
    denom = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(denom) if denom else 0.0
    return Metrics(acc, (sn + sp) / 2, mcc)


@dataclass
class EvaluationReport:
    mode: str
    k: int
    seed: int
    T: float | None
    folds: list = field(default_factory=list)
    fold_of: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> dict:
        return aggregate_folds(self.folds)

    def mean(self, metric: str) -> float:
        return self.aggregate[metric]["mean"]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": self.k, "seed": self.seed, "T": self.T,
                "config": self.config, "folds": self.folds,
                "aggregate": self.aggregate, "fold_assignment": self.fold_of}

    def csv_rows(self) -> list:
        rows = []
        for f in self.folds:
            rows.append({"mode": self.mode, "fold": f["fold"],
                         **{m: f[m] for m in METRICS}})
        for stat in ("mean", "std"):
            rows.append({"mode": self.mode, "fold": stat,
                         **{m: self.aggregate[m][stat] for m in METRICS}})
        return rows


def aggregate_folds(folds: list) -> dict:
    out = {}
    for m in METRICS:
        vals = np.array([f[m] for f in folds], dtype=float)
        out[m] = {"mean": float(vals.mean()) if len(vals) else float("nan"),
                  "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out


def _subset(ds: SurvivalDataset, idx: np.ndarray) -> SurvivalDataset:
    ids = tuple(ds.row_ids[i] for i in idx) if ds.row_ids else ()
    return SurvivalDataset(ds.X[idx], ds.labels[idx], ds.schema, ids, ds.T)


def cross_validate(dataset: SurvivalDataset, mode: str = "supervised", k: int = 5,
                   boost_cfg: BoostConfig = BoostConfig(), tree_cfg: TreeConfig = TreeConfig(),
                   st_cfg: SelfTrainConfig = SelfTrainConfig(), seed: int = 0) -> EvaluationReport:
    """Stratified k-fold over the labeled pool.

    Every training fold also sees the whole unlabeled pool; test folds hold
    labeled samples only.  Fold ``i`` trains with seed ``seed + i``.
    """
    mode = normalize_mode(mode)
    lab = dataset.labeled
    unl = dataset.unlabeled
    y = dataset.labels[lab]
    for cls in (1, -1):
        if np.sum(y == cls) < k:
            raise FoldTooSmall(f"class {cls:+d} has fewer than {k} labeled samples")
    folds = StratifiedKFold(k, shuffle=True, random_state=seed)
    report = EvaluationReport(mode, k, seed, dataset.T,
                              config={"boost": asdict(boost_cfg), "tree": asdict(tree_cfg),
                                      "self_train": asdict(st_cfg)})
    for i, (train, test) in enumerate(folds.split(np.zeros(len(lab)), y)):
        train_ds = _subset(dataset, np.concatenate([lab[train], unl]))
        model, trace = train_model(train_ds, mode, boost_cfg, tree_cfg, st_cfg, seed + i)
        pred = model.predict(dataset.X[lab[test]])
        cm = confusion_matrix(pred, y[test])
        met = compute_metrics(cm)
        entry = {"fold": i, "n_train_labeled": int(len(train)), "n_unlabeled": int(len(unl)),
                 "n_test": int(len(test)), **asdict(cm), **asdict(met)}
        if trace is not None:
            entry["threshold"] = trace.threshold
            entry["absorbed"] = trace.n_absorbed
        report.folds.append(entry)
        for j in lab[test]:
            key = dataset.row_ids[j] if dataset.row_ids else str(int(j))
            report.fold_of[key] = i
    return report


def derived_seed(seed: int, T: float) -> int:
    return (int(seed) ^ zlib.crc32(repr(float(T)).encode())) & 0x7FFFFFFF


def survival_threshold_sweep(table: ClinicalTable, T_grid, boost_cfg: BoostConfig = BoostConfig(),
                             tree_cfg: TreeConfig = TreeConfig(),
                             st_cfg: SelfTrainConfig = SelfTrainConfig(), seed: int = 0,
                             k: int = 5, preprocessor: ClinicalPreprocessor | None = None) -> list:
    """One comparison row per survival threshold.

    Attribute preprocessing does not depend on ``T``, so it is fitted once;
    the labeled and unlabeled pools are rebuilt for every ``T``.  Thresholds
    that cannot be cross-validated give rows with ``skipped`` set.
    """
    prep = preprocessor or ClinicalPreprocessor().fit(table)
    processed = prep.transform(table)
    rows = []
    for T in T_grid:
        ds = assign_labels(processed, LabelingConfig(float(T)))
        row = {"T": float(T), "seed": derived_seed(seed, T), "n_pos": len(ds.labeled_pos),
               "n_neg": len(ds.labeled_neg), "n_unlabeled": len(ds.unlabeled),
               "skipped": False, "reason": ""}
        try:
            for mode, tag in (("supervised", "sup"), ("semi_supervised", "semi")):
                rep = cross_validate(ds, mode, k, boost_cfg, tree_cfg, st_cfg, row["seed"])
                for m in METRICS:
                    row[f"{tag}_{m}"] = rep.aggregate[m]["mean"]
                    row[f"{tag}_{m}_std"] = rep.aggregate[m]["std"]
        except SemisurvError as exc:
            row["skipped"] = True
            row["reason"] = f"{type(exc).__name__}: {exc}"
            for tag in ("sup", "semi"):
                for m in METRICS:
                    row.pop(f"{tag}_{m}", None)
                    row.pop(f"{tag}_{m}_std", None)
        rows.append(row)
    return rows


SWEEP_COLUMNS = ["T", "mode", "n_pos", "n_neg", "n_unlabeled", "skipped", *METRICS,
                 *(f"{m}_std" for m in METRICS)]


def sweep_csv(rows: list) -> str:
    """Long format: one line per threshold and mode."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        for mode, tag in (("supervised", "sup"), ("semi_supervised", "semi")):
            line = {"T": r["T"], "mode": mode, "n_pos": r["n_pos"], "n_neg": r["n_neg"],
                    "n_unlabeled": r["n_unlabeled"], "skipped": r["skipped"]}
            for m in METRICS:
                line[m] = r.get(f"{tag}_{m}", "")
                line[f"{m}_std"] = r.get(f"{tag}_{m}_std", "")
            writer.writerow(line)
    return buf.getvalue()


def reports_csv(reports: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["mode", "fold", *METRICS], lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        for row in rep.csv_rows():
            writer.writerow(row)
    return buf.getvalue()
