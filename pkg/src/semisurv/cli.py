"""Command-line entry point: ``semisurv <subcommand> ...``.

Exit status is 0 on success, 1 when training or evaluation fails, and 2
for bad input files or arguments.  Every output file is written to a
temporary name first and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .boosting import BoostConfig, Ensemble
from .data import (
    ClinicalPreprocessor,
    LabelingConfig,
    assign_labels,
    parse_clinical_table,
    summarize_dataset,
    suggest_balanced_threshold,
    survival_labels,
    table_to_csv,
)
from .evaluation import cross_validate, reports_csv, survival_threshold_sweep, sweep_csv
from .exceptions import InputError, ModelError
from .self_training import DEFAULT_GRID, SelfTrainConfig, normalize_mode, train_model
from .synthetic import SyntheticSpec, generate_synthetic
from .tree import TreeConfig

log = logging.getLogger("semisurv")

MODEL_FORMAT = "semisurv-model/1"

# field name -> (flag, parser, default, help)
OPTIONS = {
    "seed": ("--seed", int, 0, "random seed"),
    "T": ("-T", float, None, "survival threshold in years"),
    "mode": ("--mode", str, "supervised", "supervised or semi-supervised"),
    "algorithm": ("--algorithm", str, "robustboost", "robustboost or adaboost"),
    "rounds_cap": ("--rounds", int, 100, "maximum boosting rounds"),
    "target_error": ("--target-error", float, 0.1, "robust boosting target error"),
    "goal_margin": ("--goal-margin", float, 0.0, "robust boosting goal margin"),
    "final_sigma": ("--final-sigma", float, 0.1, "robust boosting final sigma"),
    "tolerance": ("--tolerance", float, 1e-6, "step solver tolerance"),
    "max_depth": ("--max-depth", int, 3, "tree depth"),
    "min_leaf_weight": ("--min-leaf-weight", float, 1.0, "minimum leaf weight"),
    "max_surrogates": ("--max-surrogates", int, 5, "surrogate splits kept per node"),
    "threshold_grid": ("--threshold-grid", None, list(DEFAULT_GRID),
                       "confidence thresholds, e.g. 0.5,0.6,0.7 or 0.5:0.95:0.05"),
    "cv_folds": ("--cv-folds", int, 10, "folds used to select the confidence threshold"),
    "iteration_cap": ("--iteration-cap", int, None, "maximum self-training rounds"),
    "max_levels": ("--max-levels", int, 4, "categories per attribute after stratification"),
    "constancy_threshold": ("--constancy", float, 0.99, "drop attributes more constant than this"),
    "k": ("-k", int, 5, "cross-validation folds"),
}

GROUPS = {
    "prep": ["max_levels", "constancy_threshold"],
    "model": ["algorithm", "rounds_cap", "target_error", "goal_margin", "final_sigma",
              "tolerance", "max_depth", "min_leaf_weight", "max_surrogates",
              "threshold_grid", "cv_folds", "iteration_cap"],
}


def parse_grid(text: str) -> list:
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise InputError(f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(max(n, 0))]
    return [float(p) for p in text.split(",") if p.strip()]


def _add_options(p, names):
    for name in names:
        flag, typ, _, help_ = OPTIONS[name]
        p.add_argument(flag, dest=name, type=typ or str, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semisurv",
        description="Semi-supervised survival classification from incomplete clinical tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_, inputs=("input",), options=(), output=True):
        p = sub.add_parser(name, help=help_)
        for arg in inputs:
            p.add_argument(arg)
        p.add_argument("--config", help="JSON file with option values")
        _add_options(p, ["seed", *options])
        if output:
            p.add_argument("-o", "--output", help="output path (default: stdout)")
        return p

    command("preprocess", "summarize the labeled/unlabeled split",
            options=["T", *GROUPS["prep"]])
    p = command("suggest-threshold", "survival threshold that balances the classes")
    p.add_argument("--grid", default="0.5:10:0.5", help="candidate thresholds in years")
    p = command("train", "train a model", options=["T", "mode", *GROUPS["prep"], *GROUPS["model"]])
    p.add_argument("--trace", help="also write the self-training trace here")
    command("predict", "score a table with a trained model", inputs=("model", "input"))
    p = command("evaluate", "cross-validate", options=["T", "mode", "k", *GROUPS["prep"],
                                                      *GROUPS["model"]])
    p.add_argument("--csv", help="also write per-fold rows as CSV")
    p = command("sweep", "compare both modes over survival thresholds",
                options=["k", *GROUPS["prep"], *GROUPS["model"]])
    p.add_argument("--grid", required=True, help="survival thresholds in years")
    p.add_argument("--csv", help="also write one row per threshold and mode as CSV")
    p = command("importance", "ranked feature importances of a model", inputs=("model",))
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p = command("synth", "generate a synthetic censored cohort", inputs=())
    p.add_argument("--rows", type=int, default=500)
    p.add_argument("--informative", type=int, default=6)
    p.add_argument("--noise-attrs", type=int, default=4)
    p.add_argument("--separation", default="medium")
    p.add_argument("--censoring", type=float, default=0.5)
    p.add_argument("--missing", type=float, default=0.0)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--correlation", type=float, default=0.5)
    p.add_argument("--base-years", type=float, default=2.0)
    p.add_argument("--truth", help="where to write the generating parameters "
                                   "(default: <output stem>.truth.json)")
    return parser


def resolve(args) -> dict:
    """Effective option values: flags over config file over defaults."""
    config = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise InputError("config file must hold a JSON object")
    out = {}
    for name, (_, _, default, _) in OPTIONS.items():
        if not hasattr(args, name):
            continue
        value = getattr(args, name)
        if value is None:
            value = config.get(name, default)
        if name == "threshold_grid" and isinstance(value, str):
            value = parse_grid(value)
        out[name] = value
    return out


def _configs(opts: dict):
    boost = BoostConfig(opts["algorithm"], opts["rounds_cap"], opts["target_error"],
                        opts["goal_margin"], opts["final_sigma"], opts["tolerance"])
    tree = TreeConfig(opts["max_depth"], opts["min_leaf_weight"], opts["max_surrogates"])
    st = SelfTrainConfig(tuple(opts["threshold_grid"]), opts["cv_folds"],
                         opts["iteration_cap"], opts["seed"])
    return boost, tree, st


def _require_T(opts):
    if opts.get("T") is None:
        raise InputError("a survival threshold (-T) is required")
    return LabelingConfig(float(opts["T"]))


def write_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(path, text: str) -> None:
    if path:
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_table(path):
    try:
        return parse_clinical_table(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _load_model(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise InputError(f"{path} is not a {MODEL_FORMAT} document")
    return doc


def _prep_dataset(table, opts):
    prep = ClinicalPreprocessor(opts["max_levels"], opts["constancy_threshold"]).fit(table)
    ds = assign_labels(prep.transform(table), _require_T(opts))
    return ds, prep


def cmd_preprocess(args, opts):
    table = _load_table(args.input)
    ds, _ = _prep_dataset(table, opts)
    summary = summarize_dataset(ds, table).to_dict()
    summary["config"] = opts
    _emit(args.output, _json(summary))


def cmd_suggest_threshold(args, opts):
    table = _load_table(args.input)
    grid = parse_grid(args.grid)
    T = suggest_balanced_threshold(table, grid)
    labels = survival_labels(table, LabelingConfig(T))
    out = {"T": T, "n_pos": int(np.sum(labels == 1)), "n_neg": int(np.sum(labels == -1)),
           "n_unlabeled": int(np.sum(labels == 0)), "grid": grid}
    _emit(args.output, _json(out))


def cmd_train(args, opts):
    table = _load_table(args.input)
    ds, prep = _prep_dataset(table, opts)
    boost, tree, st = _configs(opts)
    mode = normalize_mode(opts["mode"])
    model, trace = train_model(ds, mode, boost, tree, st, opts["seed"])
    doc = {"format": MODEL_FORMAT, "mode": mode, "T": float(opts["T"]), "config": opts,
           "preprocessor": prep.to_dict(), "ensemble": model.to_dict(),
           "trace": trace.to_dict() if trace else None}
    text = _json(doc)
    if args.trace:
        if trace is None:
            raise InputError("--trace needs --mode semi-supervised")
        write_atomic(args.trace, _json(trace.to_dict()))
    _emit(args.output, text)


def cmd_predict(args, opts):
    doc = _load_model(args.model)
    prep = ClinicalPreprocessor.from_dict(doc["preprocessor"])
    model = Ensemble.from_dict(doc["ensemble"])
    table = _load_table(args.input)
    X = prep.encode(table)
    score = model.score(X)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["patient_id", "score", "label", "confidence"])
    for rid, s in zip(table.row_ids, score):
        writer.writerow([rid, repr(float(s)), 1 if s >= 0 else -1, repr(abs(float(s)))])
    _emit(args.output, buf.getvalue())


def cmd_evaluate(args, opts):
    table = _load_table(args.input)
    ds, _ = _prep_dataset(table, opts)
    boost, tree, st = _configs(opts)
    mode = opts["mode"].replace("-", "_").lower()
    modes = ["supervised", "semi_supervised"] if mode == "compare" else [normalize_mode(mode)]
    reports = [cross_validate(ds, m, opts["k"], boost, tree, st, opts["seed"]) for m in modes]
    doc = {"config": opts, "summary": summarize_dataset(ds, table).to_dict(),
           "reports": {r.mode: r.to_dict() for r in reports}}
    if args.csv:
        write_atomic(args.csv, reports_csv(reports))
    _emit(args.output, _json(doc))


def cmd_sweep(args, opts):
    table = _load_table(args.input)
    boost, tree, st = _configs(opts)
    prep = ClinicalPreprocessor(opts["max_levels"], opts["constancy_threshold"]).fit(table)
    rows = survival_threshold_sweep(table, parse_grid(args.grid), boost, tree, st,
                                    opts["seed"], opts["k"], prep)
    if args.csv:
        write_atomic(args.csv, sweep_csv(rows))
    _emit(args.output, _json({"config": opts, "rows": rows}))


def cmd_importance(args, opts):
    doc = _load_model(args.model)
    imp = doc["ensemble"]["importances"]
    ranked = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
    if args.format == "json":
        text = _json([{"factor": k, "importance": v} for k, v in ranked])
    elif args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["factor", "importance"])
        writer.writerows([[k, repr(v)] for k, v in ranked])
        text = buf.getvalue()
    else:
        width = max([len("factor"), *(len(k) for k in imp)])
        lines = [f"{'factor':<{width}}  importance"]
        lines += [f"{k:<{width}}  {v:.4f}" for k, v in ranked if v > 0]
        text = "\n".join(lines) + "\n"
    _emit(args.output, text)


def cmd_synth(args, opts):
    if not args.output:
        raise InputError("synth needs -o/--output")
    sep = args.separation
    try:
        sep = float(sep)
    except ValueError:
        pass
    spec = SyntheticSpec(args.rows, args.informative, args.noise_attrs, sep, args.censoring,
                         args.missing, args.label_noise, args.correlation, args.base_years,
                         opts["seed"])
    table, sidecar = generate_synthetic(spec)
    truth = args.truth or str(Path(args.output).with_suffix("")) + ".truth.json"
    write_atomic(truth, _json(sidecar))
    write_atomic(args.output, table_to_csv(table))


COMMANDS = {
    "preprocess": cmd_preprocess,
    "suggest-threshold": cmd_suggest_threshold,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "importance": cmd_importance,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve(args)
        COMMANDS[args.command](args, opts)
    except (InputError, ValueError, OSError) as exc:
        print(f"semisurv: error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"semisurv: model error: {exc}", file=sys.stderr)
        return 1
    return 0


def run_cli(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
