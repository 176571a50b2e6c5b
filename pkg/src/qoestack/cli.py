"""Command-line entry points.

Subcommands: ingest, synth, split, train, export, import, stack, scan,
evaluate, shap, ks, run. Exit codes: 0 success, 2 configuration error,
3 data error, 4 training divergence, 5 incompatible model transfer.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ks_feature_screen, mae, r_squared, repeated_protocol, shap_summary, tree_shap
from .dataset import (
    FeatureKind,
    Projection,
    build_feature_table,
    content_split,
    load_feature_table,
    load_sessions,
    project_features,
    random_split,
    save_feature_table,
    save_sessions,
    train_test_split,
)
from .errors import (
    ConfigError,
    IncompatibleModelError,
    ParseError,
    ProtocolError,
    QoeStackError,
    SchemaError,
    TrainingDivergenceError,
    UndefinedMetricError,
    UnsupportedModelError,
    ValidationError,
)
from .experiments import _coerce_scalar, _csv_text, _write_atomic, load_config, run_experiment, write_report
from .learners import Algorithm, RegressorSpec, fit
from .stacking import ModelDocument, StackedModel, export_model, import_model, stack_predict, weight_scan
from .synth import SynthConfig, make_sessions

_EXIT_CONFIG = 2
_EXIT_DATA = 3
_EXIT_DIVERGENCE = 4
_EXIT_TRANSFER = 5


def _parse_hyper(pairs: list[str]) -> dict:
    hyper = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--hyper takes name=value, got {item!r}")
        name, value = item.split("=", 1)
        hyper[name.strip()] = _coerce_scalar(value.strip())
    return hyper


def _load_model_for_table(model_path: str, table) -> object:
    doc = ModelDocument.load(model_path)
    return import_model(doc, table.schema)


def cmd_ingest(args) -> int:
    sessions = load_sessions(args.sessions_csv)
    table = build_feature_table(sessions, provenance=str(args.sessions_csv))
    save_feature_table(table, args.out)
    print(f"ingested {len(sessions)} sessions -> {args.out} ({len(table.schema)} features + mos)")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_sessions=args.sessions,
        low_complexity_sessions=args.g0,
        seed=args.seed,
        segments_min=args.segments_min,
        segments_max=args.segments_max,
        stall_probability=args.stall_probability,
        noise_std=args.noise_std,
    )
    sessions = make_sessions(cfg)
    save_sessions(sessions, args.out)
    print(f"wrote {len(sessions)} synthetic sessions -> {args.out}")
    return 0


def cmd_split(args) -> int:
    table = load_feature_table(args.features_csv)
    if args.mode == "content":
        g0, g1 = content_split(table, args.ti, args.si)
    else:
        if args.g0_size is None or args.seed is None:
            raise ConfigError("random mode needs --g0-size and --seed")
        g0, g1 = random_split(table, args.g0_size, args.seed)
    save_feature_table(g0, args.g0_out)
    save_feature_table(g1, args.g1_out)
    print(f"split {table.n_rows} rows -> g0={g0.n_rows} ({args.g0_out}), g1={g1.n_rows} ({args.g1_out})")
    return 0


def cmd_train(args) -> int:
    table = load_feature_table(args.features_csv).with_provenance(args.group)
    projection = Projection(args.projection)
    table = project_features(table, projection)
    spec = RegressorSpec(Algorithm(args.algorithm), _parse_hyper(args.hyper), seed=args.seed)
    model = fit(spec, table)
    doc = export_model(model, as_base=args.base)
    doc.save(args.out)
    print(f"trained {args.algorithm} on {table.n_rows} rows ({projection.value} features) -> {args.out}")
    return 0


def cmd_export(args) -> int:
    doc = ModelDocument.load(args.model_in)
    if args.base:
        specific = [n for n, k in doc.feature_schema.entries if k is FeatureKind.SPECIFIC]
        if specific:
            raise IncompatibleModelError(
                f"base export refused: document schema carries specific features {specific}"
            )
    doc.save(args.out)
    print(f"exported {doc.algorithm} document ({len(doc.feature_schema)} features) -> {args.out}")
    return 0


def cmd_import(args) -> int:
    table = load_feature_table(args.features_csv)
    doc = ModelDocument.load(args.model)
    model = import_model(doc, table.schema)
    mapping = {
        name: table.schema.index_of(name) for name in doc.feature_schema.names
    }
    print(f"document {args.model}: algorithm={doc.algorithm}, {len(doc.feature_schema)} features")
    print(f"column projection onto local schema: {mapping}")
    if args.out:
        doc.save(args.out)
    pred = model.predict_matrix(table.X[: min(3, table.n_rows)])
    print(f"sample predictions: {[round(float(p), 3) for p in pred]}")
    return 0


def cmd_stack(args) -> int:
    table = load_feature_table(args.features_csv)
    base = _load_model_for_table(args.base_model, table)
    local = _load_model_for_table(args.local_model, table)
    stacked = StackedModel(base=base, local=local, w0=args.w0)
    pred = stack_predict(stacked, table)
    rows = [[i, float(pred[i]), float(table.y[i])] for i in range(table.n_rows)]
    _write_atomic(Path(args.out), _csv_text(["row_id", "prediction", "mos"], rows))
    print(f"stacked predictions (w0={args.w0}) -> {args.out}")
    print(f"R2={r_squared(table.y, pred):.4f} MAE={mae(table.y, pred):.4f}")
    return 0


def cmd_scan(args) -> int:
    table = load_feature_table(args.features_csv)
    base = _load_model_for_table(args.base_model, table)
    local = _load_model_for_table(args.local_model, table)
    scan = weight_scan(base, local, table, args.step)
    rows = [[p.w0, p.r2, p.mae] for p in scan.points]
    _write_atomic(Path(args.out), _csv_text(["w0", "r2", "mae"], rows))
    print(f"weight scan ({len(scan.points)} points) -> {args.out}")
    print(f"best: w0={scan.best.w0} R2={scan.best.r2:.4f} MAE={scan.best.mae:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    table = load_feature_table(args.features_csv)
    table = project_features(table, Projection(args.projection))
    spec = RegressorSpec(Algorithm(args.algorithm), _parse_hyper(args.hyper))

    def experiment(seed: int) -> tuple[float, float]:
        train, test = train_test_split(table, args.train_fraction, seed)
        model = fit(spec.with_seed(seed), train)
        pred = model.predict_matrix(test.X)
        return r_squared(test.y, pred), mae(test.y, pred)

    if args.repetitions == 1:
        r2, err = experiment(args.seed)
        print(f"R2={r2:.4f}(n/a) MAE={err:.4f}(n/a) repetitions=1")
        payload = {"r2": {"mean": r2, "ci_half_width": None}, "mae": {"mean": err, "ci_half_width": None}, "n": 1}
    else:
        r2_report, mae_report = repeated_protocol(experiment, args.repetitions, base_seed=args.seed)
        print(f"{r2_report} {mae_report} repetitions={args.repetitions}")
        payload = {
            "r2": {"mean": r2_report.mean, "ci_half_width": r2_report.ci_half_width},
            "mae": {"mean": mae_report.mean, "ci_half_width": mae_report.ci_half_width},
            "n": args.repetitions,
        }
    if args.out:
        _write_atomic(Path(args.out), json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_shap(args) -> int:
    table = load_feature_table(args.features_csv)
    doc = ModelDocument.load(args.model)
    if list(doc.feature_schema.names) != list(table.schema.names):
        raise SchemaError(
            f"model features {list(doc.feature_schema.names)} do not match table "
            f"{list(table.schema.names)}"
        )
    model = import_model(doc, table.schema)
    report = tree_shap(model, table)
    ranking = shap_summary(report)

    rows = []
    for i in range(report.n_rows):
        for j, name in enumerate(report.schema.names):
            rows.append([i, name, report.feature_values[i, j], report.phi[i, j]])
    _write_atomic(Path(args.out_values), _csv_text(["row_id", "feature", "feature_value", "phi"], rows))
    rows = [[r + 1, row.feature, row.mean_abs_phi, row.dominant_sign] for r, row in enumerate(ranking)]
    _write_atomic(Path(args.out_summary), _csv_text(["rank", "feature", "mean_abs_phi", "dominant_sign"], rows))
    print(f"attributions for {report.n_rows} rows -> {args.out_values}, {args.out_summary}")
    print("top features: " + ", ".join(f"{r.feature}({r.dominant_sign})" for r in ranking[:3]))
    return 0


def cmd_ks(args) -> int:
    g0 = load_feature_table(args.g0_csv)
    g1 = load_feature_table(args.g1_csv)
    screen = ks_feature_screen(g0, g1, alpha=args.alpha)
    rows = [
        [fk.feature, fk.kind.value, fk.result.statistic, fk.result.p_value, fk.specific_candidate]
        for fk in screen
    ]
    _write_atomic(Path(args.out), _csv_text(["feature", "kind", "statistic", "p_value", "specific_candidate"], rows))
    flagged = [fk.feature for fk in screen if fk.specific_candidate]
    print(f"ks screen (alpha={args.alpha}) -> {args.out}")
    print(f"specific candidates: {flagged if flagged else 'none'}")
    return 0


def _extract_overrides(extras: list[str]) -> list[str]:
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token.split("=", 1)[0]:
            raise ConfigError(f"unrecognized argument {token!r} (overrides look like --section.key=value)")
        body = token[2:]
        if "=" in body:
            overrides.append(body)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"override {token!r} needs a value")
            overrides.append(f"{body}={extras[i + 1]}")
            i += 2
    return overrides


def cmd_run(args, extras: list[str]) -> int:
    overrides = list(args.set or []) + _extract_overrides(extras)
    cfg = load_config(args.config, overrides)

    def progress(done: int, total: int) -> None:
        print(f"repetition {done}/{total}", file=sys.stderr)

    started = time.monotonic()
    report = run_experiment(cfg, progress=progress)
    written = write_report(report)
    elapsed = time.monotonic() - started

    print(f"run complete in {elapsed:.1f}s -> {cfg.output_dir}")
    for pair, best in report.pair_best.items():
        print(f"  stack {pair}: best w0={best['w0']} R2={best['r2'].mean:.4f}")
    flagged = [fk.feature for fk in report.ks if fk.specific_candidate]
    print(f"  ks specific candidates: {flagged if flagged else 'none'}")
    if report.shap_ranking:
        print(f"  shap top feature: {report.shap_ranking[0].feature}")
    print(f"  wrote {len(written)} files")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qoestack",
        description="Transferable video-QoE models: feature extraction, three regressors, "
        "stacked transfer, and the statistical evaluation suite.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="session CSV -> feature table CSV")
    p.add_argument("sessions_csv")
    p.add_argument("out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic session CSV")
    p.add_argument("out")
    p.add_argument("--sessions", type=int, default=450)
    p.add_argument("--g0", type=int, default=353, help="sessions in the low-complexity cluster")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--segments-min", type=int, default=6)
    p.add_argument("--segments-max", type=int, default=14)
    p.add_argument("--stall-probability", type=float, default=0.45)
    p.add_argument("--noise-std", type=float, default=2.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split a feature table into g0/g1")
    p.add_argument("features_csv")
    p.add_argument("--mode", choices=["content", "random"], default="content")
    p.add_argument("--ti", type=float, default=85.0)
    p.add_argument("--si", type=float, default=85.0)
    p.add_argument("--g0-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--g0-out", required=True)
    p.add_argument("--g1-out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one model on a feature table")
    p.add_argument("features_csv")
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="gbt")
    p.add_argument("--projection", choices=["generic", "all"], default="all")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--group", default="", help="training-group label stored in the document")
    p.add_argument("--hyper", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--base", action="store_true", help="export as a transferable base document")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="re-serialize a model document (optionally as base)")
    p.add_argument("model_in")
    p.add_argument("out")
    p.add_argument("--base", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="check a document against a local feature table")
    p.add_argument("model")
    p.add_argument("features_csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("stack", help="stacked predictions from base+local documents")
    p.add_argument("base_model")
    p.add_argument("local_model")
    p.add_argument("features_csv")
    p.add_argument("--w0", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("scan", help="stacking weight scan over a grid")
    p.add_argument("base_model")
    p.add_argument("local_model")
    p.add_argument("features_csv")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("evaluate", help="repeated train/test protocol on one table")
    p.add_argument("features_csv")
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="gbt")
    p.add_argument("--projection", choices=["generic", "all"], default="all")
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--hyper", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("shap", help="TreeSHAP attributions for a boosted-tree document")
    p.add_argument("model")
    p.add_argument("features_csv")
    p.add_argument("--out-values", required=True)
    p.add_argument("--out-summary", required=True)
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("ks", help="per-feature two-sample KS screen between two tables")
    p.add_argument("g0_csv")
    p.add_argument("g1_csv")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ks)

    p = sub.add_parser("run", help="full experiment from a TOML config")
    p.add_argument("config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_run, wants_extras=True)

    return parser


def _exit_code_for(exc: QoeStackError) -> int:
    if isinstance(exc, ProtocolError) and exc.__cause__ is not None:
        inner = exc.__cause__
        if isinstance(inner, QoeStackError):
            return _exit_code_for(inner)
    if isinstance(exc, (ConfigError, UnsupportedModelError)):
        return _EXIT_CONFIG
    if isinstance(exc, TrainingDivergenceError):
        return _EXIT_DIVERGENCE
    if isinstance(exc, IncompatibleModelError):
        return _EXIT_TRANSFER
    if isinstance(exc, (SchemaError, ParseError, ValidationError, UndefinedMetricError)):
        return _EXIT_DATA
    return _EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        if getattr(args, "wants_extras", False):
            return args.func(args, extras)
        if extras:
            parser.error(f"unrecognized arguments: {' '.join(extras)}")
        return args.func(args)
    except QoeStackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
