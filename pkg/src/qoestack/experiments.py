"""End-to-end experiment runs driven by a TOML configuration.

One run: split the feature table into a source group (g0) and target group
(g1); per repetition, train the accuracy-table models, the cross-evaluation
models, and every configured (base, local) algorithm pair; transfer each base
through a serialized model document; scan the stacking weight; aggregate all
repetitions into mean / 95% CI half-width pairs; screen features with the KS
test and attribute the with-content model with TreeSHAP. Every number is a
pure function of the configuration, so identical configs reproduce reports
byte for byte.
"""

from __future__ import annotations

import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .analysis import (
    FeatureKs,
    ShapReport,
    ShapSummaryRow,
    ks_feature_screen,
    mae,
    r_squared,
    shap_summary,
    tree_shap,
)
from .dataset import (
    Dataset,
    Projection,
    content_split,
    load_feature_table,
    project_features,
    random_split,
    train_test_split,
)
from .errors import ConfigError, QoeStackError
from .learners import Algorithm, RegressorSpec, fit
from .stacking import ModelDocument, export_model, import_model, weight_scan

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class RoleSpec:
    algorithm: Algorithm
    projection: Projection
    hyperparameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    features_path: Path
    split_mode: str  # "content" | "random"
    ti_threshold: float
    si_threshold: float
    g0_size: int | None
    base: RoleSpec
    local: RoleSpec
    tables_algorithm: Algorithm
    stacking_pairs: tuple[tuple[Algorithm, Algorithm], ...]
    grid_step: float
    repetitions: int
    train_fraction: float
    seed: int
    workers: int
    output_dir: Path

    def hyper_for(self, algorithm: Algorithm) -> dict:
        if algorithm is self.base.algorithm:
            return dict(self.base.hyperparameters)
        if algorithm is self.local.algorithm:
            return dict(self.local.hyperparameters)
        return {}

    def echo(self) -> dict:
        return {
            "dataset": {"features": str(self.features_path)},
            "split": {
                "mode": self.split_mode,
                "ti_threshold": self.ti_threshold,
                "si_threshold": self.si_threshold,
                "g0_size": self.g0_size,
            },
            "base": {
                "algorithm": self.base.algorithm.value,
                "projection": self.base.projection.value,
                "hyperparameters": self.base.hyperparameters,
            },
            "local": {
                "algorithm": self.local.algorithm.value,
                "projection": self.local.projection.value,
                "hyperparameters": self.local.hyperparameters,
            },
            "tables": {"algorithm": self.tables_algorithm.value},
            "stacking": {
                "grid_step": self.grid_step,
                "pairs": [[b.value, l.value] for b, l in self.stacking_pairs],
            },
            "protocol": {
                "repetitions": self.repetitions,
                "train_fraction": self.train_fraction,
                "seed": self.seed,
                "workers": self.workers,
            },
            "output": {"directory": str(self.output_dir)},
        }


def _coerce_scalar(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides to the raw config mapping."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, text = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) < 2:
            raise ConfigError(f"override path {dotted!r} must be dotted (section.key)")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a scalar")
        node[parts[-1]] = _coerce_scalar(text.strip())
    return raw


def _role_from_raw(raw: dict, name: str, default_projection: str) -> RoleSpec:
    section = raw.get(name, {})
    algorithm = section.get("algorithm", "gbt")
    try:
        algorithm = Algorithm(algorithm)
    except ValueError:
        raise ConfigError(f"[{name}] unknown algorithm {algorithm!r}") from None
    projection = section.get("projection", default_projection)
    try:
        projection = Projection(projection)
    except ValueError:
        raise ConfigError(f"[{name}] projection must be 'generic' or 'all', got {projection!r}") from None
    hyper = section.get("hyperparameters", {})
    if not isinstance(hyper, dict):
        raise ConfigError(f"[{name}.hyperparameters] must be a table")
    try:
        RegressorSpec(algorithm, dict(hyper))
    except QoeStackError as exc:
        raise ConfigError(f"[{name}.hyperparameters] {exc}") from None
    return RoleSpec(algorithm=algorithm, projection=projection, hyperparameters=dict(hyper))


def config_from_raw(raw: dict, base_dir: Path) -> ExperimentConfig:
    try:
        features = raw["dataset"]["features"]
    except KeyError:
        raise ConfigError("config needs [dataset] features = <feature table csv>") from None
    features_path = (base_dir / features).resolve() if not Path(features).is_absolute() else Path(features)
    if not features_path.exists():
        raise ConfigError(f"feature table does not exist: {features_path}")

    split = raw.get("split", {})
    mode = split.get("mode", "content")
    if mode not in ("content", "random"):
        raise ConfigError(f"[split] mode must be 'content' or 'random', got {mode!r}")
    g0_size = split.get("g0_size")
    if mode == "random" and not isinstance(g0_size, int):
        raise ConfigError("[split] random mode needs integer g0_size")

    base = _role_from_raw(raw, "base", "generic")
    local = _role_from_raw(raw, "local", "all")
    if base.projection is not Projection.GENERIC_ONLY:
        raise ConfigError("[base] projection must be 'generic' (the transferable model)")

    tables_raw = raw.get("tables", {}).get("algorithm", base.algorithm.value)
    try:
        tables_algorithm = Algorithm(tables_raw)
    except ValueError:
        raise ConfigError(f"[tables] unknown algorithm {tables_raw!r}") from None

    stacking = raw.get("stacking", {})
    pairs_raw = stacking.get("pairs", [[base.algorithm.value, local.algorithm.value]])
    pairs = []
    for pair in pairs_raw:
        if len(pair) != 2:
            raise ConfigError(f"[stacking] pairs entries must be [base, local], got {pair!r}")
        try:
            pairs.append((Algorithm(pair[0]), Algorithm(pair[1])))
        except ValueError:
            raise ConfigError(f"[stacking] unknown algorithm in pair {pair!r}") from None
    grid_step = float(stacking.get("grid_step", 0.1))
    if not 0.0 < grid_step <= 0.5:
        raise ConfigError(f"[stacking] grid_step must be in (0, 0.5], got {grid_step}")

    protocol = raw.get("protocol", {})
    if "seed" not in protocol:
        raise ConfigError("[protocol] seed is mandatory")
    repetitions = int(protocol.get("repetitions", 100))
    if repetitions < 1:
        raise ConfigError(f"[protocol] repetitions must be >= 1, got {repetitions}")
    train_fraction = float(protocol.get("train_fraction", 0.7))
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"[protocol] train_fraction must be in (0, 1), got {train_fraction}")
    workers = int(protocol.get("workers", 1))
    if workers < 1:
        raise ConfigError(f"[protocol] workers must be >= 1, got {workers}")

    out = raw.get("output", {}).get("directory", "run_report")
    out_dir = (base_dir / out) if not Path(out).is_absolute() else Path(out)

    return ExperimentConfig(
        features_path=features_path,
        split_mode=mode,
        ti_threshold=float(split.get("ti_threshold", 85.0)),
        si_threshold=float(split.get("si_threshold", 85.0)),
        g0_size=g0_size,
        base=base,
        local=local,
        tables_algorithm=tables_algorithm,
        stacking_pairs=tuple(pairs),
        grid_step=grid_step,
        repetitions=repetitions,
        train_fraction=train_fraction,
        seed=int(protocol["seed"]),
        workers=workers,
        output_dir=out_dir,
    )


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    raw = apply_overrides(raw, overrides or [])
    return config_from_raw(raw, path.parent)


@contextmanager
def _stage(name: str):
    try:
        yield
    except QoeStackError as exc:
        raise type(exc)(f"[stage {name}] {exc}") from exc


def _split_groups(cfg: ExperimentConfig, data: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    if cfg.split_mode == "content":
        return content_split(data, cfg.ti_threshold, cfg.si_threshold)
    return random_split(data, cfg.g0_size, seed)


def _fit_role(cfg, algorithm: Algorithm, train: Dataset, seed: int):
    spec = RegressorSpec(algorithm, cfg.hyper_for(algorithm), seed=seed)
    return fit(spec, train)


def _eval(model, test: Dataset) -> tuple[float, float]:
    pred = model.predict_matrix(test.X)
    return r_squared(test.y, pred), mae(test.y, pred)


def run_repetition(cfg: ExperimentConfig, seed: int) -> dict:
    """One seeded repetition; returns flat scalars plus per-pair scan curves."""
    data = load_feature_table(cfg.features_path).with_provenance("overall")
    scalars: dict[str, float] = {}

    # Full-table accuracy with and without the specific features.
    train, test = train_test_split(data, cfg.train_fraction, seed)
    model_with = _fit_role(cfg, cfg.tables_algorithm, train, seed)
    scalars["overall/with/r2"], scalars["overall/with/mae"] = _eval(model_with, test)
    train_gf = project_features(train, Projection.GENERIC_ONLY)
    test_gf = project_features(test, Projection.GENERIC_ONLY)
    model_without = _fit_role(cfg, cfg.tables_algorithm, train_gf, seed)
    scalars["overall/without/r2"], scalars["overall/without/mae"] = _eval(model_without, test_gf)

    # Source/target groups and their train/test splits.
    g0, g1 = _split_groups(cfg, data, seed)
    g0 = g0.with_provenance("g0")
    g1 = g1.with_provenance("g1")
    g0_train, g0_test = train_test_split(g0, cfg.train_fraction, seed)
    g1_train, g1_test = train_test_split(g1, cfg.train_fraction, seed)

    m0_gfsf = _fit_role(cfg, cfg.tables_algorithm, g0_train, seed)
    m0_gf = _fit_role(cfg, cfg.tables_algorithm, project_features(g0_train, Projection.GENERIC_ONLY), seed)
    m1_gfsf = _fit_role(cfg, cfg.tables_algorithm, g1_train, seed)
    m1_gf = _fit_role(cfg, cfg.tables_algorithm, project_features(g1_train, Projection.GENERIC_ONLY), seed)

    g0_test_gf = project_features(g0_test, Projection.GENERIC_ONLY)
    g1_test_gf = project_features(g1_test, Projection.GENERIC_ONLY)

    scalars["cross/m0_gf/g0/r2"], scalars["cross/m0_gf/g0/mae"] = _eval(m0_gf, g0_test_gf)
    scalars["cross/m0_gf/g1/r2"], scalars["cross/m0_gf/g1/mae"] = _eval(m0_gf, g1_test_gf)
    scalars["cross/m0_gf/delta_r2"] = scalars["cross/m0_gf/g0/r2"] - scalars["cross/m0_gf/g1/r2"]
    scalars["cross/m0_gfsf/g0/r2"], scalars["cross/m0_gfsf/g0/mae"] = _eval(m0_gfsf, g0_test)
    scalars["cross/m0_gfsf/g1/r2"], scalars["cross/m0_gfsf/g1/mae"] = _eval(m0_gfsf, g1_test)
    scalars["cross/m0_gfsf/delta_r2"] = (
        scalars["cross/m0_gfsf/g0/r2"] - scalars["cross/m0_gfsf/g1/r2"]
    )
    scalars["cross/m1_gfsf/g1/r2"], scalars["cross/m1_gfsf/g1/mae"] = _eval(m1_gfsf, g1_test)
    scalars["cross/m1_gf/g1/r2"], scalars["cross/m1_gf/g1/mae"] = _eval(m1_gf, g1_test_gf)

    # Pooled union of own-test predictions, the split-wide accuracy row.
    pooled_pred = np.concatenate([m0_gfsf.predict_matrix(g0_test.X), m1_gfsf.predict_matrix(g1_test.X)])
    pooled_y = np.concatenate([g0_test.y, g1_test.y])
    scalars["split/pooled/r2"] = r_squared(pooled_y, pooled_pred)
    scalars["split/pooled/mae"] = mae(pooled_y, pooled_pred)

    # Transfer + stacking for every configured algorithm pair.
    curves: dict[str, list[tuple[float, float, float]]] = {}
    base_cache = {cfg.tables_algorithm: m0_gf}
    local_cache = {cfg.tables_algorithm: m1_gfsf}
    for base_alg, local_alg in cfg.stacking_pairs:
        if base_alg not in base_cache:
            base_cache[base_alg] = _fit_role(
                cfg, base_alg, project_features(g0_train, Projection.GENERIC_ONLY), seed
            )
        if local_alg not in local_cache:
            local_cache[local_alg] = _fit_role(cfg, local_alg, g1_train, seed)
        document = export_model(base_cache[base_alg], as_base=True)
        transferred = import_model(ModelDocument.from_bytes(document.to_bytes()), g1.schema)
        scan = weight_scan(transferred, local_cache[local_alg], g1_test, cfg.grid_step)
        curves[f"{base_alg.value}+{local_alg.value}"] = [
            (p.w0, p.r2, p.mae) for p in scan.points
        ]
    return {"scalars": scalars, "curves": curves}


def _rep_worker(args) -> dict:
    cfg, seed = args
    return run_repetition(cfg, seed)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    ci_half_width: float | None
    n: int


def _aggregate(samples: list[float]) -> Aggregate:
    arr = np.asarray(samples, dtype=np.float64)
    n = arr.shape[0]
    half = float(1.96 * arr.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return Aggregate(mean=float(arr.mean()), ci_half_width=half, n=n)


@dataclass(frozen=True)
class CurveAggregate:
    w0: float
    r2: Aggregate
    mae: Aggregate


@dataclass(frozen=True)
class RunReport:
    config: ExperimentConfig
    aggregates: dict
    curves: dict
    pair_best: dict
    ks: list[FeatureKs]
    shap_ranking: list[ShapSummaryRow] | None
    shap: ShapReport | None
    seeds: dict


def run_experiment(cfg: ExperimentConfig, progress=None) -> RunReport:
    with _stage("load"):
        data = load_feature_table(cfg.features_path).with_provenance("overall")

    rep_seeds = [cfg.seed + i for i in range(cfg.repetitions)]
    with _stage("protocol"):
        jobs = [(cfg, s) for s in rep_seeds]
        if cfg.workers > 1 and len(jobs) > 1:
            with get_context("spawn").Pool(processes=cfg.workers) as pool:
                reps = pool.map(_rep_worker, jobs)
        else:
            reps = []
            for job in jobs:
                reps.append(_rep_worker(job))
                if progress is not None:
                    progress(len(reps), len(jobs))

    scalar_samples: dict[str, list[float]] = {}
    for rep in reps:
        for key, value in rep["scalars"].items():
            scalar_samples.setdefault(key, []).append(value)
    aggregates = {key: _aggregate(vals) for key, vals in sorted(scalar_samples.items())}

    curves: dict[str, list[CurveAggregate]] = {}
    pair_best: dict[str, dict] = {}
    for pair_key in reps[0]["curves"]:
        grid = [pt[0] for pt in reps[0]["curves"][pair_key]]
        per_point = []
        for gi, w0 in enumerate(grid):
            r2s = [rep["curves"][pair_key][gi][1] for rep in reps]
            maes = [rep["curves"][pair_key][gi][2] for rep in reps]
            per_point.append(CurveAggregate(w0=w0, r2=_aggregate(r2s), mae=_aggregate(maes)))
        curves[pair_key] = per_point
        best = per_point[0]
        for point in per_point[1:]:
            if point.r2.mean > best.r2.mean:
                best = point
        pair_best[pair_key] = {
            "w0": best.w0,
            "r2": best.r2,
            "mae": best.mae,
            "local_only_r2": per_point[0].r2,
            "base_only_r2": per_point[-1].r2,
        }

    with _stage("ks-screen"):
        g0, g1 = _split_groups(cfg, data, cfg.seed)
        screen = ks_feature_screen(g0, g1, alpha=0.01)

    shap_rows = None
    shap_report = None
    if cfg.tables_algorithm is Algorithm.GBT:
        with _stage("shap"):
            full_model = _fit_role(cfg, Algorithm.GBT, data, cfg.seed)
            shap_report = tree_shap(full_model, data)
            shap_rows = shap_summary(shap_report)

    seeds = {
        "protocol_base_seed": cfg.seed,
        "repetition_seeds": rep_seeds,
        "ks_split_seed": cfg.seed,
        "shap_fit_seed": cfg.seed if shap_rows is not None else None,
    }
    return RunReport(
        config=cfg,
        aggregates=aggregates,
        curves=curves,
        pair_best=pair_best,
        ks=screen,
        shap_ranking=shap_rows,
        shap=shap_report,
        seeds=seeds,
    )


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _csv_text(header: list[str], rows: list[list]) -> str:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(cell) for cell in row])
    return buf.getvalue()


def write_report(report: RunReport, out_dir: Path | None = None) -> list[Path]:
    """Write every report artifact; cleans up whatever was written on failure."""
    out = Path(out_dir) if out_dir is not None else report.config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, text: str) -> None:
        path = out / name
        _write_atomic(path, text)
        written.append(path)

    agg = report.aggregates
    try:
        emit(
            "config_echo.json",
            json.dumps(report.config.echo(), indent=2, sort_keys=True) + "\n",
        )

        rows = []
        for variant in ("with", "without"):
            for metric in ("r2", "mae"):
                a = agg[f"overall/{variant}/{metric}"]
                rows.append([metric, variant, a.mean, a.ci_half_width, a.n])
        emit("overall_metrics.csv", _csv_text(["metric", "content_features", "mean", "ci_half_width", "n"], rows))

        rows = []
        for scope, key in (
            ("overall", "split/pooled/r2"),
            ("g0", "cross/m0_gfsf/g0/r2"),
            ("g1", "cross/m1_gfsf/g1/r2"),
        ):
            a = agg[key]
            rows.append([report.config.split_mode, scope, a.mean, a.ci_half_width, a.n])
        emit("split_metrics.csv", _csv_text(["split_mode", "scope", "r2_mean", "r2_ci_half_width", "n"], rows))

        rows = []
        for model_key, train_group, features in (
            ("m0_gf", "g0", "generic"),
            ("m0_gfsf", "g0", "all"),
            ("m1_gf", "g1", "generic"),
            ("m1_gfsf", "g1", "all"),
        ):
            for test_group in ("g0", "g1"):
                key = f"cross/{model_key}/{test_group}/r2"
                if key not in agg:
                    continue
                a = agg[key]
                m = agg[f"cross/{model_key}/{test_group}/mae"]
                delta_key = f"cross/{model_key}/delta_r2"
                delta = agg[delta_key].mean if (delta_key in agg and test_group == "g1") else None
                rows.append(
                    [train_group, features, test_group, a.mean, a.ci_half_width, m.mean, m.ci_half_width, delta, a.n]
                )
        emit(
            "cross_metrics.csv",
            _csv_text(
                [
                    "train_group",
                    "features",
                    "test_group",
                    "r2_mean",
                    "r2_ci_half_width",
                    "mae_mean",
                    "mae_ci_half_width",
                    "r2_drop_from_own",
                    "n",
                ],
                rows,
            ),
        )

        rows = []
        for pair_key, best in report.pair_best.items():
            base_alg, local_alg = pair_key.split("+")
            rows.append(
                [
                    base_alg,
                    local_alg,
                    best["w0"],
                    best["r2"].mean,
                    best["r2"].ci_half_width,
                    best["mae"].mean,
                    best["local_only_r2"].mean,
                    best["base_only_r2"].mean,
                    best["r2"].n,
                ]
            )
        emit(
            "stacking_metrics.csv",
            _csv_text(
                [
                    "base_algorithm",
                    "local_algorithm",
                    "best_w0",
                    "r2_at_best_mean",
                    "r2_ci_half_width",
                    "mae_at_best_mean",
                    "local_only_r2_mean",
                    "base_only_r2_mean",
                    "n",
                ],
                rows,
            ),
        )

        rows = []
        for pair_key, points in report.curves.items():
            for point in points:
                rows.append(
                    [
                        pair_key,
                        point.w0,
                        point.r2.mean,
                        point.r2.ci_half_width,
                        point.mae.mean,
                        point.mae.ci_half_width,
                    ]
                )
        emit(
            "weight_scan.csv",
            _csv_text(
                ["pair", "w0", "r2_mean", "r2_ci_half_width", "mae_mean", "mae_ci_half_width"],
                rows,
            ),
        )

        rows = [
            [fk.feature, fk.kind.value, fk.result.statistic, fk.result.p_value, fk.specific_candidate]
            for fk in report.ks
        ]
        emit("ks_screen.csv", _csv_text(["feature", "kind", "statistic", "p_value", "specific_candidate"], rows))

        if report.shap_ranking is not None:
            rows = [
                [rank + 1, row.feature, row.mean_abs_phi, row.dominant_sign]
                for rank, row in enumerate(report.shap_ranking)
            ]
            emit("shap_summary.csv", _csv_text(["rank", "feature", "mean_abs_phi", "dominant_sign"], rows))

            rows = []
            shap = report.shap
            for i in range(shap.n_rows):
                for j, name in enumerate(shap.schema.names):
                    rows.append([i, name, shap.feature_values[i, j], shap.phi[i, j]])
            emit("shap_values.csv", _csv_text(["row_id", "feature", "feature_value", "phi"], rows))

        emit("seeds.json", json.dumps(report.seeds, indent=2, sort_keys=True) + "\n")

        summary = {
            "aggregates": {
                key: {"mean": a.mean, "ci_half_width": a.ci_half_width, "n": a.n}
                for key, a in report.aggregates.items()
            },
            "pair_best": {
                key: {"w0": best["w0"], "r2_mean": best["r2"].mean}
                for key, best in report.pair_best.items()
            },
            "ks_specific_candidates": [fk.feature for fk in report.ks if fk.specific_candidate],
            "shap_top_feature": report.shap_ranking[0].feature if report.shap_ranking else None,
        }
        emit("run.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written
