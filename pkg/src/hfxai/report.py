"""Run configuration, the end-to-end pipeline and deterministic report files."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import explain
from .ensembles import KINDS
from .metrics import METRIC_NAMES, ConfusionMatrix, classification_metrics
from .preprocess import PreprocessConfig
from .search import (
    NOM_METHODS,
    NUM_METHODS,
    SELECTION_SCOPES,
    TABLE_CLASSIFIERS,
    CrossValidator,
    best_per_classifier,
    default_grid,
    derive_seed,
    fit_pipeline,
    most_balanced,
    no_selection_grid,
    rank_results,
    summarize_classifiers,
    training_folds,
)
from .tabular import HEART_FAILURE_SCHEMA, HEART_FAILURE_TARGET, Dataset, load_csv, stratified_split

log = logging.getLogger(__name__)

EXPLAINERS = ("gini", "path", "permutation", "pdp", "shap")
FLOAT_DIGITS = 6
_SECTION = "run"


class ConfigError(ValueError):
    pass


def _csv_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    data_path: str
    out_dir: str = "report"
    seed: int = 0
    test_ratio: float = 0.3
    folds: int = 5
    scoring: str = "balanced_accuracy"
    feature_selection: bool = True
    selection_scope: str = "fold"
    drop_features: tuple[str, ...] = ()
    classifiers: tuple[str, ...] = TABLE_CLASSIFIERS
    num_methods: tuple[str, ...] = NUM_METHODS
    nom_methods: tuple[str, ...] = NOM_METHODS
    n_estimators: int = 100
    impute_numerical: str = "mean"
    normalize: str = "zscore"
    explainers: tuple[str, ...] = EXPLAINERS
    background_size: int = 100
    permutation_repeats: int = 10
    pdp_grid_points: int = 20
    pdp2d_grid_points: int = 10
    shap_max_rows: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.test_ratio < 1:
            raise ConfigError(f"test_ratio must lie in (0, 1), got {self.test_ratio}")
        if self.selection_scope not in SELECTION_SCOPES:
            raise ConfigError(f"selection_scope must be one of {SELECTION_SCOPES}, got {self.selection_scope!r}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.scoring not in METRIC_NAMES:
            raise ConfigError(f"scoring must be one of {METRIC_NAMES}, got {self.scoring!r}")
        checks = [("classifiers", self.classifiers, KINDS), ("num_methods", self.num_methods, NUM_METHODS),
                  ("nom_methods", self.nom_methods, NOM_METHODS), ("explainers", self.explainers, EXPLAINERS)]
        for name, got, allowed in checks:
            bad = [g for g in got if g not in allowed]
            if bad:
                raise ConfigError(f"unknown {name} {bad}; expected a subset of {allowed}")
        if not self.classifiers:
            raise ConfigError("no classifiers configured")
        for name in ("n_estimators", "background_size", "permutation_repeats", "shap_max_rows"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pdp_grid_points < 2 or self.pdp2d_grid_points < 2:
            raise ConfigError("PDP grids need at least 2 points")
        try:
            PreprocessConfig(self.impute_numerical, "mode", self.normalize)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.impute_numerical, "mode", self.normalize)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply string values (as read from a config file) on top of this config."""
        types = {f.name: f.type for f in fields(self)}
        parsed: dict[str, Any] = {}
        for key, raw in overrides.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(self, key)
            try:
                if isinstance(current, bool):
                    parsed[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(current, int):
                    parsed[key] = int(raw)
                elif isinstance(current, float):
                    parsed[key] = float(raw)
                elif isinstance(current, tuple):
                    parsed[key] = _csv_list(raw)
                else:
                    parsed[key] = raw.strip()
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return replace(self, **parsed)


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    return dict(parser[_SECTION])


# -- report structure ---------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    sections: dict = field(default_factory=dict)
    # file name -> list of rows (first row is the header)
    tables: dict = field(default_factory=dict)
    # file name -> JSON-able payload
    documents: dict = field(default_factory=dict)
    # written at full precision (serialized models)
    exact_documents: dict = field(default_factory=dict)
    failure: dict | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def to_dict(self) -> dict:
        return {"config": self.config, **self.sections, "failure": self.failure}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        x = round(x, FLOAT_DIGITS)
        return 0.0 if x == 0 else x
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _fmt_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{FLOAT_DIGITS}f}"
    return "" if v is None else str(v)


def table_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_fmt_cell(v) for v in row])
    return buf.getvalue()


def emit_report(report: RunReport, out_dir: str | Path) -> list[dict]:
    """Write report.json, the CSV tables and JSON exports; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = {"report.json": canonical_json(report.to_dict())}
    for name, rows in report.tables.items():
        payloads[name] = table_csv(rows)
    for name, doc in report.documents.items():
        payloads[name] = canonical_json(doc)
    for name, doc in report.exact_documents.items():
        payloads[name] = json.dumps(doc, sort_keys=True) + "\n"
    manifest = []
    for name in sorted(payloads):
        data = payloads[name].encode()
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        manifest.append({"file": name, "bytes": len(data)})
    (out / "manifest.json").write_text(canonical_json({"files": manifest}))
    return manifest


# -- pipeline -----------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> Dataset:
    ds = load_csv(cfg.data_path, HEART_FAILURE_SCHEMA, HEART_FAILURE_TARGET)
    return ds.drop(cfg.drop_features) if cfg.drop_features else ds


def _metrics_row(m) -> list:
    return [m[k] for k in METRIC_NAMES]


def _ranking_table(r: explain.ImportanceRanking) -> list[list]:
    return [["feature", "weight", "std"]] + [list(t) for t in r.ordered()]


def _exemplars(y_true, pred) -> dict[str, int]:
    """First test position for each confusion cell."""
    out = {}
    for name, (t, p) in {"true_negative": (0, 0), "true_positive": (1, 1),
                         "false_positive": (0, 1), "false_negative": (1, 0)}.items():
        hits = np.flatnonzero((y_true == t) & (pred == p))
        if hits.size:
            out[name] = int(hits[0])
    return out


def _explain_model(cfg: RunConfig, pipe, ds: Dataset, split, report: RunReport) -> None:
    model = pipe.model
    X_train = pipe.transform(ds, split.train)
    X_test = pipe.transform(ds, split.test)
    y_test = ds.y[split.test].astype(int)
    background = explain.background_sample(X_train, cfg.background_size, derive_seed(cfg.seed, "background"))
    plan = pipe.plan
    out: dict = {"features": list(model.feature_names)}

    def raw_grid(name, grid):
        j = list(plan.names).index(name)
        return plan.inverse_numerical(j, grid) if plan.kinds[j] == "numerical" else grid

    gini = None
    if "gini" in cfg.explainers:
        gini = explain.gini_importance(model)
        out["gini"] = {"ranking": gini.ordered(), "degenerate": gini.degenerate}
        report.tables["explain/gini_importance.csv"] = _ranking_table(gini)
    if "permutation" in cfg.explainers:
        perm = explain.permutation_importance(model, X_test, y_test, "accuracy", cfg.permutation_repeats,
                                              derive_seed(cfg.seed, "permutation"))
        out["permutation"] = {"metric": "accuracy", "repeats": cfg.permutation_repeats,
                              "ranking": perm.ordered()}
        report.tables["explain/permutation_importance.csv"] = _ranking_table(perm)
    if "path" in cfg.explainers and model.kind != "max_voting":
        pred = model.predict(X_test)
        cases = {}
        for case, pos in _exemplars(y_test, pred).items():
            pc = explain.path_contributions(model, X_test[pos])
            cases[case] = {"test_row": int(split.test[pos]), "target_class": pc.target_class,
                           "probability": pc.probability, "bias": pc.bias,
                           "contributions": [{"feature": f, "value": v} for f, v in pc.as_table()[1:]]}
        out["path_contributions"] = cases
        report.documents["explain/path_contributions.json"] = cases
    if "pdp" in cfg.explainers:
        curves = []
        for name in model.feature_names:
            curve = explain.pdp(model, background, name, cfg.pdp_grid_points)
            fname = f"explain/pdp_{name}.csv"
            raw = raw_grid(name, curve.grid[0])
            report.tables[fname] = [["value", "scaled_value", "mean", "band"]] + [
                [raw[i], curve.grid[0][i], curve.mean_prediction[i], curve.band[i]]
                for i in range(len(curve.grid[0]))]
            curves.append(fname)
        top = [f for f, _, _ in gini.ordered()][:3] if gini is not None else list(model.feature_names[:3])
        for i in range(len(top)):
            for k in range(i + 1, len(top)):
                a, b = top[i], top[k]
                curve = explain.pdp2d(model, background, a, b, cfg.pdp2d_grid_points)
                ra, rb = raw_grid(a, curve.grid[0]), raw_grid(b, curve.grid[1])
                fname = f"explain/pdp2d_{a}__{b}.csv"
                rows = [[a, b, "mean", "band"]]
                for p in range(len(ra)):
                    for q in range(len(rb)):
                        rows.append([ra[p], rb[q], curve.mean_prediction[p, q], curve.band[p, q]])
                report.tables[fname] = rows
                curves.append(fname)
        out["pdp_files"] = curves
    if "shap" in cfg.explainers:
        if len(model.feature_names) > explain.MAX_SHAPLEY_FEATURES:
            out["shap"] = {"skipped": f"more than {explain.MAX_SHAPLEY_FEATURES} features"}
        else:
            rows = X_test[: cfg.shap_max_rows]
            summary = explain.shap_summary(model, rows, background)
            out["shap"] = {"base_value": summary.base_value, "rows": len(rows),
                           "mean_abs": summary.ordered()}
            report.tables["explain/shap_summary.csv"] = [["feature", "mean_abs_class1", "mean_abs_class0"]] + [
                [f, summary.mean_abs_class1[j], summary.mean_abs_class0[j]]
                for j, f in sorted(enumerate(summary.feature_names), key=lambda t: -summary.mean_abs_class1[t[0]])]
            pred = model.predict(rows)
            for case, pos in _exemplars(y_test[: len(rows)], pred).items():
                sv = explain.shapley_exact(model, background, rows[pos])
                doc = sv.waterfall()
                doc["test_row"] = int(split.test[pos])
                report.documents[f"explain/shap_waterfall_{case}.json"] = doc
    report.sections["explanations"] = out


def run(cfg: RunConfig, ds: Dataset | None = None,
        progress: Callable[[int, int], None] | None = None) -> RunReport:
    """Split, search, score explainability, pick the FIR-balanced model, test it, explain it.

    A failing stage stops the run; the report then carries a failure record
    alongside whatever finished before it.
    """
    # the output location is not an input of the run, so it stays out of the echo
    report = RunReport(config={k: v for k, v in cfg.to_dict().items() if k != "out_dir"})
    stage = "load"
    try:
        if ds is None:
            ds = load_dataset(cfg)
        report.sections["dataset"] = {
            "rows": ds.n_rows, "features": len(ds.feature_cols),
            "class_counts": ds.class_counts(), "dropped": list(cfg.drop_features),
            "columns": ds.summary(),
        }

        stage = "split"
        split = stratified_split(ds, cfg.test_ratio, cfg.seed)
        folds = training_folds(ds, split, cfg.folds, cfg.seed)
        report.sections["split"] = {
            "test_ratio": cfg.test_ratio, "train": len(split.train), "test": len(split.test),
            "test_class_counts": {c: int((ds.y[split.test] == c).sum()) for c in (0, 1)},
            "fold_sizes": folds.fold_sizes(),
        }

        stage = "grid_search"
        overrides = {"n_estimators": cfg.n_estimators}
        if cfg.feature_selection:
            grid = default_grid(ds, cfg.classifiers, cfg.num_methods, cfg.nom_methods,
                                preprocess=cfg.preprocess, classifier_overrides=overrides)
        else:
            grid = no_selection_grid(cfg.classifiers, cfg.preprocess, overrides)
        cv = CrossValidator(ds, split, folds, cfg.seed, cfg.selection_scope)
        results = []
        for i, cand in enumerate(grid):
            results.append(cv.evaluate(cand, i))
            if progress is not None:
                progress(i + 1, len(grid))
        ranked = rank_results(results, cfg.scoring)
        ledger = [["index", "classifier", "num_method", "num_k", "nom_method", "nom_k", *METRIC_NAMES,
                   "n_selected", "error"]]
        for r in sorted(results, key=lambda r: r.index):
            c = r.config
            ledger.append([r.index, c.classifier.kind, c.num_method or "all", c.num_k, c.nom_method or "all",
                           c.nom_k, *(_metrics_row(r.cv_metrics) if r.valid else [None] * len(METRIC_NAMES)),
                           len(r.selected_features), r.error])
        report.tables["candidates.csv"] = ledger
        report.documents["candidates.json"] = [
            {"index": r.index, "label": r.config.label(), "config": r.config.to_dict(), "error": r.error,
             "selected_features": list(r.selected_features),
             "cv_metrics": r.cv_metrics.to_dict() if r.valid else None,
             "fold_metrics": [{k: m[k] for k in METRIC_NAMES} for m in r.fold_metrics]}
            for r in sorted(results, key=lambda r: r.index)]
        report.sections["grid"] = {"candidates": len(grid), "valid": sum(r.valid for r in results),
                                   "scoring": cfg.scoring, "best": ranked[0].config.label()}

        stage = "explainability"
        bests = best_per_classifier(ranked)
        if not bests:
            raise RuntimeError("no valid candidate in the grid")
        summaries = summarize_classifiers(cv, bests)
        picked = most_balanced(summaries)

        stage = "test_evaluation"
        per_clf = {}
        table = [["classifier", "candidate", "cv_" + cfg.scoring, "n_selected", "total_features",
                  "interpretability", "fidelity", "fir", *("test_" + m for m in METRIC_NAMES)]]
        pipes = {}
        for s in summaries:
            pipe = fit_pipeline(ds, split.train, s.result.config, cfg.seed)
            pipes[s.kind] = pipe
            pred = pipe.model.predict(pipe.transform(ds, split.test))
            cm = ConfusionMatrix.from_predictions(ds.y[split.test], pred)
            test = classification_metrics(cm)
            e = s.explainability
            per_clf[s.kind] = {
                "candidate": s.result.config.to_dict(), "label": s.result.config.label(),
                "cv_metrics": s.result.cv_metrics.to_dict(),
                "selected_features": list(s.result.selected_features),
                "total_features": s.result.total_features,
                "baseline_tree_bacc": s.baseline_bacc, **e.to_dict(),
                "test_metrics": test.to_dict(), "test_confusion": cm.to_dict(),
            }
            table.append([s.kind, s.result.config.label(), s.result.score(cfg.scoring),
                          len(s.result.selected_features), s.result.total_features,
                          e.interpretability, e.fidelity, e.fir, *_metrics_row(test)])
        report.sections["classifiers"] = per_clf
        report.tables["classifiers.csv"] = table
        report.tables["selected_features.csv"] = [["classifier", "feature"]] + [
            [k, f] for k, v in per_clf.items() for f in v["selected_features"]]
        report.sections["most_balanced"] = {"classifier": picked.kind, "label": picked.result.config.label(),
                                            "fir": picked.explainability.fir,
                                            "test_metrics": per_clf[picked.kind]["test_metrics"]}
        report.exact_documents["model.json"] = pipes[picked.kind].to_dict()

        stage = "explain"
        _explain_model(cfg, pipes[picked.kind], ds, split, report)
    except Exception as e:  # noqa: BLE001 - recorded in the report
        if stage == "load":
            raise
        log.exception("stage %s failed", stage)
        report.failure = {"stage": stage, "error": f"{type(e).__name__}: {e}"}
    return report


def explain_saved(model_path: str | Path, data_path: str | Path, cfg: RunConfig) -> RunReport:
    """Run the explainers on a serialized pipeline over every row of a dataset."""
    from .search import FittedPipeline

    pipe = FittedPipeline.from_dict(json.loads(Path(model_path).read_text()))
    ds = load_csv(data_path, HEART_FAILURE_SCHEMA, HEART_FAILURE_TARGET)
    missing = [n for n in pipe.plan.names if n not in ds.feature_names]
    if missing:
        raise ConfigError(f"data lacks model inputs {missing}")
    if list(pipe.plan.names) != list(ds.feature_names):
        ds = ds.drop([n for n in ds.feature_names if n not in pipe.plan.names])
    rows = np.arange(ds.n_rows)

    class _AllRows:
        train = rows
        test = rows

    echo = {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}
    report = RunReport(config={**echo, "model_path": str(model_path)})
    _explain_model(cfg, pipe, ds, _AllRows, report)
    return report

