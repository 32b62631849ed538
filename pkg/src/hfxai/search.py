"""Exhaustive (classifier x feature selection) search scored by stratified k-fold CV."""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import ensembles
from .ensembles import EnsembleConfig, FittedEnsemble
from .metrics import (
    METRIC_NAMES,
    ConfusionMatrix,
    ExplainabilityScore,
    MetricsReport,
    classification_metrics,
    explainability_score,
    mean_metrics,
)
from .preprocess import PreprocessConfig, PreprocessPlan, apply_plan, fit_plan
from .selection import rfe_order, score_features
from .tabular import NUMERICAL, Dataset, FoldPlan, SplitIndices, make_folds

log = logging.getLogger(__name__)

NUM_METHODS = ("anova", "mutual_info")
NOM_METHODS = ("chi2", "mutual_info", "rfe")
SELECTION_SCOPES = ("fold", "train")
TABLE_CLASSIFIERS = ("random_forest", "extra_trees", "adaboost", "gradient_boosting", "xgb_style", "max_voting")


def derive_seed(master: int, *keys) -> int:
    """Stable 31-bit seed from a master seed and any hashable labels."""
    entropy = [int(master) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0] >> 1)


@dataclass(frozen=True)
class CandidateConfig:
    """One grid point. A ``None`` method keeps every feature of that type."""

    classifier: EnsembleConfig
    num_method: str | None = "anova"
    num_k: int | None = None
    nom_method: str | None = "chi2"
    nom_k: int | None = None
    preprocess: PreprocessConfig = PreprocessConfig()

    def __post_init__(self):
        if self.num_method is not None and self.num_method not in NUM_METHODS:
            raise ValueError(f"numerical selection must be one of {NUM_METHODS}, got {self.num_method!r}")
        if self.nom_method is not None and self.nom_method not in NOM_METHODS:
            raise ValueError(f"nominal selection must be one of {NOM_METHODS}, got {self.nom_method!r}")

    @property
    def feature_selection(self) -> bool:
        return self.num_method is not None or self.nom_method is not None

    def label(self) -> str:
        num = f"{self.num_method}:{self.num_k}" if self.num_method else "all"
        nom = f"{self.nom_method}:{self.nom_k}" if self.nom_method else "all"
        return f"{self.classifier.kind}[num={num},nom={nom}]"

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier.to_dict(),
            "num_method": self.num_method,
            "num_k": self.num_k,
            "nom_method": self.nom_method,
            "nom_k": self.nom_k,
            "preprocess": vars(self.preprocess).copy(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateConfig":
        return cls(
            classifier=EnsembleConfig.from_dict(d["classifier"]),
            num_method=d["num_method"], num_k=d["num_k"],
            nom_method=d["nom_method"], nom_k=d["nom_k"],
            preprocess=PreprocessConfig(**d["preprocess"]),
        )


@dataclass(frozen=True, eq=False)
class CandidateResult:
    index: int
    config: CandidateConfig
    cv_metrics: MetricsReport | None
    fold_metrics: tuple[MetricsReport, ...] = ()
    fold_confusion: tuple[ConfusionMatrix, ...] = ()
    selected_features: tuple[str, ...] = ()
    total_features: int = 0
    error: str | None = None
    test_metrics: MetricsReport | None = None

    @property
    def valid(self) -> bool:
        return self.error is None and self.cv_metrics is not None

    def score(self, scoring: str) -> float:
        return float("-inf") if not self.valid else self.cv_metrics[scoring]


class _Partition:
    """Preprocessed fit/held-out matrices for one set of rows, with cached selection scores."""

    def __init__(self, ds: Dataset, fit_rows, eval_rows, pcfg: PreprocessConfig):
        self.plan: PreprocessPlan = fit_plan(ds, fit_rows, pcfg)
        self.names = ds.feature_names
        self.X_fit = apply_plan(self.plan, ds, fit_rows)
        self.y_fit = ds.y[fit_rows]
        self.X_eval = apply_plan(self.plan, ds, eval_rows) if len(eval_rows) else None
        self.y_eval = ds.y[eval_rows] if len(eval_rows) else None
        kinds = [s.kind for s in ds.feature_specs]
        self.num_cols = [j for j, k in enumerate(kinds) if k == NUMERICAL]
        self.nom_cols = [j for j, k in enumerate(kinds) if k != NUMERICAL]
        self._scores: dict = {}

    def _group(self, nominal: bool) -> list[int]:
        return self.nom_cols if nominal else self.num_cols

    def _ranking(self, method: str, nominal: bool) -> list[str]:
        key = (method, nominal)
        if key not in self._scores:
            cols = self._group(nominal)
            names = [self.names[j] for j in cols]
            X = self.X_fit[:, cols]
            if method == "rfe":
                order = rfe_order(X, self.y_fit, names)
            else:
                order = [s.feature for s in sorted(score_features(X, self.y_fit, method, names),
                                                   key=lambda s: s.rank)]
            self._scores[key] = order
        return self._scores[key]

    def _pick(self, method: str | None, k: int | None, nominal: bool) -> list[str]:
        cols = self._group(nominal)
        names = [self.names[j] for j in cols]
        if method is None or not cols:
            return names
        k = len(names) if k is None else k
        if not 1 <= k <= len(names):
            raise ValueError(f"k={k} out of range for {len(names)} {'nominal' if nominal else 'numerical'} features")
        order = self._ranking(method, nominal)
        # filter rankings list the best first; RFE lists the first eliminated first
        return order[:k] if method != "rfe" else order[len(order) - k:]

    def select(self, cand: CandidateConfig) -> tuple[int, ...]:
        chosen = set(self._pick(cand.num_method, cand.num_k, False))
        chosen |= set(self._pick(cand.nom_method, cand.nom_k, True))
        return tuple(j for j, n in enumerate(self.names) if n in chosen)


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    """Preprocessing plan + selected columns + fitted classifier."""

    plan: PreprocessPlan
    columns: tuple[int, ...]
    model: FittedEnsemble
    candidate: CandidateConfig

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.model.feature_names

    def transform(self, ds: Dataset, rows) -> np.ndarray:
        return apply_plan(self.plan, ds, rows)[:, list(self.columns)]

    def predict_proba(self, ds: Dataset, rows) -> np.ndarray:
        return self.model.predict_proba(self.transform(ds, rows))

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.to_dict(),
            "columns": list(self.columns),
            "preprocess": {
                "names": list(self.plan.names), "kinds": list(self.plan.kinds),
                "fill": self.plan.fill.tolist(), "center": self.plan.center.tolist(),
                "scale": self.plan.scale.tolist(),
                "categories": [None if c is None else list(c) for c in self.plan.categories],
            },
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPipeline":
        cand = CandidateConfig.from_dict(d["candidate"])
        p = d["preprocess"]
        plan = PreprocessPlan(
            config=cand.preprocess, names=tuple(p["names"]), kinds=tuple(p["kinds"]),
            fill=np.asarray(p["fill"], float), center=np.asarray(p["center"], float),
            scale=np.asarray(p["scale"], float),
            categories=tuple(None if c is None else tuple(c) for c in p["categories"]),
        )
        return cls(plan, tuple(d["columns"]), FittedEnsemble.from_dict(d["model"]), cand)


class CrossValidator:
    """Evaluates candidates on a fixed fold plan.

    Classifier seeds depend on (master seed, classifier kind, fold), not on the
    grid position, so held-out predictions are cached per
    (classifier config, fold, selected columns) and shared by candidates that
    select the same features; max-voting reuses its members' cached votes.

    ``selection_scope="fold"`` re-runs feature selection on each fold's
    training rows; ``"train"`` selects once on the whole training partition
    and reuses those columns in every fold.
    """

    def __init__(self, ds: Dataset, split: SplitIndices, folds: FoldPlan, seed: int,
                 selection_scope: str = "fold"):
        if selection_scope not in SELECTION_SCOPES:
            raise ValueError(f"selection_scope must be one of {SELECTION_SCOPES}, got {selection_scope!r}")
        self.selection_scope = selection_scope
        self.ds = ds
        self.split = split
        self.folds = folds
        self.seed = seed
        self._parts: dict = {}
        self._preds: dict = {}
        self._full: dict = {}

    def _fold_parts(self, pcfg: PreprocessConfig) -> list[_Partition]:
        if pcfg not in self._parts:
            self._parts[pcfg] = [_Partition(self.ds, fit, held, pcfg) for fit, held in self.folds]
        return self._parts[pcfg]

    def _full_part(self, pcfg: PreprocessConfig) -> _Partition:
        if pcfg not in self._full:
            self._full[pcfg] = _Partition(self.ds, self.split.train, self.split.test, pcfg)
        return self._full[pcfg]

    def _member_predictions(self, cfg: EnsembleConfig, fold: int, part: _Partition,
                            cols: tuple[int, ...]) -> np.ndarray:
        cfg = replace(cfg, seed=derive_seed(self.seed, cfg.kind, fold))
        key = (json.dumps(cfg.to_dict(), sort_keys=True), fold, cols, part.plan.config)
        if key not in self._preds:
            names = [part.names[j] for j in cols]
            model = ensembles.fit(cfg, part.X_fit[:, cols], part.y_fit, names)
            self._preds[key] = model.predict(part.X_eval[:, cols])
        return self._preds[key]

    def _predict_fold(self, cfg: EnsembleConfig, fold: int, part: _Partition, cols) -> np.ndarray:
        if cfg.kind == "max_voting":
            votes = [self._member_predictions(m, fold, part, cols) for m in cfg.voters()]
            return (ensembles.vote(votes)[:, 1] > 0.5).astype(np.int64)
        return self._member_predictions(cfg, fold, part, cols)

    def evaluate(self, cand: CandidateConfig, index: int = 0) -> CandidateResult:
        parts = self._fold_parts(cand.preprocess)
        total = len(self.ds.feature_names)
        try:
            selected = self._full_part(cand.preprocess).select(cand)
        except ValueError as exc:
            return CandidateResult(index, cand, None, total_features=total, error=str(exc))
        sel_names = tuple(self.ds.feature_names[j] for j in selected)
        fold_m, fold_cm = [], []
        for f, part in enumerate(parts):
            if len(np.unique(part.y_fit)) < 2:
                return CandidateResult(index, cand, None, selected_features=sel_names, total_features=total,
                                       error=f"fold {f} has a single class in its training rows")
            cols = part.select(cand) if self.selection_scope == "fold" else selected
            pred = self._predict_fold(cand.classifier, f, part, cols)
            cm = ConfusionMatrix.from_predictions(part.y_eval, pred)
            fold_cm.append(cm)
            fold_m.append(classification_metrics(cm))
        return CandidateResult(index, cand, mean_metrics(fold_m), tuple(fold_m), tuple(fold_cm),
                               sel_names, total)

    def fidelity_baseline(self, cand: CandidateConfig) -> float:
        """CV balanced accuracy of a single decision tree on the candidate's features."""
        tree = replace(cand, classifier=EnsembleConfig("decision_tree"))
        res = self.evaluate(tree)
        if not res.valid:
            raise ValueError(f"baseline tree evaluation failed: {res.error}")
        return res.cv_metrics.balanced_accuracy


def evaluate_candidate(ds: Dataset, split: SplitIndices, folds: FoldPlan, cand: CandidateConfig,
                       seed: int) -> CandidateResult:
    return CrossValidator(ds, split, folds, seed).evaluate(cand)


def fidelity_baseline(ds: Dataset, split: SplitIndices, folds: FoldPlan, cand: CandidateConfig,
                      seed: int) -> float:
    return CrossValidator(ds, split, folds, seed).fidelity_baseline(cand)


def training_folds(ds: Dataset, split: SplitIndices, k: int, seed: int) -> FoldPlan:
    return make_folds(split.train, ds.y[split.train], k, seed)


def rank_results(results: Iterable[CandidateResult], scoring: str) -> list[CandidateResult]:
    """Descending score; invalid candidates last; ties keep grid order."""
    return sorted(results, key=lambda r: (not r.valid, -r.score(scoring) if r.valid else 0.0, r.index))


def grid_search(ds: Dataset, split: SplitIndices, grid: Sequence[CandidateConfig],
                scoring: str = "balanced_accuracy", seed: int = 0, n_folds: int = 5,
                folds: FoldPlan | None = None,
                progress: Callable[[int, int], None] | None = None) -> list[CandidateResult]:
    if scoring not in METRIC_NAMES:
        raise ValueError(f"unknown scoring {scoring!r}; expected one of {METRIC_NAMES}")
    if not grid:
        raise ValueError("grid is empty")
    folds = folds if folds is not None else training_folds(ds, split, n_folds, seed)
    cv = CrossValidator(ds, split, folds, seed)
    results = []
    for i, cand in enumerate(grid):
        results.append(cv.evaluate(cand, i))
        if progress is not None:
            progress(i + 1, len(grid))
    return rank_results(results, scoring)


def best_per_classifier(ranked: Sequence[CandidateResult]) -> dict[str, CandidateResult]:
    """First (best) valid result per classifier kind, in order of first appearance in the ranking."""
    out: dict[str, CandidateResult] = {}
    for r in ranked:
        if r.valid and r.config.classifier.kind not in out:
            out[r.config.classifier.kind] = r
    return out


def _group_sizes(ds: Dataset) -> tuple[int, int]:
    n_num = sum(s.kind == NUMERICAL for s in ds.feature_specs)
    return n_num, len(ds.feature_specs) - n_num


def default_grid(ds: Dataset, classifiers: Sequence[str] = TABLE_CLASSIFIERS,
                 num_methods: Sequence[str] = NUM_METHODS, nom_methods: Sequence[str] = NOM_METHODS,
                 num_ks: Sequence[int] | None = None, nom_ks: Sequence[int] | None = None,
                 preprocess: PreprocessConfig = PreprocessConfig(),
                 classifier_overrides: dict | None = None) -> list[CandidateConfig]:
    n_num, n_nom = _group_sizes(ds)
    num_ks = list(num_ks) if num_ks is not None else list(range(1, n_num + 1))
    nom_ks = list(nom_ks) if nom_ks is not None else list(range(1, n_nom + 1))
    num_opts = [(m, k) for m in num_methods for k in num_ks] if n_num else [(None, None)]
    nom_opts = [(m, k) for m in nom_methods for k in nom_ks] if n_nom else [(None, None)]
    overrides = classifier_overrides or {}
    grid = []
    for kind in classifiers:
        clf = EnsembleConfig(kind, **overrides)
        for nm, nk in num_opts:
            for cm, ck in nom_opts:
                grid.append(CandidateConfig(clf, nm, nk, cm, ck, preprocess))
    return grid


def no_selection_grid(classifiers: Sequence[str] = TABLE_CLASSIFIERS,
                      preprocess: PreprocessConfig = PreprocessConfig(),
                      classifier_overrides: dict | None = None) -> list[CandidateConfig]:
    overrides = classifier_overrides or {}
    return [CandidateConfig(EnsembleConfig(k, **overrides), None, None, None, None, preprocess)
            for k in classifiers]


def fit_pipeline(ds: Dataset, rows, cand: CandidateConfig, seed: int) -> FittedPipeline:
    """Fit preprocessing, selection and classifier on ``rows``."""
    part = _Partition(ds, rows, np.zeros(0, dtype=np.int64), cand.preprocess)
    cols = part.select(cand)
    cfg = cand.classifier
    if cfg.kind == "max_voting":
        members = tuple(replace(m, seed=derive_seed(seed, m.kind, "full")) for m in cfg.voters())
        cfg = replace(cfg, members=members)
    else:
        cfg = replace(cfg, seed=derive_seed(seed, cfg.kind, "full"))
    names = [part.names[j] for j in cols]
    model = ensembles.fit(cfg, part.X_fit[:, list(cols)], part.y_fit, names)
    return FittedPipeline(part.plan, cols, model, cand)


def final_test_eval(best: CandidateResult | CandidateConfig, ds: Dataset, split: SplitIndices,
                    seed: int = 0) -> MetricsReport:
    """Refit on the whole training partition and score the untouched test rows."""
    if len(split.test) == 0:
        raise ValueError("no test rows")
    cand = best.config if isinstance(best, CandidateResult) else best
    pipe = fit_pipeline(ds, split.train, cand, seed)
    pred = pipe.model.predict(pipe.transform(ds, split.test))
    return classification_metrics(ConfusionMatrix.from_predictions(ds.y[split.test], pred))


@dataclass(frozen=True)
class ClassifierSummary:
    kind: str
    result: CandidateResult
    baseline_bacc: float
    explainability: ExplainabilityScore
    test_metrics: MetricsReport | None = None
    extra: dict = field(default_factory=dict)


def summarize_classifiers(cv: CrossValidator, bests: dict[str, CandidateResult]) -> list[ClassifierSummary]:
    out = []
    for kind, res in bests.items():
        base = cv.fidelity_baseline(res.config)
        score = explainability_score(len(res.selected_features), res.total_features,
                                     base, res.cv_metrics.balanced_accuracy)
        out.append(ClassifierSummary(kind, res, base, score))
    return out


def most_balanced(summaries: Sequence[ClassifierSummary]) -> ClassifierSummary:
    """FIR closest to 0.5; ties go to the higher CV balanced accuracy."""
    if not summaries:
        raise ValueError("no classifiers to choose from")
    return min(summaries, key=lambda s: (abs(s.explainability.fir - 0.5),
                                         -s.result.cv_metrics.balanced_accuracy))
