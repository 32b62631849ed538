"""Ensemble-tree classification with feature selection, explainability scoring and post-hoc explainers."""

from .ensembles import EnsembleConfig, FittedEnsemble, fit
from .explain import gini_importance, path_contributions, pdp, pdp2d, permutation_importance, shap_summary, shapley_exact
from .metrics import ConfusionMatrix, classification_metrics, explainability_score
from .report import RunConfig, emit_report, run
from .tabular import Dataset, load_csv, make_folds, stratified_split

__all__ = [
    "ConfusionMatrix", "Dataset", "EnsembleConfig", "FittedEnsemble", "RunConfig",
    "classification_metrics", "emit_report", "explainability_score", "fit", "gini_importance",
    "load_csv", "make_folds", "path_contributions", "pdp", "pdp2d", "permutation_importance",
    "run", "shap_summary", "shapley_exact", "stratified_split",
]
