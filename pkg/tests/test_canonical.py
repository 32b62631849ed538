"""Published-value checks that need the real heart-failure records.

Each test fails (not skips) when the CSV is absent; see conftest.canonical_csv.
"""

import numpy as np
import pytest

from conftest import SEEDS, require_canonical

from test_cart import brute_force_split

from hfxai import cart, explain, report
from hfxai.ensembles import EnsembleConfig, fit
from hfxai.report import RunConfig
from hfxai.search import CandidateConfig, CrossValidator, fit_pipeline, training_folds
from hfxai.selection import score_features, select_top_k
from hfxai.tabular import NOMINAL, stratified_split

# the published Extra Trees selection: ANOVA k=4 numerical, mutual information k=1 nominal
ET_PUBLISHED = CandidateConfig(EnsembleConfig("extra_trees"), "anova", 4, "mutual_info", 1)


@pytest.fixture(scope="module")
def ds():
    return report.load_dataset(RunConfig(str(require_canonical())))


@pytest.fixture(scope="module")
def et(ds):
    split = stratified_split(ds, 0.3, 0)
    pipe = fit_pipeline(ds, split.train, ET_PUBLISHED, 0)
    X_train = pipe.transform(ds, split.train)
    X_test = pipe.transform(ds, split.test)
    return pipe, split, X_train, X_test, ds.y[split.test]


def test_dataset_shape(ds):
    assert ds.n_rows == 299 and len(ds.feature_names) == 12
    assert ds.class_counts() == {0: 203, 1: 96}


def test_first_split_uses_time(ds):
    train = stratified_split(ds, 0.3, 0).train
    X, y = ds.X[train], ds.y[train]
    _, f, t = brute_force_split(X, y.tolist())
    assert ds.feature_names[f] == "time"
    tree = cart.fit_tree(X, y)
    assert (tree.feature[0], tree.threshold[0]) == (f, pytest.approx(t, abs=1e-12))


def test_boosting_prior(ds):
    model = fit(EnsembleConfig("gradient_boosting", n_estimators=1, learning_rate=1e-300), ds.X, ds.y)
    assert model.predict_proba(ds.X[:5])[:, 1] == pytest.approx([96 / 299] * 5, abs=1e-12)


def test_chi2_top_nominal_is_anaemia(ds):
    nom = [j for j, s in enumerate(ds.feature_specs) if s.kind == NOMINAL]
    names = [ds.feature_names[j] for j in nom]
    hits = 0
    for s in SEEDS:
        train = stratified_split(ds, 0.3, s).train
        top = select_top_k(score_features(ds.X[train][:, nom], ds.y[train], "chi2", names), 1).selected
        hits += top == ("anaemia",)
    assert hits >= 3


def test_extra_trees_published_config_cv(ds):
    split = stratified_split(ds, 0.3, 0)
    r = CrossValidator(ds, split, training_folds(ds, split, 5, 0), 0).evaluate(ET_PUBLISHED)
    assert len(r.selected_features) == 5
    assert abs(r.cv_metrics.balanced_accuracy - 0.851) <= 0.05


def test_random_forest_ranks_first(canonical_runs):
    runs, _, _ = canonical_runs
    mean = {k: np.mean([r.sections["classifiers"][k]["cv_metrics"]["balanced_accuracy"] for r in runs.values()])
            for k in runs[0].sections["classifiers"]}
    assert max(mean, key=mean.get) == "random_forest", mean
    assert abs(mean["random_forest"] - 0.854) <= 0.05


def test_extra_trees_test_metrics(canonical_runs):
    runs, _, _ = canonical_runs
    t = runs[0].sections["classifiers"]["extra_trees"]["test_metrics"]
    assert abs(t["accuracy"] - 0.844) <= 0.07 and abs(t["balanced_accuracy"] - 0.795) <= 0.07


def test_most_balanced_is_closest_to_half(canonical_runs):
    runs, _, _ = canonical_runs
    for rep in runs.values():
        firs = {k: v["fir"] for k, v in rep.sections["classifiers"].items()}
        assert abs(rep.sections["most_balanced"]["fir"] - 0.5) == min(abs(f - 0.5) for f in firs.values())


def test_gini_order_and_time_weight(et):
    pipe = et[0]
    g = explain.gini_importance(pipe.model)
    order = [f for f, _, _ in g.ordered()]
    assert order == ["time", "serum_creatinine", "ejection_fraction", "age", "diabetes"], order
    assert abs(g.weight("time") - 0.457) <= 0.10


def test_true_negative_bias(et):
    pipe, _, _, X_test, y_test = et
    pred = pipe.model.predict(X_test)
    tn = np.flatnonzero((y_test == 0) & (pred == 0))[0]
    pc = explain.path_contributions(pipe.model, X_test[tn], target_class=0)
    assert abs(pc.bias - 0.679) <= 0.01


def test_permutation_time_weight(et):
    pipe, _, _, X_test, y_test = et
    perm = explain.permutation_importance(pipe.model, X_test, y_test, "accuracy", 10, 0)
    assert perm.ordered()[0][0] == "time"
    assert abs(perm.weight("time") - 0.260) <= 0.10


def _raw(pipe, name, grid):
    return pipe.plan.inverse_numerical(list(pipe.plan.names).index(name), grid)


def test_ejection_fraction_pdp_falls_at_low_values(et):
    pipe, _, X_train, _, _ = et
    curve = explain.pdp(pipe.model, X_train, "ejection_fraction", 20)
    raw = _raw(pipe, "ejection_fraction", curve.grid[0])
    low = curve.mean_prediction[raw <= 30]
    assert low.size >= 2 and (np.diff(low) <= 1e-12).all()


def test_low_time_dominates_creatinine(et):
    pipe, _, X_train, _, _ = et
    surf = explain.pdp2d(pipe.model, X_train, "time", "serum_creatinine", 10)
    assert (surf.mean_prediction[0] > surf.mean_prediction[-1].mean()).all()
    assert (surf.mean_prediction[0] > 0.6).all()


def test_shap_global_and_true_positive(et):
    pipe, _, X_train, X_test, y_test = et
    background = explain.background_sample(X_train, 100, 0)
    summary = explain.shap_summary(pipe.model, X_test, background)
    assert summary.ordered()[0][0] == "time"
    pred = pipe.model.predict(X_test)
    j = list(pipe.feature_names).index("time")
    tp = [i for i in np.flatnonzero((y_test == 1) & (pred == 1)) if X_test[i, j] < np.median(X_train[:, j])]
    sv = explain.shapley_exact(pipe.model, background, X_test[tp[0]])
    assert sv.values[j] > 0
