import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfxai import cart
from hfxai.ensembles import (
    KINDS,
    EnsembleConfig,
    FittedEnsemble,
    adaboost_alpha,
    fit,
    sigmoid,
    subtree_sums,
    vote,
)


def make_data(seed=0, n=150, m=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    y = (X[:, 0] - 0.7 * X[:, 1] + rng.normal(0, 0.8, n) > 0).astype(int)
    return X, y


def log_loss(y, p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@pytest.mark.parametrize("kind", KINDS)
def test_probabilities_sum_to_one_and_deterministic(kind):
    X, y = make_data()
    cfg = EnsembleConfig(kind, n_estimators=15, seed=4)
    a, b = fit(cfg, X, y), fit(cfg, X, y)
    pa = a.predict_proba(X)
    assert np.allclose(pa.sum(axis=1), 1.0, atol=1e-9)
    assert ((pa >= 0) & (pa <= 1)).all()
    assert np.array_equal(pa, b.predict_proba(X))


@pytest.mark.parametrize("kind", KINDS)
def test_serialization_round_trip(kind):
    X, y = make_data(1)
    model = fit(EnsembleConfig(kind, n_estimators=8, seed=2), X, y, list("abcd"))
    back = FittedEnsemble.from_dict(json.loads(json.dumps(model.to_dict())))
    assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
    assert back.feature_names == ("a", "b", "c", "d")


def test_degenerate_forest_is_a_single_cart():
    X, y = make_data(2)
    forest = fit(EnsembleConfig("random_forest", n_estimators=1, feature_subsample=None, bootstrap=False), X, y)
    tree = cart.fit_tree(X, y)
    assert np.array_equal(forest.predict_proba(X), cart.predict_proba(tree, X))


def test_forest_probability_is_tree_mean():
    X, y = make_data(3)
    for kind in ("random_forest", "extra_trees"):
        model = fit(EnsembleConfig(kind, n_estimators=12, seed=1), X, y)
        direct = np.mean([cart.predict_proba(t, X) for t in model.trees], axis=0)
        assert np.allclose(model.predict_proba(X), direct, atol=1e-12)


def test_extra_trees_use_the_full_sample():
    X, y = make_data(4)
    model = fit(EnsembleConfig("extra_trees", n_estimators=5), X, y)
    for t in model.trees:
        assert t.n_samples[0] == len(y) and t.weight[0] == len(y)


def test_bootstrap_changes_root_weights():
    X, y = make_data(5)
    model = fit(EnsembleConfig("random_forest", n_estimators=5), X, y)
    assert all(t.weight[0] == len(y) for t in model.trees)
    assert any(t.n_samples[0] < len(y) for t in model.trees)


def test_alpha_formula():
    assert adaboost_alpha(0.25) == pytest.approx(math.log(3), abs=1e-12)
    assert adaboost_alpha(0.25) == pytest.approx(1.0986, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_adaboost_reweighting_is_orthogonal(seed):
    X, y = make_data(seed, n=60)
    model = fit(EnsembleConfig("adaboost", n_estimators=4, max_depth=1, seed=seed), X, y)
    w = np.full(len(y), 1 / len(y))
    for t in range(len(model.trees) - 1):
        tree = model.trees[t]
        miss = (cart.predict_proba(tree, X)[:, 1] > 0.5).astype(int) != y
        w = w * np.exp(model.tree_weights[t] * miss)
        w /= w.sum()
        assert w[miss].sum() == pytest.approx(0.5, abs=1e-9)
        # the next learner was fit on exactly this distribution
        refit = cart.fit_tree(X, y, w, model.trees[t + 1].params)
        assert np.array_equal(refit.threshold, model.trees[t + 1].threshold)


def test_adaboost_stops_on_a_perfect_learner():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    model = fit(EnsembleConfig("adaboost", n_estimators=10, max_depth=1), X, [0, 0, 1, 1])
    assert len(model.trees) == 1
    assert model.predict(X).tolist() == [0, 0, 1, 1]


def test_adaboost_probability_is_logistic_of_normalized_margin():
    X, y = make_data(6)
    model = fit(EnsembleConfig("adaboost", n_estimators=10), X, y)
    votes = sum(a * np.where(cart.predict_proba(t, X)[:, 1] > 0.5, 1, -1)
                for t, a in zip(model.trees, model.tree_weights))
    expected = sigmoid(votes / model.tree_weights.sum())
    assert np.allclose(model.predict_proba(X)[:, 1], expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_gradient_boosting_loss_non_increasing(seed):
    X, y = make_data(seed)
    model = fit(EnsembleConfig("gradient_boosting", n_estimators=30, learning_rate=0.3, max_depth=3), X, y)
    f = np.full(len(y), model.base_score)
    losses = [log_loss(y, sigmoid(f))]
    for t, lr in zip(model.trees, model.tree_weights):
        f = f + lr * cart.predict_value(t, X)
        losses.append(log_loss(y, sigmoid(f)))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_gradient_boosting_prior_only():
    X, y = make_data(7)
    model = fit(EnsembleConfig("gradient_boosting", n_estimators=1, learning_rate=1e-300), X, y)
    assert np.allclose(model.predict_proba(X)[:, 1], y.mean(), atol=1e-12)


def test_gradient_boosting_prior_on_surrogate(surrogate):
    model = fit(EnsembleConfig("gradient_boosting", n_estimators=1, learning_rate=1e-300),
                surrogate.X, surrogate.y)
    assert model.predict_proba(surrogate.X[:3])[:, 1] == pytest.approx([96 / 299] * 3, abs=1e-12)


def test_newton_leaf_values_on_every_node():
    X, y = make_data(8)
    model = fit(EnsembleConfig("gradient_boosting", n_estimators=1, learning_rate=0.1), X, y)
    tree = model.trees[0]
    p = sigmoid(np.full(len(y), model.base_score))
    r, h = y - p, p * (1 - p)
    ind = cart.node_indicator(tree, X)
    for node in range(tree.node_count):
        rows = ind[:, node]
        assert tree.value[node, 0] == pytest.approx(r[rows].sum() / h[rows].sum(), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_xgb_matches_gradient_boosting_without_regularization(seed):
    X, y = make_data(seed, n=40, m=3)
    kw = dict(n_estimators=1, max_depth=2, reg_lambda=0.0, gamma=0.0, min_child_weight=0.0)
    gb = fit(EnsembleConfig("gradient_boosting", **kw), X, y)
    xgb = fit(EnsembleConfig("xgb_style", **kw), X, y)
    tg, tx = gb.trees[0], xgb.trees[0]
    assert np.array_equal(tg.feature, tx.feature)
    assert np.allclose(tg.threshold, tx.threshold)
    leaves = tg.is_leaf
    assert np.allclose(tg.value[leaves, 0], tx.value[leaves, 0], atol=1e-9)


def test_xgb_gain_formula():
    X, y = make_data(9, n=30, m=2)
    model = fit(EnsembleConfig("xgb_style", n_estimators=1, max_depth=1, reg_lambda=1.0), X, y)
    tree = model.trees[0]
    p = sigmoid(np.full(len(y), model.base_score))
    g, h = p - y, p * (1 - p)
    m = X[:, tree.feature[0]] <= tree.threshold[0]
    GL, HL, GR, HR = g[m].sum(), h[m].sum(), g[~m].sum(), h[~m].sum()
    expected = 0.5 * (GL**2 / (HL + 1) + GR**2 / (HR + 1) - (GL + GR) ** 2 / (HL + HR + 1))
    assert tree.gain[0] == pytest.approx(expected, rel=1e-10)
    assert tree.value[1, 0] == pytest.approx(-GL / (HL + 1), rel=1e-12)


def test_single_class_boosting_warns_and_is_constant():
    X = np.random.default_rng(0).normal(size=(10, 2))
    for kind in ("adaboost", "gradient_boosting", "xgb_style"):
        with pytest.warns(UserWarning, match="single-class"):
            model = fit(EnsembleConfig(kind, n_estimators=5), X, np.ones(10, int))
        assert (model.predict(X) == 1).all()


def test_vote_rules():
    assert vote([np.array([1]), np.array([1]), np.array([0])])[0].tolist() == pytest.approx([1 / 3, 2 / 3])
    p = vote([np.array([1]), np.array([0])])
    assert p[0, 1] == 0.5 and (p[:, 1] > 0.5).astype(int).tolist() == [0]


def test_max_voting_matches_members():
    X, y = make_data(10)
    model = fit(EnsembleConfig("max_voting", n_estimators=10), X, y)
    assert [m.kind for m in model.members] == ["random_forest", "extra_trees", "gradient_boosting"]
    votes = np.column_stack([m.predict(X) for m in model.members])
    assert np.array_equal(model.predict(X), (votes.sum(axis=1) >= 2).astype(int))


def test_subtree_sums():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    tree = cart.fit_tree(X, [0, 1, 0, 1])
    (s,) = subtree_sums(tree, tree.apply(X), np.array([1.0, 2.0, 3.0, 4.0]))
    assert s[0] == 10.0


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig("svm")
    with pytest.raises(ValueError):
        EnsembleConfig("random_forest", n_estimators=0)
    with pytest.raises(ValueError):
        EnsembleConfig("gradient_boosting", learning_rate=0)
    cfg = EnsembleConfig("random_forest")
    assert cfg.max_features(12) == 3 and cfg.depth() is None
    assert EnsembleConfig("adaboost").depth() == 3


def test_arity_errors():
    X, y = make_data()
    model = fit(EnsembleConfig("extra_trees", n_estimators=3), X, y)
    with pytest.raises(ValueError):
        model.predict_proba(X[:, :2])
    with pytest.raises(ValueError):
        fit(EnsembleConfig("extra_trees"), np.full((3, 2), np.nan), [0, 1, 0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(KINDS))
def test_boosting_zero_margin_means_half(seed, kind):
    X, y = make_data(seed, n=30, m=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit(EnsembleConfig(kind, n_estimators=3, seed=seed), X, y)
    p = model.predict_proba(X)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    if kind in ("gradient_boosting", "xgb_style"):
        assert np.allclose(p[:, 1], sigmoid(model.margin(X)))
