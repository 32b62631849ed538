"""Post-hoc explanations for fitted ensembles.

Gini importance and path contributions read the trees directly; permutation
importance, partial dependence and Shapley values only need ``predict_proba``
and ``feature_names``, so they accept any model exposing those two.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Sequence

import numpy as np

from . import cart
from .ensembles import BOOSTERS, FORESTS, FittedEnsemble
from .metrics import METRIC_NAMES, ConfusionMatrix, classification_metrics

MAX_SHAPLEY_FEATURES = 20
ERROR_METRICS = ("error_rate", "log_loss")


class UnsupportedModelError(TypeError):
    pass


@dataclass(frozen=True, eq=False)
class ImportanceRanking:
    method: str
    features: tuple[str, ...]
    weights: np.ndarray
    stds: np.ndarray
    degenerate: bool = False
    # per-repeat (permutation) or per-tree (gini) values, features x draws
    draws: np.ndarray | None = None

    def ordered(self) -> list[tuple[str, float, float]]:
        """(feature, weight, std) by descending weight, ties by name."""
        idx = sorted(range(len(self.features)), key=lambda j: (-self.weights[j], self.features[j]))
        return [(self.features[j], float(self.weights[j]), float(self.stds[j])) for j in idx]

    def rank_of(self, feature: str) -> int:
        return [f for f, _, _ in self.ordered()].index(feature) + 1

    def weight(self, feature: str) -> float:
        return float(self.weights[self.features.index(feature)])

    def sem(self) -> np.ndarray:
        """Standard error of each mean weight."""
        n = 1 if self.draws is None else self.draws.shape[1]
        return self.stds / np.sqrt(n)


@dataclass(frozen=True, eq=False)
class PathContribution:
    feature_names: tuple[str, ...]
    bias: float
    contributions: np.ndarray
    target_class: int
    predicted_class: int
    probability: float

    def as_table(self) -> list[tuple[str, float]]:
        """BIAS first, then features by descending contribution."""
        rows = sorted(zip(self.feature_names, self.contributions.tolist()), key=lambda r: (-r[1], r[0]))
        return [("<BIAS>", self.bias)] + rows


@dataclass(frozen=True, eq=False)
class PdpCurve:
    features: tuple[str, ...]
    grid: tuple[np.ndarray, ...]
    mean_prediction: np.ndarray
    band: np.ndarray


@dataclass(frozen=True, eq=False)
class ShapValues:
    feature_names: tuple[str, ...]
    base_value: float
    values: np.ndarray
    output: float

    def waterfall(self) -> dict:
        order = sorted(range(len(self.values)), key=lambda j: (-abs(self.values[j]), self.feature_names[j]))
        return {
            "base_value": float(self.base_value),
            "output": float(self.output),
            "contributions": [{"feature": self.feature_names[j], "value": float(self.values[j])} for j in order],
        }


@dataclass(frozen=True, eq=False)
class ShapSummary:
    feature_names: tuple[str, ...]
    base_value: float
    values: np.ndarray
    mean_abs_class1: np.ndarray
    mean_abs_class0: np.ndarray

    def ordered(self) -> list[tuple[str, float]]:
        idx = sorted(range(len(self.feature_names)), key=lambda j: (-self.mean_abs_class1[j], self.feature_names[j]))
        return [(self.feature_names[j], float(self.mean_abs_class1[j])) for j in idx]


def _positive_proba(model, X) -> np.ndarray:
    return np.asarray(model.predict_proba(X))[:, 1]


def _feature_index(model, feature) -> int:
    names = list(model.feature_names)
    if isinstance(feature, (int, np.integer)):
        if not 0 <= feature < len(names):
            raise ValueError(f"feature index {feature} out of range")
        return int(feature)
    if feature not in names:
        raise ValueError(f"feature {feature!r} is not a model input ({names})")
    return names.index(feature)


# -- implicit importance -----------------------------------------------------

def _tree_importance(tree: cart.FittedTree) -> np.ndarray | None:
    internal = tree.feature >= 0
    imp = np.bincount(tree.feature[internal], weights=tree.gain[internal], minlength=tree.n_features)
    total = imp.sum()
    return imp / total if total > 0 else None


def gini_importance(model: FittedEnsemble) -> ImportanceRanking:
    """Mean decrease in impurity, normalized per tree, then averaged over trees.

    Trees without any impurity-decreasing split are left out of the average.
    For max-voting the member rankings are averaged.
    """
    names = tuple(model.feature_names)
    if model.kind == "max_voting":
        parts = [gini_importance(m) for m in model.members]
        usable = [p.weights for p in parts if not p.degenerate]
        if not usable:
            z = np.zeros(len(names))
            return ImportanceRanking("gini", names, z, z.copy(), True)
        W = np.array(usable)
        return ImportanceRanking("gini", names, W.mean(axis=0), W.std(axis=0), False, W.T)
    per_tree = [imp for imp in map(_tree_importance, model.trees) if imp is not None]
    if not per_tree:
        z = np.zeros(len(names))
        return ImportanceRanking("gini", names, z, z.copy(), True)
    W = np.array(per_tree)
    return ImportanceRanking("gini", names, W.mean(axis=0), W.std(axis=0), False, W.T)


# -- path contributions ------------------------------------------------------

def _node_values(model: FittedEnsemble, tree: cart.FittedTree) -> np.ndarray:
    if model.kind in ("decision_tree",) + FORESTS:
        return tree.value[:, 1]
    if model.kind == "adaboost":
        p1 = tree.value[:, 1]
        # leaves vote +/-1; inner nodes carry the vote margin of their rows
        return np.where(tree.feature < 0, np.where(p1 > 0.5, 1.0, -1.0), 2.0 * p1 - 1.0)
    return tree.value[:, 0]


def path_contributions(model: FittedEnsemble, x, target_class: int | None = None) -> PathContribution:
    """Split each prediction into a root bias plus per-feature edge deltas.

    Every edge on a tree's decision path credits its split feature with
    (child value - parent value). Forests work on the probability scale
    directly. Boosters work in margin space; the probability change
    sigmoid(margin) - sigmoid(bias margin) is then shared out in proportion
    to the margin contributions, which keeps the terms additive.
    """
    if model.kind == "max_voting" or model.kind not in ("decision_tree",) + FORESTS + BOOSTERS:
        raise UnsupportedModelError(f"path contributions need a tree model, got {model.kind}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != model.n_features:
        raise ValueError(f"expected a row with {model.n_features} features")
    contrib = np.zeros(model.n_features)
    bias = model.base_score if model.kind in ("gradient_boosting", "xgb_style") else 0.0
    weights = model.tree_weights
    if model.kind == "adaboost":
        weights = weights / weights.sum()
    for tree, w in zip(model.trees, weights):
        v = _node_values(model, tree)
        path = cart.decision_path(tree, x)
        bias += w * v[path[0]]
        for parent, child in zip(path[:-1], path[1:]):
            contrib[tree.feature[parent]] += w * (v[child] - v[parent])

    p1 = float(model.predict_proba(x[None, :])[0, 1])
    if model.kind in BOOSTERS:
        bias_p = float(1.0 / (1.0 + np.exp(-bias)))
        total = contrib.sum()
        contrib = (p1 - bias_p) * contrib / total if total != 0 else np.zeros_like(contrib)
        bias = bias_p

    predicted = int(p1 > 0.5)
    target = predicted if target_class is None else int(target_class)
    if target == 0:
        return PathContribution(tuple(model.feature_names), 1.0 - bias, -contrib, 0, predicted, 1.0 - p1)
    return PathContribution(tuple(model.feature_names), bias, contrib, 1, predicted, p1)


# -- permutation importance --------------------------------------------------

def _score(metric: str, y, proba1) -> float:
    if metric == "log_loss":
        p = np.clip(proba1, 1e-15, 1 - 1e-15)
        return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    pred = (proba1 > 0.5).astype(int)
    rep = classification_metrics(ConfusionMatrix.from_predictions(y, pred))
    if metric == "error_rate":
        return 1.0 - rep.accuracy
    return rep[metric]


def permutation_importance(model, X, y, metric: str = "accuracy", repeats: int = 10,
                           seed: int = 0) -> ImportanceRanking:
    """Score drop after shuffling one column at a time (rise, for error metrics)."""
    if metric not in METRIC_NAMES + ERROR_METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.array(X, dtype=float)
    y = np.asarray(y).astype(int)
    sign = -1.0 if metric in ERROR_METRICS else 1.0
    base = _score(metric, y, _positive_proba(model, X))
    rng = np.random.default_rng(seed)
    m = X.shape[1]
    draws = np.zeros((m, repeats))
    for j in range(m):
        saved = X[:, j].copy()
        for r in range(repeats):
            X[:, j] = saved[rng.permutation(len(saved))]
            draws[j, r] = sign * (base - _score(metric, y, _positive_proba(model, X)))
        X[:, j] = saved
    return ImportanceRanking("permutation", tuple(model.feature_names), draws.mean(axis=1),
                             draws.std(axis=1), False, draws)


# -- partial dependence ------------------------------------------------------

def grid_values(col, grid_points: int) -> np.ndarray:
    """Distinct values when there are few, else distinct evenly spaced quantiles."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    uniq = np.unique(col)
    if len(uniq) <= grid_points:
        return uniq
    return np.unique(np.quantile(col, np.linspace(0.0, 1.0, grid_points)))


def pdp(model, X, feature, grid_points: int = 20) -> PdpCurve:
    X = np.asarray(X, dtype=float)
    j = _feature_index(model, feature)
    grid = grid_values(X[:, j], grid_points)
    n = len(X)
    stacked = np.repeat(X[None, :, :], len(grid), axis=0)
    stacked[:, :, j] = grid[:, None]
    ice = _positive_proba(model, stacked.reshape(-1, X.shape[1])).reshape(len(grid), n)
    return PdpCurve((model.feature_names[j],), (grid,), ice.mean(axis=1), ice.std(axis=1))


def pdp2d(model, X, feature_a, feature_b, grid_points: int = 10) -> PdpCurve:
    X = np.asarray(X, dtype=float)
    a = _feature_index(model, feature_a)
    b = _feature_index(model, feature_b)
    if a == b:
        raise ValueError("two-way partial dependence needs two different features")
    ga = grid_values(X[:, a], grid_points)
    gb = grid_values(X[:, b], grid_points)
    n = len(X)
    stacked = np.repeat(X[None, None, :, :], len(ga), axis=0).repeat(len(gb), axis=1)
    stacked[:, :, :, a] = ga[:, None, None]
    stacked[:, :, :, b] = gb[None, :, None]
    ice = _positive_proba(model, stacked.reshape(-1, X.shape[1])).reshape(len(ga), len(gb), n)
    names = (model.feature_names[a], model.feature_names[b])
    return PdpCurve(names, (ga, gb), ice.mean(axis=2), ice.std(axis=2))


# -- Shapley values ----------------------------------------------------------

def background_sample(X, size: int = 100, seed: int = 0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if len(X) <= size:
        return X
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size=size, replace=False))
    return X[idx]


def coalition_values(model, background, x) -> np.ndarray:
    """v[mask] = mean P(class 1) over background rows with the masked columns taken from ``x``."""
    B = np.asarray(background, dtype=float)
    x = np.asarray(x, dtype=float)
    m = len(x)
    n_masks = 1 << m
    masks = np.arange(n_masks)
    bits = ((masks[:, None] >> np.arange(m)[None, :]) & 1).astype(bool)
    v = np.empty(n_masks)
    chunk = max(1, 200_000 // max(1, len(B)))
    for start in range(0, n_masks, chunk):
        sel = bits[start:start + chunk]
        hybrid = np.where(sel[:, None, :], x[None, None, :], B[None, :, :])
        p = _positive_proba(model, hybrid.reshape(-1, m)).reshape(len(sel), len(B))
        v[start:start + chunk] = p.mean(axis=1)
    return v


def shapley_from_values(v: np.ndarray, m: int) -> np.ndarray:
    masks = np.arange(1 << m)
    size = np.array([bin(s).count("1") for s in masks])
    w = np.array([factorial(s) * factorial(m - s - 1) / factorial(m) if s < m else 0.0 for s in range(m + 1)])
    phi = np.zeros(m)
    for i in range(m):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = float(np.sum(w[size[without]] * (v[without | (1 << i)] - v[without])))
    return phi


def shapley_exact(model, X_background, x) -> ShapValues:
    """Interventional Shapley values of P(class 1) by full coalition enumeration."""
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m != len(model.feature_names):
        raise ValueError(f"expected a row with {len(model.feature_names)} features")
    if m > MAX_SHAPLEY_FEATURES:
        raise ValueError(
            f"{m} features exceed the exact-enumeration bound of {MAX_SHAPLEY_FEATURES}; "
            "select fewer features or explain a feature subset"
        )
    v = coalition_values(model, X_background, x)
    return ShapValues(tuple(model.feature_names), float(v[0]), shapley_from_values(v, m), float(v[-1]))


def shap_summary(model, X, background) -> ShapSummary:
    """Mean |phi| per feature. For a binary probability the class-0 values are the negated class-1 values."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValueError("no rows to explain")
    rows = [shapley_exact(model, background, x) for x in X]
    values = np.array([r.values for r in rows])
    mean_abs = np.abs(values).mean(axis=0)
    return ShapSummary(tuple(model.feature_names), rows[0].base_value, values, mean_abs, np.abs(-values).mean(axis=0))


def rank_agreement(rankings: Sequence[Sequence[str]]) -> str | None:
    """The common top feature if every ranking agrees on it."""
    tops = {r[0] for r in rankings if r}
    return tops.pop() if len(tops) == 1 else None
