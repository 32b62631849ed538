"""Tree ensembles for binary classification built on :mod:`hfxai.cart`."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import cart
from .cart import FittedTree, TreeParams

KINDS = (
    "decision_tree",
    "random_forest",
    "extra_trees",
    "adaboost",
    "gradient_boosting",
    "xgb_style",
    "max_voting",
)
FORESTS = ("random_forest", "extra_trees")
BOOSTERS = ("adaboost", "gradient_boosting", "xgb_style")
DEFAULT_VOTERS = ("random_forest", "extra_trees", "gradient_boosting")
AUTO = "auto"


@dataclass(frozen=True)
class EnsembleConfig:
    """Classifier settings. ``"auto"`` fields resolve per kind.

    max_depth: unlimited for trees and forests, 3 for boosting.
    feature_subsample: floor(sqrt(m)) for forests, all features otherwise.
    """

    kind: str
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int | None | str = AUTO
    min_samples_leaf: int = 1
    feature_subsample: int | None | str = AUTO
    bootstrap: bool = True
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    members: tuple["EnsembleConfig", ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.kind == "max_voting" and self.members and any(m.kind == "max_voting" for m in self.members):
            raise ValueError("max_voting members cannot be max_voting")

    def depth(self) -> int | None:
        if self.max_depth == AUTO:
            return 3 if self.kind in BOOSTERS else None
        return self.max_depth

    def max_features(self, m: int) -> int | None:
        if self.feature_subsample == AUTO:
            return max(1, int(math.isqrt(m))) if self.kind in FORESTS else None
        if self.feature_subsample is None:
            return None
        return min(int(self.feature_subsample), m)

    def voters(self) -> tuple["EnsembleConfig", ...]:
        if self.kind != "max_voting":
            return ()
        if self.members:
            return self.members
        return tuple(EnsembleConfig(k, n_estimators=self.n_estimators, learning_rate=self.learning_rate,
                                    seed=self.seed) for k in DEFAULT_VOTERS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["members"] = [m.to_dict() for m in self.members]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        d = dict(d)
        d["members"] = tuple(cls.from_dict(m) for m in d.get("members", ()))
        return cls(**d)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def adaboost_alpha(eps: float) -> float:
    """Tree weight of discrete two-class AdaBoost."""
    return math.log((1.0 - eps) / eps)


@dataclass(frozen=True, eq=False)
class FittedEnsemble:
    """A fitted classifier.

    Forests average tree probabilities with ``tree_weights``; AdaBoost sums
    ``tree_weights * (+/-1)`` votes; gradient boosters add
    ``tree_weights * leaf value`` to ``base_score`` in log-odds space.
    """

    kind: str
    config: EnsembleConfig
    n_features: int
    feature_names: tuple[str, ...]
    trees: tuple[FittedTree, ...] = ()
    tree_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    base_score: float = 0.0
    members: tuple["FittedEnsemble", ...] = ()

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        return np.ascontiguousarray(X)

    def margin(self, X) -> np.ndarray:
        """Raw additive score of boosted models (log-odds for gradient boosters)."""
        X = self._check(X)
        if self.kind == "adaboost":
            votes = np.zeros(len(X))
            for t, a in zip(self.trees, self.tree_weights):
                votes += a * np.where(cart.predict_proba(t, X)[:, 1] > 0.5, 1.0, -1.0)
            return votes / self.tree_weights.sum()
        if self.kind in ("gradient_boosting", "xgb_style"):
            f = np.full(len(X), self.base_score)
            for t, lr in zip(self.trees, self.tree_weights):
                f += lr * cart.predict_value(t, X)
            return f
        raise ValueError(f"{self.kind} has no additive margin")

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        if self.kind in ("decision_tree",) + FORESTS:
            p = np.zeros((len(X), 2))
            for t, w in zip(self.trees, self.tree_weights):
                p += w * cart.predict_proba(t, X)
            return p
        if self.kind in BOOSTERS:
            p1 = sigmoid(self.margin(X))
            return np.column_stack([1.0 - p1, p1])
        votes = np.column_stack([m.predict(X) for m in self.members])
        p1 = votes.mean(axis=1)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        """Class 1 only when its probability exceeds 1/2."""
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.config.to_dict(),
            "feature_names": list(self.feature_names),
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
            "weights": [float(w) for w in self.tree_weights],
            "base_score": float(self.base_score),
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedEnsemble":
        return cls(
            kind=d["kind"],
            config=EnsembleConfig.from_dict(d["params"]),
            n_features=int(d["n_features"]),
            feature_names=tuple(d["feature_names"]),
            trees=tuple(FittedTree.from_dict(t) for t in d["trees"]),
            tree_weights=np.asarray(d["weights"], dtype=float),
            base_score=float(d["base_score"]),
            members=tuple(cls.from_dict(m) for m in d["members"]),
        )


def _tree_seeds(rng: np.random.Generator, n: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n)]


def _fit_forest(cfg: EnsembleConfig, X, y, names) -> FittedEnsemble:
    n, m = X.shape
    rng = np.random.default_rng(cfg.seed)
    randomized = cfg.kind == "extra_trees"
    trees = []
    for s in _tree_seeds(rng, cfg.n_estimators):
        w = None
        if cfg.kind == "random_forest" and cfg.bootstrap:
            # bootstrap multiplicities as row weights == duplicated rows
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        params = TreeParams(max_depth=cfg.depth(), min_samples_leaf=cfg.min_samples_leaf,
                            max_features=cfg.max_features(m), random_split=randomized, seed=s)
        trees.append(cart.fit_tree(X, y, w, params))
    weights = np.full(len(trees), 1.0 / len(trees))
    return FittedEnsemble(cfg.kind, cfg, m, names, tuple(trees), weights)


def _fit_decision_tree(cfg: EnsembleConfig, X, y, names) -> FittedEnsemble:
    params = TreeParams(max_depth=cfg.depth(), min_samples_leaf=cfg.min_samples_leaf,
                        max_features=cfg.max_features(X.shape[1]), seed=cfg.seed)
    tree = cart.fit_tree(X, y, None, params)
    return FittedEnsemble("decision_tree", cfg, X.shape[1], names, (tree,), np.ones(1))


def _constant_booster(cfg, X, y, names) -> FittedEnsemble:
    warnings.warn(f"{cfg.kind}: single-class target, returning a constant-prior model", stacklevel=3)
    p = float(np.clip(y.mean(), 1e-15, 1 - 1e-15))
    base = math.log(p / (1 - p))
    if cfg.kind == "adaboost":
        # one pure leaf carries the whole vote
        tree = cart.fit_tree(X, y, None, TreeParams(max_depth=0))
        return FittedEnsemble(cfg.kind, cfg, X.shape[1], names, (tree,), np.ones(1))
    return FittedEnsemble(cfg.kind, cfg, X.shape[1], names, (), np.zeros(0), base)


def _fit_adaboost(cfg: EnsembleConfig, X, y, names) -> FittedEnsemble:
    n = len(y)
    w = np.full(n, 1.0 / n)
    rng = np.random.default_rng(cfg.seed)
    trees, alphas = [], []
    for s in _tree_seeds(rng, cfg.n_estimators):
        params = TreeParams(max_depth=cfg.depth(), min_samples_leaf=cfg.min_samples_leaf,
                            max_features=cfg.max_features(X.shape[1]), seed=s)
        tree = cart.fit_tree(X, y, w, params)
        miss = (cart.predict_proba(tree, X)[:, 1] > 0.5).astype(int) != y
        eps = float(w[miss].sum() / w.sum())
        if eps >= 0.5:
            if not trees:
                trees.append(tree)
                alphas.append(1.0)
            break
        if eps <= 0.0:
            trees.append(tree)
            alphas.append(adaboost_alpha(1e-10))
            break
        alpha = adaboost_alpha(eps)
        trees.append(tree)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w /= w.sum()
    return FittedEnsemble("adaboost", cfg, X.shape[1], names, tuple(trees), np.asarray(alphas))


def subtree_sums(tree: FittedTree, leaf_of_row: np.ndarray, *columns: np.ndarray) -> list[np.ndarray]:
    """Per-node sums of row statistics over the rows routed through each node."""
    out = []
    for col in columns:
        acc = np.bincount(leaf_of_row, weights=col, minlength=tree.node_count).astype(float)
        # children always carry larger ids than their parent
        for node in range(tree.node_count - 1, -1, -1):
            if tree.feature[node] >= 0:
                acc[node] = acc[tree.left[node]] + acc[tree.right[node]]
        out.append(acc)
    return out


def _fit_gradient(cfg: EnsembleConfig, X, y, names) -> FittedEnsemble:
    p0 = float(y.mean())
    base = math.log(p0 / (1.0 - p0))
    f = np.full(len(y), base)
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for s in _tree_seeds(rng, cfg.n_estimators):
        p = sigmoid(f)
        h = p * (1.0 - p)
        params = TreeParams(max_depth=cfg.depth(), min_samples_leaf=cfg.min_samples_leaf,
                            max_features=cfg.max_features(X.shape[1]), seed=s,
                            reg_lambda=cfg.reg_lambda, gamma=cfg.gamma,
                            min_child_weight=cfg.min_child_weight)
        if cfg.kind == "gradient_boosting":
            resid = y - p
            tree = cart.fit_regression_tree(X, resid, params)
            leaves = tree.apply(X)
            num, den = subtree_sums(tree, leaves, resid, h)
            tree = cart.with_values(tree, np.where(den > 1e-300, num / np.maximum(den, 1e-300), 0.0))
        else:
            tree = cart.fit_newton_tree(X, p - y, h, params)
            leaves = tree.apply(X)
        f = f + cfg.learning_rate * tree.value[leaves, 0]
        trees.append(tree)
    weights = np.full(len(trees), cfg.learning_rate)
    return FittedEnsemble(cfg.kind, cfg, X.shape[1], names, tuple(trees), weights, base)


def fit(config: EnsembleConfig, X, y, feature_names: Sequence[str] | None = None) -> FittedEnsemble:
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("X must be a non-empty matrix aligned with y")
    if np.isnan(X).any():
        raise ValueError("X contains missing values")
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0/1")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length differs from the number of columns")

    if config.kind == "decision_tree":
        return _fit_decision_tree(config, X, y, names)
    if config.kind in FORESTS:
        return _fit_forest(config, X, y, names)
    if config.kind == "max_voting":
        members = tuple(fit(m, X, y, names) for m in config.voters())
        return FittedEnsemble("max_voting", config, X.shape[1], names, members=members)
    if len(np.unique(y)) < 2:
        return _constant_booster(config, X, y, names)
    if config.kind == "adaboost":
        return _fit_adaboost(config, X, y, names)
    return _fit_gradient(config, X, y, names)


def vote(member_predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Hard-vote class-probability matrix from member class predictions."""
    p1 = np.mean(np.column_stack(member_predictions), axis=1)
    return np.column_stack([1.0 - p1, p1])


def predict_proba(model: FittedEnsemble, X) -> np.ndarray:
    return model.predict_proba(X)


def with_seed(config: EnsembleConfig, seed: int) -> EnsembleConfig:
    return replace(config, seed=seed)
