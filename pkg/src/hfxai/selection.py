"""Filter and wrapper feature selection for binary targets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FILTER_METHODS = ("anova", "chi2", "mutual_info")
MI_BINS = 10

# RFE estimator settings
RFE_LEARNING_RATE = 0.1
RFE_ITERATIONS = 500
RFE_L2 = 1.0


@dataclass(frozen=True)
class FeatureScore:
    feature: str
    method: str
    score: float
    rank: int


@dataclass(frozen=True)
class SelectionResult:
    method: str
    k: int
    selected: tuple[str, ...]
    masked: tuple[str, ...]


def _default_names(m: int) -> list[str]:
    return [f"x{j}" for j in range(m)]


def anova_f(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """One-way ANOVA F statistic per column (classes as groups)."""
    classes = np.unique(y)
    n, k = len(y), len(classes)
    grand = X.mean(axis=0)
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for c in classes:
        Xc = X[y == c]
        mu = Xc.mean(axis=0)
        ss_between += len(Xc) * (mu - grand) ** 2
        ss_within += ((Xc - mu) ** 2).sum(axis=0)
    if k < 2 or n <= k:
        return np.zeros(X.shape[1])
    msb = ss_between / (k - 1)
    msw = ss_within / (n - k)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(msw > 0, msb / msw, np.where(msb > 0, np.inf, 0.0))
    return f


def chi2_stat(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Chi-squared statistic of per-class feature sums against class priors."""
    if (X < 0).any():
        raise ValueError("chi2 requires nonnegative feature values")
    classes = np.unique(y)
    observed = np.stack([X[y == c].sum(axis=0) for c in classes])
    priors = np.array([(y == c).mean() for c in classes])
    expected = priors[:, None] * X.sum(axis=0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def discretize(col: np.ndarray, bins: int = MI_BINS) -> np.ndarray:
    """Equal-frequency bin codes; columns with at most ``bins`` distinct values are kept as is."""
    uniq = np.unique(col)
    if len(uniq) <= bins:
        return np.searchsorted(uniq, col)
    edges = np.unique(np.quantile(col, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, col, side="right")


def mutual_info(X: np.ndarray, y: np.ndarray, bins: int = MI_BINS) -> np.ndarray:
    """Plug-in mutual information in nats between each discretized column and ``y``."""
    _, yc = np.unique(y, return_inverse=True)
    n = len(y)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        xc = discretize(X[:, j], bins)
        joint = np.zeros((xc.max() + 1, yc.max() + 1))
        np.add.at(joint, (xc, yc), 1.0)
        joint /= n
        px = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        nz = joint > 0
        out[j] = max(0.0, float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum()))
    return out


def rank_scores(scores: np.ndarray, names: Sequence[str], method: str) -> list[FeatureScore]:
    """Rank by descending score, ties by ascending name."""
    order = sorted(range(len(names)), key=lambda j: (-scores[j], names[j]))
    ranks = np.empty(len(names), dtype=int)
    ranks[order] = np.arange(1, len(names) + 1)
    return [FeatureScore(names[j], method, float(scores[j]), int(ranks[j])) for j in range(len(names))]


def score_features(X, y, method: str, names: Sequence[str] | None = None) -> list[FeatureScore]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    names = list(names) if names is not None else _default_names(X.shape[1])
    if method not in FILTER_METHODS:
        raise ValueError(f"unknown scoring method {method!r}; expected one of {FILTER_METHODS}")
    constant = np.ptp(X, axis=0) == 0 if len(X) else np.ones(X.shape[1], bool)
    if constant.any():
        warnings.warn(f"zero-variance columns scored 0: {[names[j] for j in np.flatnonzero(constant)]}",
                      stacklevel=2)
    if method == "anova":
        s = anova_f(X, y)
    elif method == "chi2":
        s = chi2_stat(X, y)
    else:
        s = mutual_info(X, y)
    s = np.where(constant, 0.0, s)
    return rank_scores(s, names, method)


def select_top_k(scores: Sequence[FeatureScore], k: int) -> SelectionResult:
    m = len(scores)
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    ordered = sorted(scores, key=lambda s: s.rank)
    return SelectionResult(
        method=ordered[0].method,
        k=k,
        selected=tuple(s.feature for s in ordered[:k]),
        masked=tuple(s.feature for s in ordered[k:]),
    )


def fit_logistic(X: np.ndarray, y: np.ndarray, lr: float = RFE_LEARNING_RATE,
                 iterations: int = RFE_ITERATIONS, l2: float = RFE_L2) -> tuple[np.ndarray, float, float]:
    """Batch gradient descent on mean log-loss + l2/(2n) * ||w||^2 (intercept unpenalized).

    Returns (weights, intercept, final gradient norm).
    """
    n, m = X.shape
    w = np.zeros(m)
    b = 0.0
    gnorm = np.inf
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
        r = p - y
        gw = (X.T @ r + l2 * w) / n
        gb = r.mean()
        w -= lr * gw
        b -= lr * gb
        gnorm = float(np.sqrt(gw @ gw + gb * gb))
    return w, b, gnorm


def rfe_order(X, y, names: Sequence[str] | None = None) -> list[str]:
    """Elimination order of recursive feature elimination, weakest first.

    The last entry is the feature that survives alone.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names) if names is not None else _default_names(X.shape[1])
    sd = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    alive = list(range(X.shape[1]))
    eliminated: list[str] = []
    while len(alive) > 1:
        w, _, gnorm = fit_logistic(Z[:, alive], y)
        if gnorm > 1e-2:
            warnings.warn(f"RFE estimator did not converge (gradient norm {gnorm:.3g})", RuntimeWarning,
                          stacklevel=2)
        mag = np.abs(w)
        tol = 1e-12 * max(1.0, float(mag.max()))
        weakest = [alive[i] for i in range(len(alive)) if mag[i] <= mag.min() + tol]
        drop = min(weakest, key=lambda j: names[j])
        alive.remove(drop)
        eliminated.append(names[drop])
    eliminated.extend(names[j] for j in alive)
    return eliminated


def rfe_select(X, y, k: int, names: Sequence[str] | None = None) -> SelectionResult:
    X = np.asarray(X, dtype=float)
    names = list(names) if names is not None else _default_names(X.shape[1])
    m = len(names)
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if k == m:
        return SelectionResult("rfe", k, tuple(names), ())
    order = rfe_order(X, y, names)
    return selection_from_order(order, k, names)


def selection_from_order(order: Sequence[str], k: int, names: Sequence[str]) -> SelectionResult:
    """Keep the ``k`` last-eliminated features; output preserves column order."""
    keep = set(order[len(order) - k:])
    return SelectionResult(
        "rfe", k,
        tuple(n for n in names if n in keep),
        tuple(n for n in names if n not in keep),
    )
