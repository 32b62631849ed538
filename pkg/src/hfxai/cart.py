"""Binary CART trees: Gini classification plus the regression variants boosting needs.

Thresholds sit at midpoints of consecutive distinct values (or one uniform
random cut per candidate feature in ``random_split`` mode) and ``x <= t``
routes left. Split ties go to the lower feature index, then the lower threshold.
An impure Gini node is split even when the best decrease is zero, so a fully
grown tree separates any duplicate-free training set.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

GINI, MSE, NEWTON = 0, 1, 2
_CRITERIA = {"gini": GINI, "mse": MSE, "newton": NEWTON}
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_features: int | None = None
    random_split: bool = False
    seed: int = 0
    # second-order (newton) criterion only
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1 or self.min_samples_split < 2:
            raise ValueError("min_samples_leaf >= 1 and min_samples_split >= 2 required")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@njit(cache=True)
def _gain(mode, a_l, b_l, c_l, a_r, b_r, c_r, a, b, lam, gamma):
    if mode == GINI:
        # a = weight, b = weighted positives
        l0 = a_l - b_l
        r0 = a_r - b_r
        t0 = a - b
        return (l0 * l0 + b_l * b_l) / a_l + (r0 * r0 + b_r * b_r) / a_r - (t0 * t0 + b * b) / a
    elif mode == MSE:
        # a = weight, b = weighted target sum
        return b_l * b_l / a_l + b_r * b_r / a_r - b * b / a
    else:
        # a = gradient sum, b = hessian sum
        return 0.5 * (a_l * a_l / (b_l + lam) + a_r * a_r / (b_r + lam) - a * a / (b + lam)) - gamma


@njit(cache=True)
def _child_ok(mode, n_l, n_r, b_l, b_r, min_leaf, min_child_weight):
    if n_l < min_leaf or n_r < min_leaf:
        return False
    if mode == NEWTON and (b_l < min_child_weight or b_r < min_child_weight):
        return False
    return True


@njit(cache=True)
def _grow(X, sa, sb, mode, max_depth, min_split, min_leaf, max_features, random_split,
          seed, lam, gamma, min_child_weight, min_gain):
    n, m = X.shape
    np.random.seed(seed)
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    n_node = np.zeros(cap, np.int64)
    sum_a = np.zeros(cap)
    sum_b = np.zeros(cap)
    gain_out = np.zeros(cap)
    depth_out = np.zeros(cap, np.int64)

    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    lo = np.empty(m)
    hi = np.empty(m)
    cand = np.empty(m, np.int64)

    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_start[top]
        e = st_end[top]
        d = st_depth[top]
        cnt = e - s
        a_tot = 0.0
        b_tot = 0.0
        for p in range(s, e):
            a_tot += sa[idx[p]]
            b_tot += sb[idx[p]]
        n_node[node] = cnt
        sum_a[node] = a_tot
        sum_b[node] = b_tot
        depth_out[node] = d

        if cnt < min_split or cnt < 2 * min_leaf:
            continue
        if max_depth >= 0 and d >= max_depth:
            continue
        if mode == GINI and (b_tot <= 0.0 or b_tot >= a_tot):
            continue

        # non-constant features at this node
        n_cand = 0
        for f in range(m):
            mn = X[idx[s], f]
            mx = mn
            for p in range(s + 1, e):
                v = X[idx[p], f]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            lo[f] = mn
            hi[f] = mx
            if mx > mn:
                cand[n_cand] = f
                n_cand += 1
        if n_cand == 0:
            continue
        if max_features > 0 and max_features < n_cand:
            perm = np.random.permutation(n_cand)
            chosen = np.sort(cand[:n_cand][perm[:max_features]])
        else:
            chosen = cand[:n_cand].copy()

        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        vals = np.empty(cnt)
        for f in chosen:
            for p in range(cnt):
                vals[p] = X[idx[s + p], f]
            if random_split:
                t = lo[f] + np.random.random() * (hi[f] - lo[f])
                if t >= hi[f]:
                    t = lo[f]
                a_l = 0.0
                b_l = 0.0
                n_l = 0
                for p in range(cnt):
                    if vals[p] <= t:
                        r = idx[s + p]
                        a_l += sa[r]
                        b_l += sb[r]
                        n_l += 1
                a_r = a_tot - a_l
                b_r = b_tot - b_l
                n_r = cnt - n_l
                if not _child_ok(mode, n_l, n_r, b_l, b_r, min_leaf, min_child_weight):
                    continue
                if mode != NEWTON and (a_l <= 0.0 or a_r <= 0.0):
                    continue
                g = _gain(mode, a_l, b_l, 0.0, a_r, b_r, 0.0, a_tot, b_tot, lam, gamma)
                if best_f < 0 or g > best_gain + _TIE_RTOL * abs(best_gain) + min_gain:
                    best_gain = g
                    best_f = f
                    best_t = t
            else:
                order = np.argsort(vals, kind="mergesort")
                a_l = 0.0
                b_l = 0.0
                for q in range(cnt - 1):
                    r = idx[s + order[q]]
                    a_l += sa[r]
                    b_l += sb[r]
                    v0 = vals[order[q]]
                    v1 = vals[order[q + 1]]
                    if not v0 < v1:
                        continue
                    n_l = q + 1
                    n_r = cnt - n_l
                    a_r = a_tot - a_l
                    b_r = b_tot - b_l
                    if not _child_ok(mode, n_l, n_r, b_l, b_r, min_leaf, min_child_weight):
                        continue
                    if mode != NEWTON and (a_l <= 0.0 or a_r <= 0.0):
                        continue
                    g = _gain(mode, a_l, b_l, 0.0, a_r, b_r, 0.0, a_tot, b_tot, lam, gamma)
                    if best_f < 0 or g > best_gain + _TIE_RTOL * abs(best_gain) + min_gain:
                        t = 0.5 * (v0 + v1)
                        if t >= v1:
                            t = v0
                        best_gain = g
                        best_f = f
                        best_t = t

        if best_f < 0:
            continue
        # impure Gini nodes may take zero-gain splits (XOR-like layouts)
        if mode == GINI:
            if best_gain < -min_gain:
                continue
        elif best_gain <= min_gain:
            continue

        # stable partition: rows with x <= t first
        nl = 0
        nr = 0
        for p in range(s, e):
            r = idx[p]
            if X[r, best_f] <= best_t:
                idx[s + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for p in range(nr):
            idx[s + nl + p] = buf[p]

        feature[node] = best_f
        threshold[node] = best_t
        gain_out[node] = best_gain
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is grown first
        st_node[top] = ri
        st_start[top] = s + nl
        st_end[top] = e
        st_depth[top] = d + 1
        top += 1
        st_node[top] = li
        st_start[top] = s
        st_end[top] = s + nl
        st_depth[top] = d + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            n_node[:n_nodes], sum_a[:n_nodes], sum_b[:n_nodes], gain_out[:n_nodes], depth_out[:n_nodes])


@njit(cache=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True, eq=False)
class FittedTree:
    """Node arrays of a fitted tree; node 0 is the root, ``feature == -1`` marks leaves.

    ``value`` holds class probabilities (classification) or the leaf output
    in its first column (regression). ``weight`` is the weighted node size
    (hessian sum for the newton criterion) and ``gain`` the split improvement.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    weight: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    depth: np.ndarray
    n_features: int
    criterion: str
    params: TreeParams

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def apply(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return _apply(self.feature, self.threshold, self.left, self.right, X)

    def class_counts(self) -> np.ndarray:
        """Weighted per-class totals per node (classification trees)."""
        return self.value * self.weight[:, None]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            nodes.append({
                "id": i,
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "left": int(self.left[i]),
                "right": int(self.right[i]),
                "samples": int(self.n_samples[i]),
                "weight": float(self.weight[i]),
                "value": [float(v) for v in self.value[i]],
                "gain": float(self.gain[i]),
                "depth": int(self.depth[i]),
            })
        return {"criterion": self.criterion, "n_features": self.n_features,
                "params": asdict(self.params), "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "FittedTree":
        nodes = d["nodes"]
        col = lambda key, dtype: np.array([nd[key] for nd in nodes], dtype=dtype)  # noqa: E731
        return cls(
            feature=col("feature", np.int64), threshold=col("threshold", float),
            left=col("left", np.int64), right=col("right", np.int64),
            n_samples=col("samples", np.int64), weight=col("weight", float),
            value=np.array([nd["value"] for nd in nodes], dtype=float),
            gain=col("gain", float), depth=col("depth", np.int64),
            n_features=int(d["n_features"]), criterion=d["criterion"],
            params=TreeParams(**d["params"]),
        )


def _as_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(f"expected rows with {n_features} features, got shape {X.shape}")
    return np.ascontiguousarray(X)


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("counts must not all be zero")
    p = counts / total
    return float(1.0 - (p * p).sum())


def split_gain(counts_left, counts_right) -> float:
    """Weighted Gini decrease of a split, as a fraction of the parent weight."""
    cl = np.asarray(counts_left, dtype=float)
    cr = np.asarray(counts_right, dtype=float)
    wl, wr = cl.sum(), cr.sum()
    w = wl + wr
    return gini(cl + cr) - wl / w * gini(cl) - wr / w * gini(cr)


def _grow_tree(X, sa, sb, criterion: str, params: TreeParams) -> tuple:
    mode = _CRITERIA[criterion]
    if mode == GINI:
        scale = sa.sum()
    elif mode == MSE:
        scale = float((sb * sb / np.where(sa > 0, sa, 1.0)).sum())
    else:
        scale = float(np.abs(sa).sum())
    return _grow(
        X, sa, sb, mode,
        -1 if params.max_depth is None else params.max_depth,
        params.min_samples_split, params.min_samples_leaf,
        0 if params.max_features is None else params.max_features,
        params.random_split, params.seed,
        params.reg_lambda, params.gamma, params.min_child_weight,
        1e-12 * max(scale, 1e-300),
    )


def fit_tree(X, y, w=None, params: TreeParams = TreeParams()) -> FittedTree:
    """Gini classification tree for binary labels with optional row weights."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] < 1 or len(y) != X.shape[0]:
        raise ValueError("X must be a non-empty matrix aligned with y")
    if not ((y == 0) | (y == 1)).all():
        raise ValueError("labels must be 0/1")
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise ValueError("total weight is zero")
    keep = w > 0
    if not keep.all():
        X, y, w = np.ascontiguousarray(X[keep]), y[keep], w[keep]
    feat, thr, lft, rgt, n_s, s_a, s_b, gain, depth = _grow_tree(X, w, w * y, "gini", params)
    p1 = s_b / s_a
    value = np.column_stack([1.0 - p1, p1])
    return FittedTree(feat, thr, lft, rgt, n_s, s_a, value, gain, depth, X.shape[1], "gini", params)


def fit_regression_tree(X, target, params: TreeParams = TreeParams()) -> FittedTree:
    """Least-squares regression tree; node values are node means of ``target``."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    target = np.asarray(target, dtype=float)
    w = np.ones(len(target))
    feat, thr, lft, rgt, n_s, s_a, s_b, gain, depth = _grow_tree(X, w, target, "mse", params)
    value = (s_b / s_a)[:, None]
    return FittedTree(feat, thr, lft, rgt, n_s, s_a, value, gain, depth, X.shape[1], "mse", params)


def fit_newton_tree(X, grad, hess, params: TreeParams = TreeParams()) -> FittedTree:
    """Second-order tree: split gain on (G, H) sums, node value ``-G / (H + lambda)``."""
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    feat, thr, lft, rgt, n_s, s_g, s_h, gain, depth = _grow_tree(X, grad, hess, "newton", params)
    value = (-s_g / (s_h + params.reg_lambda))[:, None]
    return FittedTree(feat, thr, lft, rgt, n_s, s_h, value, gain, depth, X.shape[1], "newton", params)


def with_values(tree: FittedTree, value: np.ndarray) -> FittedTree:
    """Copy of ``tree`` with node values replaced."""
    return FittedTree(tree.feature, tree.threshold, tree.left, tree.right, tree.n_samples,
                      tree.weight, np.asarray(value, dtype=float).reshape(tree.node_count, -1),
                      tree.gain, tree.depth, tree.n_features, tree.criterion, tree.params)


def node_indicator(tree: FittedTree, X) -> np.ndarray:
    """Boolean (n_rows, n_nodes) matrix: row i passes through node j."""
    X = _as_matrix(X, tree.n_features)
    ind = np.zeros((X.shape[0], tree.node_count), dtype=bool)
    for i, row in enumerate(X):
        ind[i, decision_path(tree, row)] = True
    return ind


def predict_proba(tree: FittedTree, X) -> np.ndarray:
    """Leaf class frequencies; a single row gives a 1-D vector."""
    single = np.asarray(X).ndim == 1
    out = tree.value[tree.apply(X)]
    return out[0] if single else out


def predict_value(tree: FittedTree, X) -> np.ndarray:
    return tree.value[tree.apply(X), 0]


def decision_path(tree: FittedTree, x) -> list[int]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != tree.n_features:
        raise ValueError(f"expected a row with {tree.n_features} features, got shape {x.shape}")
    node = 0
    path = [0]
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        path.append(int(node))
    return path
