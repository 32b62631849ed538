"""Type-branched preprocessing fitted on training rows only."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tabular import NOMINAL, NUMERICAL, Dataset


@dataclass(frozen=True)
class PreprocessConfig:
    impute_numerical: str = "mean"
    impute_nominal: str = "mode"
    normalize: str = "zscore"

    def __post_init__(self):
        if self.impute_numerical not in ("mean", "median"):
            raise ValueError(f"impute_numerical must be mean or median, got {self.impute_numerical!r}")
        if self.impute_nominal != "mode":
            raise ValueError(f"impute_nominal must be mode, got {self.impute_nominal!r}")
        if self.normalize not in ("zscore", "minmax", "none"):
            raise ValueError(f"normalize must be zscore, minmax or none, got {self.normalize!r}")


@dataclass(frozen=True, eq=False)
class PreprocessPlan:
    """Per input column: fill value, then ``(x - center) / scale``.

    Nominal and ordinal columns keep center 0 and scale 1.
    """

    config: PreprocessConfig
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    fill: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    categories: tuple[tuple[float, ...] | None, ...]

    def transform(self, X: np.ndarray, missing: np.ndarray | None = None) -> np.ndarray:
        X = np.array(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise ValueError(f"expected {len(self.names)} columns, got shape {X.shape}")
        if missing is None:
            missing = np.isnan(X)
        X[missing] = np.broadcast_to(self.fill, X.shape)[missing]
        for j, cats in enumerate(self.categories):
            if cats is None:
                continue
            unseen = ~np.isin(X[:, j], cats)
            if unseen.any():
                warnings.warn(f"{self.names[j]}: unseen categories mapped to mode", stacklevel=2)
                X[unseen, j] = self.fill[j]
        return (X - self.center) / self.scale

    def inverse_numerical(self, j: int, z: np.ndarray) -> np.ndarray:
        """Map model-space values of column ``j`` back to raw units."""
        return np.asarray(z) * self.scale[j] + self.center[j]


def fit_plan(ds: Dataset, train, config: PreprocessConfig = PreprocessConfig()) -> PreprocessPlan:
    train = np.asarray(train, dtype=np.int64)
    if train.size == 0:
        raise ValueError("train rows must be non-empty")
    cols = ds.feature_cols
    X = ds.values[np.ix_(train, cols)]
    M = ds.missing_mask[np.ix_(train, cols)]
    m = len(cols)
    fill, center, scale = np.zeros(m), np.zeros(m), np.ones(m)
    categories = []
    for j, spec in enumerate(ds.feature_specs):
        obs = X[~M[:, j], j]
        if obs.size == 0:
            raise ValueError(f"column {spec.name!r} is entirely missing in the training rows")
        if spec.kind == NUMERICAL:
            fill[j] = obs.mean() if config.impute_numerical == "mean" else np.median(obs)
            full = np.where(M[:, j], fill[j], X[:, j])
            if config.normalize == "zscore":
                center[j] = full.mean()
                sd = full.std()
                scale[j] = sd if sd > 0 else 1.0
            elif config.normalize == "minmax":
                center[j] = full.min()
                rng = full.max() - full.min()
                scale[j] = rng if rng > 0 else 1.0
            categories.append(None)
        else:
            vals, counts = np.unique(obs, return_counts=True)
            fill[j] = vals[np.argmax(counts)]  # ties -> smallest code
            # ordinal columns pass through as integer codes
            categories.append(tuple(vals.tolist()) if spec.kind == NOMINAL else None)
    return PreprocessPlan(
        config=config,
        names=tuple(ds.feature_names),
        kinds=tuple(s.kind for s in ds.feature_specs),
        fill=fill,
        center=center,
        scale=scale,
        categories=tuple(categories),
    )


def apply_plan(plan: PreprocessPlan, ds: Dataset, rows) -> np.ndarray:
    if tuple(ds.feature_names) != plan.names:
        raise ValueError("dataset schema does not match the fitted plan")
    rows = np.asarray(rows, dtype=np.int64)
    cols = ds.feature_cols
    return plan.transform(ds.values[np.ix_(rows, cols)], ds.missing_mask[np.ix_(rows, cols)])
