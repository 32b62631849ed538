"""Typed tabular data: schema, CSV loading, stratified splits and CV folds."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

NUMERICAL = "numerical"
NOMINAL = "nominal"
ORDINAL = "ordinal"
_KINDS = (NUMERICAL, NOMINAL, ORDINAL)


class SchemaError(ValueError):
    """CSV header does not match the expected columns."""


class ParseError(ValueError):
    """A cell could not be coerced to its column type."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    allowed_range: tuple[float, float] | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r} for {self.name!r}")


# Column order follows the public UCI release.
HEART_FAILURE_SCHEMA: tuple[FeatureSpec, ...] = (
    FeatureSpec("age", NUMERICAL, (40.0, 95.0)),
    FeatureSpec("anaemia", NOMINAL, values=(0, 1)),
    FeatureSpec("creatinine_phosphokinase", NUMERICAL, (23.0, 7861.0)),
    FeatureSpec("diabetes", NOMINAL, values=(0, 1)),
    FeatureSpec("ejection_fraction", NUMERICAL, (14.0, 80.0)),
    FeatureSpec("high_blood_pressure", NOMINAL, values=(0, 1)),
    FeatureSpec("platelets", NUMERICAL, (25100.0, 850000.0)),
    FeatureSpec("serum_creatinine", NUMERICAL, (0.5, 9.4)),
    FeatureSpec("serum_sodium", NUMERICAL, (113.0, 148.0)),
    FeatureSpec("sex", NOMINAL, values=(0, 1)),
    FeatureSpec("smoking", NOMINAL, values=(0, 1)),
    FeatureSpec("time", NUMERICAL, (4.0, 285.0)),
    FeatureSpec("DEATH_EVENT", NOMINAL, values=(0, 1)),
)
HEART_FAILURE_TARGET = "DEATH_EVENT"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-typed table. Nominal categories are stored as small integer codes."""

    specs: tuple[FeatureSpec, ...]
    values: np.ndarray
    missing_mask: np.ndarray
    target_col: int
    category_codes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.specs):
            raise ValueError("values must be n_rows x n_specs")
        if self.values.shape != self.missing_mask.shape:
            raise ValueError("missing_mask shape differs from values")
        if self.values.shape[0] == 0:
            raise ValueError("no data rows")
        if self.missing_mask[:, self.target_col].any():
            raise ValueError("target column has missing entries")
        t = self.values[:, self.target_col]
        if not np.isin(t, (0.0, 1.0)).all():
            raise ValueError("target column must be binary 0/1")
        self.values.setflags(write=False)
        self.missing_mask.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def feature_cols(self) -> list[int]:
        return [j for j in range(len(self.specs)) if j != self.target_col]

    @property
    def feature_specs(self) -> list[FeatureSpec]:
        return [self.specs[j] for j in self.feature_cols]

    @property
    def feature_names(self) -> list[str]:
        return [s.name for s in self.feature_specs]

    @property
    def X(self) -> np.ndarray:
        return self.values[:, self.feature_cols]

    @property
    def y(self) -> np.ndarray:
        return self.values[:, self.target_col].astype(np.int64)

    def class_counts(self) -> dict[int, int]:
        y = self.y
        return {c: int((y == c).sum()) for c in (0, 1)}

    def drop(self, names: Sequence[str]) -> "Dataset":
        """Return a copy without the named input columns."""
        target = self.specs[self.target_col].name
        unknown = set(names) - {s.name for s in self.specs}
        if unknown:
            raise SchemaError(f"unknown columns: {sorted(unknown)}")
        if target in names:
            raise SchemaError("cannot drop the target column")
        keep = [j for j, s in enumerate(self.specs) if s.name not in names]
        specs = tuple(self.specs[j] for j in keep)
        return Dataset(
            specs,
            self.values[:, keep].copy(),
            self.missing_mask[:, keep].copy(),
            [s.name for s in specs].index(target),
            {k: v for k, v in self.category_codes.items() if k not in names},
        )

    def summary(self) -> list[dict]:
        """Per-column description: range/mean/std for numerical, counts for nominal."""
        rows = []
        for j, s in enumerate(self.specs):
            col = self.values[~self.missing_mask[:, j], j]
            row = {"feature": s.name, "kind": s.kind, "missing": int(self.missing_mask[:, j].sum())}
            if s.kind == NUMERICAL:
                row.update(min=float(col.min()), max=float(col.max()),
                           mean=float(col.mean()), std=float(col.std(ddof=1)) if col.size > 1 else 0.0)
            else:
                vals, counts = np.unique(col, return_counts=True)
                row["counts"] = {str(int(v)): int(c) for v, c in zip(vals, counts)}
            rows.append(row)
        return rows


def _coerce_nominal(raw: str, spec: FeatureSpec, codes: dict[str, int]) -> float:
    try:
        v = float(raw)
    except ValueError:
        # string categories get codes in order of first appearance
        if raw not in codes:
            codes[raw] = len(codes)
        return float(codes[raw])
    if not v.is_integer():
        raise ValueError(f"non-integer category {raw!r}")
    if spec.values is not None and v not in spec.values:
        raise ValueError(f"value {raw!r} not in {spec.values}")
    return v


def load_csv(
    path: str | Path,
    schema: Sequence[FeatureSpec] = HEART_FAILURE_SCHEMA,
    target: str = HEART_FAILURE_TARGET,
) -> Dataset:
    """Read a comma-separated file whose header matches ``schema`` (any order).

    Empty cells become missing. The returned columns follow schema order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        body = [r for r in reader if any(c.strip() for c in r)]

    expected = [s.name for s in schema]
    missing_cols = sorted(set(expected) - set(header))
    extra_cols = sorted(set(header) - set(expected))
    if missing_cols or extra_cols:
        raise SchemaError(f"{path}: missing columns {missing_cols}, unexpected columns {extra_cols}")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicated column names")
    if not body:
        raise ParseError(f"{path}: no data rows")

    pos = {name: header.index(name) for name in expected}
    values = np.zeros((len(body), len(schema)))
    mask = np.zeros((len(body), len(schema)), dtype=bool)
    str_codes: dict[str, dict[str, int]] = {s.name: {} for s in schema}
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for j, spec in enumerate(schema):
            raw = row[pos[spec.name]].strip()
            if raw == "":
                mask[i, j] = True
                values[i, j] = np.nan
                continue
            try:
                if spec.kind == NUMERICAL:
                    values[i, j] = float(raw)
                    if not math.isfinite(values[i, j]):
                        raise ValueError("non-finite")
                else:
                    values[i, j] = _coerce_nominal(raw, spec, str_codes[spec.name])
            except ValueError as exc:
                raise ParseError(
                    f"{path}: row {i + 1}, column {spec.name!r}: cannot parse {raw!r} ({exc})"
                ) from None

    for j, spec in enumerate(schema):
        if spec.kind == NUMERICAL and spec.allowed_range is not None:
            lo, hi = spec.allowed_range
            col = values[~mask[:, j], j]
            if col.size and (col.min() < lo or col.max() > hi):
                warnings.warn(f"{spec.name}: values outside documented range [{lo}, {hi}]", stacklevel=2)

    codes = {k: tuple(v) for k, v in str_codes.items() if v}
    return Dataset(tuple(schema), values, mask, expected.index(target), codes)


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Inverse of :func:`load_csv` (numeric codes are written for nominal columns)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([s.name for s in ds.specs])
        for i in range(ds.n_rows):
            w.writerow(["" if ds.missing_mask[i, j] else repr(float(ds.values[i, j]))
                        for j in range(len(ds.specs))])


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray


def _check_seed(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def stratified_split(ds: Dataset, test_ratio: float, seed: int) -> SplitIndices:
    """Stratified hold-out split.

    Each class gets ``floor(n_c * ratio)`` test rows; the seats left to reach
    ``ceil(n * ratio)`` go to the classes with the largest fractional part
    (ties to the lower class id).
    """
    if not 0.0 <= test_ratio < 1.0:
        raise ValueError(f"test_ratio must be in [0, 1), got {test_ratio}")
    y = ds.y
    classes = np.unique(y)
    n_test = math.ceil(round(len(y) * test_ratio, 9))
    exact = {c: (y == c).sum() * test_ratio for c in classes}
    take = {c: int(math.floor(round(exact[c], 9))) for c in classes}
    spare = n_test - sum(take.values())
    order = sorted(classes, key=lambda c: (-(exact[c] - take[c]), c))
    for c in order[:spare]:
        take[c] += 1

    rng = _check_seed(seed)
    test = []
    for c in classes:
        members = np.flatnonzero(y == c)
        test.extend(rng.permutation(members)[: take[c]])
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(y)), test)
    return SplitIndices(train=train, test=test)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    train: np.ndarray
    assignments: np.ndarray

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (fit_rows, held_out_rows) as dataset row indices."""
        for f in range(self.k):
            yield self.train[self.assignments != f], self.train[self.assignments == f]


def make_folds(train: Sequence[int], labels: Sequence[int], k: int, seed: int) -> FoldPlan:
    """Stratified k-fold assignment over ``train``; ``labels`` aligns with ``train``.

    Members of each class are shuffled and dealt round-robin, continuing the
    deal across classes, so fold sizes and per-class counts differ by at most one.
    """
    train = np.asarray(train, dtype=np.int64)
    labels = np.asarray(labels)
    if len(labels) != len(train):
        raise ValueError("labels must align with train indices")
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(train):
        raise ValueError(f"k={k} exceeds the number of training rows ({len(train)})")
    rng = _check_seed(seed)
    order = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            warnings.warn(f"class {c} has {len(members)} members, fewer than k={k}", stacklevel=2)
        order.extend(rng.permutation(members))
    assignments = np.empty(len(train), dtype=np.int64)
    assignments[np.asarray(order, dtype=np.int64)] = np.arange(len(train)) % k
    return FoldPlan(k=k, train=train, assignments=assignments)
