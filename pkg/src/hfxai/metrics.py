"""Confusion-matrix metrics and the interpretability / fidelity / FIR triple."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

METRIC_NAMES = ("accuracy", "balanced_accuracy", "sensitivity", "specificity", "precision", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with class 1 (death event) as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(int)
        p = np.asarray(y_pred).astype(int)
        if t.shape != p.shape:
            raise ValueError("y_true and y_pred differ in shape")
        return cls(
            tp=int(((t == 1) & (p == 1)).sum()),
            tn=int(((t == 0) & (p == 0)).sum()),
            fp=int(((t == 0) & (p == 1)).sum()),
            fn=int(((t == 1) & (p == 0)).sum()),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    balanced_accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    # metrics whose denominator was zero (reported as 0)
    degenerate: tuple[str, ...] = ()
    # True for fold means, where f1 is not the harmonic mean of the averaged precision/sensitivity
    aggregated: bool = False

    def __getitem__(self, name: str) -> float:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_NAMES}
        d["degenerate"] = list(self.degenerate)
        return d


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    flags: list[str] = []
    acc = (cm.tp + cm.tn) / cm.total
    sens = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", flags)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "specificity", flags)
    prec = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    f1 = _ratio(2 * prec * sens, prec + sens, "f1", flags)
    return MetricsReport(acc, (sens + spec) / 2, sens, spec, prec, f1, tuple(flags))


def mean_metrics(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of per-fold reports."""
    if not reports:
        raise ValueError("no reports to average")
    vals = {k: float(np.mean([r[k] for r in reports])) for k in METRIC_NAMES}
    flags = sorted({f for r in reports for f in r.degenerate})
    return MetricsReport(**vals, degenerate=tuple(flags), aggregated=True)


@dataclass(frozen=True)
class ExplainabilityScore:
    interpretability: float
    fidelity: float
    fir: float

    def to_dict(self) -> dict:
        return asdict(self)


def interpretability(selected: int, total: int) -> float:
    """Share of input features masked away by selection."""
    if total <= 0 or not 0 <= selected <= total:
        raise ValueError(f"need 0 <= selected <= total and total > 0, got {selected}/{total}")
    return (total - selected) / total


def fir(fidelity: float, interp: float) -> float:
    if fidelity + interp <= 0:
        raise ValueError("FIR undefined when fidelity and interpretability are both zero")
    return fidelity / (fidelity + interp)


def explainability_score(selected: int, total: int, bacc_baseline_tree: float,
                         bacc_model: float) -> ExplainabilityScore:
    """Fidelity is the interpretable tree's score over the model's score."""
    if bacc_model == 0:
        raise ZeroDivisionError("fidelity undefined: model balanced accuracy is 0")
    i = interpretability(selected, total)
    f = bacc_baseline_tree / bacc_model
    return ExplainabilityScore(i, f, fir(f, i))
