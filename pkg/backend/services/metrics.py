"""
Metrics - Confusion matrix and derived binary-classification metrics
Fertile is the positive class. A metric whose denominator is zero is
undefined and renders as "NaN".
"""

import math
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field
from sklearn.metrics import confusion_matrix, roc_auc_score

from .data_core import Label
from .errors import EmptyInput, InputMismatch

ClassLike = Union[Label, str, int]


class MetricValue(BaseModel):
    """A metric in [0, 1], or undefined when value is None"""

    model_config = ConfigDict(frozen=True)

    value: Optional[float] = None

    @computed_field
    @property
    def defined(self) -> bool:
        return self.value is not None

    @classmethod
    def ratio(cls, numerator: int, denominator: int) -> "MetricValue":
        if denominator == 0:
            return UNDEFINED
        return cls(value=numerator / denominator)

    def render(self, digits: int = 2) -> str:
        """Table form: 'NaN', or the value rounded with trailing zeros dropped"""
        if self.value is None:
            return "NaN"
        text = f"{self.value:.{digits}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text


UNDEFINED = MetricValue()


class ConfusionMatrix(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = Field(0, ge=0)
    tn: int = Field(0, ge=0)
    fp: int = Field(0, ge=0)
    fn: int = Field(0, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swap_positive(self) -> "ConfusionMatrix":
        """Same matrix with infertile as the positive class"""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


class MetricsReport(BaseModel):
    """Every metric for one evaluated sample set; dumps to the metrics.json schema"""

    model_config = ConfigDict(frozen=True)

    backbone: str = ""
    split: str = ""
    n: int = Field(..., ge=0)
    cm: ConfusionMatrix
    auc: MetricValue = UNDEFINED
    accuracy: MetricValue = UNDEFINED
    recall: MetricValue = UNDEFINED
    specificity: MetricValue = UNDEFINED
    precision: MetricValue = UNDEFINED
    f1: MetricValue = UNDEFINED
    npv: MetricValue = UNDEFINED

    @property
    def sensitivity(self) -> MetricValue:
        return self.recall


def _as_label(value: ClassLike) -> Label:
    if isinstance(value, Label):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        if value not in (0, 1):
            raise InputMismatch(f"Class index must be 0 or 1, got {value}")
        return Label.from_index(int(value))
    try:
        return Label(str(value))
    except ValueError as e:
        raise InputMismatch(f"Unknown class '{value}'") from e


def _indices(values: Sequence[ClassLike]) -> np.ndarray:
    return np.array([_as_label(v).index for v in values], dtype=np.int64)


def _check_lengths(first: Sequence, second: Sequence, what: str) -> None:
    if len(first) != len(second):
        raise InputMismatch(f"{what}: lengths differ ({len(first)} vs {len(second)})")


def confusion(labels: Sequence[ClassLike], predictions: Sequence[ClassLike]) -> ConfusionMatrix:
    """
    Count the four confusion cells with fertile as positive

    Raises:
        InputMismatch: Length mismatch or unknown class
        EmptyInput: No samples
    """
    _check_lengths(labels, predictions, "labels/predictions")
    if len(labels) == 0:
        raise EmptyInput("Cannot build a confusion matrix from zero samples")
    cells = confusion_matrix(
        _indices(labels), _indices(predictions),
        labels=[Label.INFERTILE.index, Label.FERTILE.index],
    )
    tn, fp, fn, tp = (int(v) for v in cells.ravel())
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def accuracy(cm: ConfusionMatrix) -> MetricValue:
    return MetricValue.ratio(cm.tp + cm.tn, cm.total)


def sensitivity(cm: ConfusionMatrix) -> MetricValue:
    return MetricValue.ratio(cm.tp, cm.tp + cm.fn)


recall = sensitivity


def specificity(cm: ConfusionMatrix) -> MetricValue:
    return MetricValue.ratio(cm.tn, cm.tn + cm.fp)


def precision(cm: ConfusionMatrix) -> MetricValue:
    return MetricValue.ratio(cm.tp, cm.tp + cm.fp)


def negative_predictive_value(cm: ConfusionMatrix) -> MetricValue:
    return MetricValue.ratio(cm.tn, cm.tn + cm.fn)


def f1_score(cm: ConfusionMatrix) -> MetricValue:
    """Harmonic mean of precision and recall, 2TP / (2TP + FP + FN)"""
    return MetricValue.ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)


def auc(labels: Sequence[ClassLike], scores: Sequence[float]) -> MetricValue:
    """
    Area under the ROC curve

    Tied scores share one threshold and so contribute half credit, which
    equals the tie-adjusted concordance probability. Undefined when either
    class is absent.

    Args:
        labels: True classes
        scores: Fertile-class probabilities in [0, 1]

    Raises:
        InputMismatch: Length mismatch or score outside [0, 1]
    """
    _check_lengths(labels, scores, "labels/scores")
    y_score = np.asarray(scores, dtype=np.float64)
    if y_score.size and (not np.all(np.isfinite(y_score)) or y_score.min() < 0.0 or y_score.max() > 1.0):
        raise InputMismatch("Scores must lie in [0, 1]")
    y_true = _indices(labels)
    if np.unique(y_true).size < 2:
        return UNDEFINED
    area = float(roc_auc_score(y_true, y_score))
    return MetricValue(value=min(1.0, max(0.0, area)))


def evaluate(
    labels: Sequence[ClassLike],
    predictions: Sequence[ClassLike],
    scores: Optional[Sequence[float]] = None
) -> MetricsReport:
    """
    Assemble every metric for one evaluated sample set

    Args:
        labels: True classes
        predictions: Predicted classes
        scores: Fertile-class probabilities (auc is undefined without them)
    """
    cm = confusion(labels, predictions)
    area = UNDEFINED
    if scores is not None:
        _check_lengths(labels, scores, "labels/scores")
        area = auc(labels, scores)
    return MetricsReport(
        n=cm.total,
        cm=cm,
        auc=area,
        accuracy=accuracy(cm),
        recall=sensitivity(cm),
        specificity=specificity(cm),
        precision=precision(cm),
        f1=f1_score(cm),
        npv=negative_predictive_value(cm),
    )


def _defined_values(values: Iterable[Union[MetricValue, Optional[float]]], skip_undefined: bool) -> Optional[List[float]]:
    """Plain floats, or None when an undefined entry poisons the aggregate"""
    collected: List[float] = []
    for item in values:
        value = item.value if isinstance(item, MetricValue) else item
        if value is None or (isinstance(value, float) and math.isnan(value)):
            if skip_undefined:
                continue
            return None
        collected.append(float(value))
    return collected or None


def aggregate_mean(values: Iterable[Union[MetricValue, Optional[float]]], skip_undefined: bool = False) -> MetricValue:
    """
    Arithmetic mean with undefined propagation

    Any undefined entry makes the mean undefined unless skip_undefined is set,
    in which case undefined entries are dropped.
    """
    collected = _defined_values(values, skip_undefined)
    if collected is None:
        return UNDEFINED
    return MetricValue(value=math.fsum(collected) / len(collected))


def aggregate_std(values: Iterable[Union[MetricValue, Optional[float]]], skip_undefined: bool = False) -> MetricValue:
    """Population standard deviation with the same undefined rule as aggregate_mean"""
    collected = _defined_values(values, skip_undefined)
    if collected is None:
        return UNDEFINED
    mean = math.fsum(collected) / len(collected)
    return MetricValue(value=math.sqrt(math.fsum((v - mean) ** 2 for v in collected) / len(collected)))
