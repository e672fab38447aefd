"""
Confusion matrices, per-class and averaged F1 scores, and the Mann-Whitney U
rank test used to compare fold scores of two models.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .exceptions import StructuralError

logger = logging.getLogger(__name__)

EXACT_LIMIT = 400


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""
    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        if self.counts.shape != other.counts.shape:
            raise StructuralError(f'Cannot add confusion matrices {self.counts.shape} and {other.counts.shape}')
        return ConfusionMatrix(self.counts + other.counts)

    def as_list(self) -> list:
        return self.counts.astype(int).tolist()


@dataclass
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_f1: float
    macro_f1: float
    accuracy: float
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            'precision': [float(v) for v in self.precision],
            'recall': [float(v) for v in self.recall],
            'f1': [float(v) for v in self.f1],
            'support': [int(v) for v in self.support],
            'weighted_f1': self.weighted_f1,
            'macro_f1': self.macro_f1,
            'accuracy': self.accuracy,
            'flags': list(self.flags),
        }


class ClassAccuracy(NamedTuple):
    values: np.ndarray
    empty_classes: list


def confusion(truths, predictions, n_classes: int) -> ConfusionMatrix:
    truths = np.asarray(truths, dtype=np.int64).ravel()
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    if truths.shape != predictions.shape:
        raise StructuralError(f'{truths.size} true labels but {predictions.size} predictions')
    for name, labels in (('true', truths), ('predicted', predictions)):
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise StructuralError(f'{name} label outside 0..{n_classes - 1}')
    counts = np.bincount(truths * n_classes + predictions, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def _safe_ratio(numerator, denominator, name: str, flags: list) -> np.ndarray:
    out = np.zeros(numerator.shape, dtype=np.float64)
    defined = denominator > 0
    out[defined] = numerator[defined] / denominator[defined]
    flags.extend(f'{name}[{c}]' for c in np.flatnonzero(~defined))
    return out


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """
    Undefined precision or recall (zero denominator) is reported as 0 and
    flagged. Weighted F1 averages by true-class support; macro F1 averages over
    the classes that occur in either the truth or the predictions.
    """
    counts = cm.counts.astype(np.float64)
    flags = []
    if cm.total == 0:
        flags.append('empty')
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _safe_ratio(tp, predicted, 'precision', flags)
    recall = _safe_ratio(tp, support, 'recall', flags)
    f1 = np.zeros_like(tp)
    both = (precision + recall) > 0
    f1[both] = 2 * precision[both] * recall[both] / (precision[both] + recall[both])

    weighted = float((support * f1).sum() / support.sum()) if support.sum() else 0.0
    present = (support + predicted) > 0
    macro = float(f1[present].mean()) if present.any() else 0.0
    accuracy = float(tp.sum() / counts.sum()) if counts.sum() else 0.0
    return ClassReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support.astype(np.int64),
        weighted_f1=weighted,
        macro_f1=macro,
        accuracy=accuracy,
        flags=flags,
    )


def per_class_accuracy(cm: ConfusionMatrix) -> ClassAccuracy:
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1)
    values = np.zeros(cm.n_classes)
    values[rows > 0] = np.diag(counts)[rows > 0] / rows[rows > 0]
    return ClassAccuracy(values, [int(c) for c in np.flatnonzero(rows == 0)])


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    u_a: float
    u_b: float
    p_value: float
    method: str
    flags: tuple = ()

    def as_dict(self) -> dict:
        return {
            'u': self.u,
            'u_a': self.u_a,
            'u_b': self.u_b,
            'p_value': self.p_value,
            'method': self.method,
            'flags': list(self.flags),
        }


def _exact_p(doubled_ranks: np.ndarray, n_a: int, u_a_doubled: int) -> float:
    """
    Two-sided permutation p-value of U_a. The rank-sum distribution of every
    n_a-subset of the pooled (doubled, so integer) midranks is built by DP.
    """
    n_b = doubled_ranks.size - n_a
    top = int(doubled_ranks.sum())
    ways = np.zeros((n_a + 1, top + 1), dtype=np.float64)
    ways[0, 0] = 1.0
    for r in doubled_ranks:
        ways[1:, r:] = ways[1:, r:] + ways[:-1, :top + 1 - r]
    distribution = ways[n_a]
    sums = np.arange(top + 1)
    u_doubled = sums - n_a * (n_a + 1)
    center = n_a * n_b
    extreme = np.abs(u_doubled - center) >= abs(u_a_doubled - center)
    return float(min(1.0, distribution[extreme].sum() / distribution.sum()))


def mann_whitney_u(scores_a, scores_b) -> MannWhitneyResult:
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise StructuralError('Mann-Whitney U needs two nonempty samples')
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u_a = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2)
    u_b = float(n_a * n_b - u_a)
    u = min(u_a, u_b)

    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(u, u_a, u_b, 1.0, 'degenerate', ('zero_variance',))

    if n_a * n_b <= EXACT_LIMIT:
        doubled = np.rint(2 * ranks).astype(np.int64)
        u_a_doubled = int(doubled[:n_a].sum()) - n_a * (n_a + 1)
        return MannWhitneyResult(u, u_a, u_b, _exact_p(doubled, n_a, u_a_doubled), 'exact')

    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float((tie_counts ** 3 - tie_counts).sum()) / (n * (n - 1))
    sigma = np.sqrt(n_a * n_b / 12.0 * ((n + 1) - tie_term))
    z = max(abs(u_a - n_a * n_b / 2.0) - 0.5, 0.0) / sigma
    p_value = float(min(1.0, 2 * stats.norm.sf(z)))
    return MannWhitneyResult(u, u_a, u_b, p_value, 'normal')
