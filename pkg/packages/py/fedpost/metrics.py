"""
Group fairness and performance metrics.

Confusion counts are kept per sensitive group so that equalized-odds
difference, accuracy and balanced accuracy can all be derived from them.
Counts are floats: the post-processing module fills them with expected
counts of a randomized predictor.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import accuracy_score, balanced_accuracy_score, confusion_matrix

from .core.exceptions import FairnessUnmeasurableError, MetricInputError


class GroupConfusion(BaseModel):
    """Confusion counts for one sensitive group."""

    tp: float = Field(default=0.0, ge=0)
    fp: float = Field(default=0.0, ge=0)
    tn: float = Field(default=0.0, ge=0)
    fn: float = Field(default=0.0, ge=0)

    @property
    def positives(self) -> float:
        return self.tp + self.fn

    @property
    def negatives(self) -> float:
        return self.fp + self.tn

    @property
    def total(self) -> float:
        return self.positives + self.negatives

    def __add__(self, other: "GroupConfusion") -> "GroupConfusion":
        return GroupConfusion(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )


class GroupRates(BaseModel):
    """Per-group confusion counts with TPR/FPR accessors.

    Rates raise :class:`FairnessUnmeasurableError` when the group has no
    positives (TPR) or no negatives (FPR).
    """

    group0: GroupConfusion = Field(default_factory=GroupConfusion)
    group1: GroupConfusion = Field(default_factory=GroupConfusion)

    def group(self, a: int) -> GroupConfusion:
        if a not in (0, 1):
            raise MetricInputError(f"Sensitive group must be 0 or 1, got {a}")
        return self.group1 if a == 1 else self.group0

    def tpr(self, a: int) -> float:
        g = self.group(a)
        if g.positives == 0:
            raise FairnessUnmeasurableError(a, "positives")
        return g.tp / g.positives

    def fpr(self, a: int) -> float:
        g = self.group(a)
        if g.negatives == 0:
            raise FairnessUnmeasurableError(a, "negatives")
        return g.fp / g.negatives

    @property
    def tpr_0(self) -> float:
        return self.tpr(0)

    @property
    def tpr_1(self) -> float:
        return self.tpr(1)

    @property
    def fpr_0(self) -> float:
        return self.fpr(0)

    @property
    def fpr_1(self) -> float:
        return self.fpr(1)

    @property
    def total(self) -> float:
        return self.group0.total + self.group1.total

    def require_measurable(self) -> None:
        """Raise for the first empty (group, label) cell, group 0 first."""
        for a in (0, 1):
            g = self.group(a)
            if g.positives == 0:
                raise FairnessUnmeasurableError(a, "positives")
            if g.negatives == 0:
                raise FairnessUnmeasurableError(a, "negatives")

    def combine(self, other: "GroupRates") -> "GroupRates":
        return GroupRates(group0=self.group0 + other.group0, group1=self.group1 + other.group1)

    def swapped(self) -> "GroupRates":
        return GroupRates(group0=self.group1, group1=self.group0)


def _as_binary(values: Iterable[int], name: str) -> np.ndarray:
    arr = np.asarray(values).reshape(-1)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise MetricInputError(f"{name} must be binary {{0,1}}")
    return arr.astype(np.int64)


def _check_lengths(*arrays: np.ndarray) -> None:
    if len({len(a) for a in arrays}) != 1:
        raise MetricInputError(f"Length mismatch: {[len(a) for a in arrays]}")
    if len(arrays[0]) == 0:
        raise MetricInputError("Metric inputs are empty")


def confusion_by_group(
    predictions: Sequence[int],
    labels: Sequence[int],
    attrs: Sequence[int],
    *,
    strict: bool = True,
) -> GroupRates:
    """Exact confusion counts per sensitive group.

    With ``strict`` a group lacking positives or negatives raises
    :class:`FairnessUnmeasurableError`; otherwise the counts are returned
    and the rate accessors raise lazily.
    """
    y_hat = _as_binary(predictions, "predictions")
    y = _as_binary(labels, "labels")
    a = _as_binary(attrs, "attrs")
    _check_lengths(y_hat, y, a)

    groups = {}
    for group in (0, 1):
        mask = a == group
        if mask.any():
            (tn, fp), (fn, tp) = confusion_matrix(y[mask], y_hat[mask], labels=[0, 1])
        else:
            tn = fp = fn = tp = 0
        groups[group] = GroupConfusion(tp=float(tp), fp=float(fp), tn=float(tn), fn=float(fn))

    rates = GroupRates(group0=groups[0], group1=groups[1])
    if strict:
        rates.require_measurable()
    return rates


def eod(rates: GroupRates) -> float:
    """max(|TPR_1 - TPR_0|, |FPR_1 - FPR_0|)."""
    return max(abs(rates.tpr_1 - rates.tpr_0), abs(rates.fpr_1 - rates.fpr_0))


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """(TP + TN) / n."""
    y_hat = _as_binary(predictions, "predictions")
    y = _as_binary(labels, "labels")
    _check_lengths(y_hat, y)
    return float(accuracy_score(y, y_hat))


def balanced_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """(TPR + TNR) / 2; both classes must be present in ``labels``."""
    y_hat = _as_binary(predictions, "predictions")
    y = _as_binary(labels, "labels")
    _check_lengths(y_hat, y)
    if len(np.unique(y)) < 2:
        raise MetricInputError("balanced_accuracy needs both classes in labels")
    return float(balanced_accuracy_score(y, y_hat))


def weighted_average(values: Sequence[float], sizes: Sequence[int]) -> float:
    """sum(n_k * x_k) / sum(n_k)."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    n = np.asarray(sizes, dtype=np.float64).reshape(-1)
    if len(x) != len(n):
        raise MetricInputError(f"Length mismatch: {len(x)} values, {len(n)} sizes")
    if len(x) == 0:
        raise MetricInputError("weighted_average needs at least one value")
    if (n < 1).any():
        raise MetricInputError("sizes must be >= 1")
    return float(np.clip(np.average(x, weights=n), x.min(), x.max()))


# =====================================
# Count-based variants (used for expected counts)
# =====================================


def accuracy_from_rates(rates: GroupRates) -> float:
    if rates.total == 0:
        raise MetricInputError("No samples in rates")
    correct = sum(g.tp + g.tn for g in (rates.group0, rates.group1))
    return correct / rates.total


def balanced_accuracy_from_rates(rates: GroupRates) -> float:
    pooled = rates.group0 + rates.group1
    if pooled.positives == 0 or pooled.negatives == 0:
        raise MetricInputError("balanced accuracy needs both classes")
    return (pooled.tp / pooled.positives + pooled.tn / pooled.negatives) / 2.0


def pooled_eod(per_client: Sequence[GroupRates]) -> float:
    """Global EOD over the union of the clients' evaluation sets."""
    if not per_client:
        raise MetricInputError("pooled_eod needs at least one client")
    total = per_client[0]
    for rates in per_client[1:]:
        total = total.combine(rates)
    total.require_measurable()
    return eod(total)


def eod_reduction(before: float, after: float) -> float:
    """Relative EOD improvement, (before - after) / before."""
    if before == 0:
        return 0.0
    return (before - after) / before
