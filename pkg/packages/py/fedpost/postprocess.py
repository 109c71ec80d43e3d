"""
Equalized-odds derived predictor.

A derived predictor keeps the base model untouched and randomly remaps each
hard prediction given the sensitive attribute: ``p_ya`` is the probability
of answering 1 when the model said ``y`` for a member of group ``a``. The
four probabilities minimize the expected 0/1 loss subject to equal derived
TPRs and equal derived FPRs across groups, which is a linear program in
four variables solved here by enumerating the vertices of its polytope.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .core.exceptions import FairnessUnmeasurableError, MetricInputError, SolverError
from .metrics import GroupConfusion, GroupRates

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
_TIE_TOLERANCE = 1e-12
_BOX_SLACK = 1e-12


class DerivedPredictor(BaseModel):
    """The four flip probabilities; ``p_ya`` = Pr(Y~=1 | Y^=y, A=a)."""

    model_config = ConfigDict(frozen=True)

    p00: float = Field(ge=0.0, le=1.0)
    p01: float = Field(ge=0.0, le=1.0)
    p10: float = Field(ge=0.0, le=1.0)
    p11: float = Field(ge=0.0, le=1.0)

    @classmethod
    def identity(cls) -> "DerivedPredictor":
        return cls(p00=0.0, p01=0.0, p10=1.0, p11=1.0)

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "DerivedPredictor":
        p00, p01, p10, p11 = (float(x) for x in v)
        return cls(p00=p00, p01=p01, p10=p10, p11=p11)

    def as_vector(self) -> np.ndarray:
        return np.array([self.p00, self.p01, self.p10, self.p11])

    def prob(self, y_hat: int, a: int) -> float:
        return float(self.as_vector()[2 * int(y_hat) + int(a)])


class DerivedRates(BaseModel):
    """Derived-predictor TPR/FPR per group."""

    tpr_0: float
    tpr_1: float
    fpr_0: float
    fpr_1: float

    @property
    def tpr_gap(self) -> float:
        return abs(self.tpr_1 - self.tpr_0)

    @property
    def fpr_gap(self) -> float:
        return abs(self.fpr_1 - self.fpr_0)


@dataclass(frozen=True, eq=False)
class JointStats:
    """Empirical distribution of (Y^, A, Y), indexed ``pr[y_hat, a, y]``."""

    pr: np.ndarray

    def __post_init__(self) -> None:
        pr = np.array(self.pr, dtype=np.float64, copy=True)
        if pr.shape != (2, 2, 2):
            raise MetricInputError(f"JointStats needs a 2x2x2 table, got {pr.shape}")
        if (pr < 0).any() or abs(pr.sum() - 1.0) > 1e-12:
            raise MetricInputError("JointStats cells must be >= 0 and sum to 1")
        for a in (0, 1):
            for y in (1, 0):
                if pr[:, a, y].sum() <= 0:
                    raise FairnessUnmeasurableError(a, "positives" if y == 1 else "negatives")
        pr.setflags(write=False)
        object.__setattr__(self, "pr", pr)

    def margin(self, a: int, y: int) -> float:
        return float(self.pr[:, a, y].sum())

    def base_rate(self, a: int, y: int) -> float:
        """Pr(Y^=1 | A=a, Y=y)."""
        return float(self.pr[1, a, y] / self.margin(a, y))


# =====================================
# Statistics
# =====================================


def _binary_vectors(
    predictions: Sequence[int], labels: Sequence[int], attrs: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    arrays = [np.asarray(v).reshape(-1) for v in (predictions, labels, attrs)]
    if len({len(v) for v in arrays}) != 1:
        raise MetricInputError(f"Length mismatch: {[len(v) for v in arrays]}")
    if len(arrays[0]) == 0:
        raise MetricInputError("Inputs are empty")
    for name, v in zip(("predictions", "labels", "attrs"), arrays):
        if not np.isin(v, (0, 1)).all():
            raise MetricInputError(f"{name} must be binary {{0,1}}")
    return tuple(v.astype(np.int64) for v in arrays)  # type: ignore[return-value]


def estimate_joint(
    predictions: Sequence[int], labels: Sequence[int], attrs: Sequence[int]
) -> JointStats:
    """Empirical frequencies of (Y^, A, Y) triples."""
    y_hat, y, a = _binary_vectors(predictions, labels, attrs)
    counts = np.bincount(4 * y_hat + 2 * a + y, minlength=8).reshape(2, 2, 2)
    return JointStats(counts / counts.sum())


def derived_rates(p: DerivedPredictor, stats: JointStats) -> DerivedRates:
    """Pr(Y~=1 | A=a, Y=y) = p_1a * Pr(Y^=1|a,y) + p_0a * Pr(Y^=0|a,y)."""
    rates = {}
    for a in (0, 1):
        for y in (0, 1):
            c = stats.base_rate(a, y)
            rates[(a, y)] = p.prob(1, a) * c + p.prob(0, a) * (1.0 - c)
    return DerivedRates(
        tpr_0=rates[(0, 1)], tpr_1=rates[(1, 1)], fpr_0=rates[(0, 0)], fpr_1=rates[(1, 0)]
    )


def _loss_coefficients(stats: JointStats) -> Tuple[float, np.ndarray]:
    """Expected 0/1 loss as ``constant + gradient @ p``."""
    constant = 0.0
    gradient = np.zeros(4)
    for y_hat in (0, 1):
        for a in (0, 1):
            j = 2 * y_hat + a
            constant += stats.pr[y_hat, a, 1]
            gradient[j] += stats.pr[y_hat, a, 0] - stats.pr[y_hat, a, 1]
    return constant, gradient


def expected_loss(p: DerivedPredictor, stats: JointStats) -> float:
    """Pr(Y~ != Y) under ``stats``."""
    constant, gradient = _loss_coefficients(stats)
    return float(constant + gradient @ p.as_vector())


def _equality_matrix(stats: JointStats) -> np.ndarray:
    """Rows y=0 (FPR) and y=1 (TPR) of ``rate(A=1) - rate(A=0) = 0``."""
    matrix = np.zeros((2, 4))
    for row, y in enumerate((0, 1)):
        for a, sign in ((1, 1.0), (0, -1.0)):
            c = stats.base_rate(a, y)
            matrix[row, a] += sign * (1.0 - c)  # p_0a
            matrix[row, 2 + a] += sign * c  # p_1a
    return matrix


# =====================================
# Linear program
# =====================================


def _vertex_candidates(matrix: np.ndarray, tolerance: float) -> List[np.ndarray]:
    """Basic feasible points of {A p = 0, 0 <= p <= 1}.

    Each coordinate is either pinned to a box facet (0 or 1) or left free;
    the free coordinates must be uniquely determined by the equalities.
    """
    candidates = []
    for pattern in itertools.product((None, 0.0, 1.0), repeat=4):
        free = [j for j, v in enumerate(pattern) if v is None]
        if len(free) > matrix.shape[0]:
            continue
        point = np.array([0.0 if v is None else v for v in pattern])
        if free:
            sub = matrix[:, free]
            if np.linalg.matrix_rank(sub) < len(free):
                continue
            rhs = -matrix @ point
            solution, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
            point[free] = solution
        if (point < -_BOX_SLACK).any() or (point > 1.0 + _BOX_SLACK).any():
            continue
        point = np.clip(point, 0.0, 1.0)
        if np.abs(matrix @ point).max() <= tolerance:
            candidates.append(point)
    return candidates


def fit_derived_predictor(
    stats: JointStats, tolerance: float = DEFAULT_TOLERANCE
) -> DerivedPredictor:
    """Minimize expected 0/1 loss subject to equalized odds.

    Among equally good vertices the lexicographically smallest
    (p00, p01, p10, p11) wins.
    """
    matrix = _equality_matrix(stats)
    constant, gradient = _loss_coefficients(stats)
    candidates = _vertex_candidates(matrix, tolerance)
    if not candidates:
        raise SolverError("No feasible vertex found for the derived-predictor LP")

    losses = np.array([constant + gradient @ v for v in candidates])
    best = losses.min()
    tied = [tuple(v) for v, loss in zip(candidates, losses) if loss <= best + _TIE_TOLERANCE]
    chosen = DerivedPredictor.from_vector(min(tied))

    rates = derived_rates(chosen, stats)
    if rates.tpr_gap > tolerance or rates.fpr_gap > tolerance:
        raise SolverError(
            f"Derived predictor violates equalized odds: TPR gap {rates.tpr_gap}, "
            f"FPR gap {rates.fpr_gap}"
        )
    logger.debug(f"Derived predictor {chosen.as_vector()} with expected loss {best:.6f}")
    return chosen


def fit_from_predictions(
    predictions: Sequence[int],
    labels: Sequence[int],
    attrs: Sequence[int],
    tolerance: float = DEFAULT_TOLERANCE,
) -> DerivedPredictor:
    return fit_derived_predictor(estimate_joint(predictions, labels, attrs), tolerance)


# =====================================
# Inference and evaluation
# =====================================


def apply_derived(
    p: DerivedPredictor, y_hat: int, a: int, rng: np.random.Generator
) -> int:
    """Return 1 with probability ``p_{y_hat, a}``."""
    return int(rng.random() < p.prob(y_hat, a))


def apply_derived_batch(
    p: DerivedPredictor,
    predictions: Sequence[int],
    attrs: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    y_hat = np.asarray(predictions, dtype=np.int64)
    a = np.asarray(attrs, dtype=np.int64)
    probs = p.as_vector()[2 * y_hat + a]
    return (rng.random(len(probs)) < probs).astype(np.int64)


def evaluate_derived_exact(
    p: DerivedPredictor,
    predictions: Sequence[int],
    labels: Sequence[int],
    attrs: Sequence[int],
    rng: Optional[np.random.Generator] = None,
    *,
    strict: bool = True,
) -> Tuple[GroupRates, float]:
    """Expected per-group confusion counts and expected accuracy of ``p``.

    Counts are expectations over the predictor's coin flips, so no sampling
    noise enters the evaluation. ``rng`` is accepted for signature symmetry
    with sampled evaluation and ignored. With ``strict`` an empty (A,Y) cell
    raises :class:`FairnessUnmeasurableError`.
    """
    y_hat, y, a = _binary_vectors(predictions, labels, attrs)
    prob_one = p.as_vector()[2 * y_hat + a]

    groups = {}
    for group in (0, 1):
        pos = (a == group) & (y == 1)
        neg = (a == group) & (y == 0)
        tp = float(prob_one[pos].sum())
        fp = float(prob_one[neg].sum())
        groups[group] = GroupConfusion(
            tp=tp, fn=max(float(pos.sum()) - tp, 0.0), fp=fp, tn=max(float(neg.sum()) - fp, 0.0)
        )
    rates = GroupRates(group0=groups[0], group1=groups[1])
    if strict:
        rates.require_measurable()

    correct = sum(g.tp + g.tn for g in (rates.group0, rates.group1))
    return rates, correct / len(y)


def derived_predictor_to_json(p: DerivedPredictor) -> str:
    return p.model_dump_json()


def derived_predictor_from_json(payload: str) -> DerivedPredictor:
    return DerivedPredictor.model_validate_json(payload)
