"""
Final-layer fairness fine-tuning.

All layers but the last are frozen; the last layer is trained on the frozen
hidden activations with ``alpha_ft * BCE + fairness``, where the fairness
term is a differentiable EOD surrogate built from probability-weighted
("soft") TPRs and FPRs.

An optional accuracy budget (``max_bacc_drop``) keeps the last iterate whose
train balanced accuracy is within the budget of the starting model's.
"""

from __future__ import annotations

import logging
from typing import Dict, Optional, Protocol, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from .core.exceptions import FairnessUnmeasurableError, FineTuneError, MetricInputError
from .core.seeding import derive_seed
from .data import Dataset
from .metrics import balanced_accuracy
from .model import Layer, ModelWeights, hidden_activations

logger = logging.getLogger(__name__)


class FtConfig(BaseModel):
    """Fine-tuning hyperparameters.

    Field defaults are the published fine-tuning values. ``rounds`` counts
    full-batch steps, or epochs over ``batch_size`` mini-batches when
    ``full_batch`` is off.
    """

    model_config = ConfigDict(frozen=True)

    alpha_ft: float = Field(default=1.0, ge=0)
    eta: float = Field(default=5e-3, gt=0)
    rounds: int = Field(default=20, ge=0)
    batch_size: int = Field(default=256, ge=1)
    rng_seed: int = Field(default=0, ge=0)
    full_batch: bool = True
    # Divide the composite loss by (alpha_ft + 1).
    normalize_loss: bool = False
    # Largest allowed drop of train balanced accuracy; None disables the check.
    max_bacc_drop: Optional[float] = Field(default=None, ge=0, le=1)


class FairnessLoss(Protocol):
    """Differentiable fairness penalty on predicted probabilities."""

    def __call__(
        self, probabilities: np.ndarray, labels: np.ndarray, attrs: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        """Return the penalty and its gradient with respect to ``probabilities``."""
        ...


def _cell_masks(labels: np.ndarray, attrs: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
    masks: Dict[Tuple[int, int], np.ndarray] = {}
    for a in (0, 1):
        for y in (1, 0):
            mask = (attrs == a) & (labels == y)
            if not mask.any():
                raise FairnessUnmeasurableError(a, "positives" if y == 1 else "negatives")
            masks[(a, y)] = mask
    return masks


def _prepare(
    probabilities: ArrayLike, labels: ArrayLike, attrs: ArrayLike
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    a = np.asarray(attrs).reshape(-1)
    if not len(p) == len(y) == len(a):
        raise MetricInputError(f"Length mismatch: {len(p)}, {len(y)}, {len(a)}")
    return p, y, a


def _soft_rate(p: np.ndarray, mask: np.ndarray) -> float:
    return float(p[mask].mean())


def fairness_surrogate(probabilities: ArrayLike, labels: ArrayLike, attrs: ArrayLike) -> float:
    """|softTPR_1 - softTPR_0| + |softFPR_1 - softFPR_0|."""
    p, y, a = _prepare(probabilities, labels, attrs)
    masks = _cell_masks(y, a)
    tpr_gap = _soft_rate(p, masks[(1, 1)]) - _soft_rate(p, masks[(0, 1)])
    fpr_gap = _soft_rate(p, masks[(1, 0)]) - _soft_rate(p, masks[(0, 0)])
    return abs(tpr_gap) + abs(fpr_gap)


def fairness_surrogate_gradient(
    probabilities: ArrayLike, labels: ArrayLike, attrs: ArrayLike
) -> np.ndarray:
    """Gradient of :func:`fairness_surrogate`; zero gaps get subgradient 0."""
    p, y, a = _prepare(probabilities, labels, attrs)
    masks = _cell_masks(y, a)
    grad = np.zeros_like(p)
    for label in (1, 0):
        gap = _soft_rate(p, masks[(1, label)]) - _soft_rate(p, masks[(0, label)])
        sign = np.sign(gap)
        for group, direction in ((1, 1.0), (0, -1.0)):
            mask = masks[(group, label)]
            grad[mask] += direction * sign / mask.sum()
    return grad


class EodSurrogate:
    """Default :class:`FairnessLoss`: the soft equalized-odds gap sum."""

    def __call__(
        self, probabilities: np.ndarray, labels: np.ndarray, attrs: np.ndarray
    ) -> Tuple[float, np.ndarray]:
        return (
            fairness_surrogate(probabilities, labels, attrs),
            fairness_surrogate_gradient(probabilities, labels, attrs),
        )


def split_frozen(weights: ModelWeights) -> Tuple[Tuple[Layer, ...], Layer]:
    """Frozen layers 1..L-1 and an independent copy of layer L."""
    if weights.n_layers < 2:
        raise FineTuneError(
            "Fine-tuning needs a model with at least two layers", code="single_layer_model"
        )
    last = weights.layers[-1]
    return weights.layers[:-1], Layer(weight=last.weight.copy(), bias=last.bias.copy())


def composite_loss_and_gradient(
    last: Layer,
    hidden: np.ndarray,
    labels: np.ndarray,
    attrs: np.ndarray,
    alpha_ft: float,
    *,
    normalize: bool = False,
    fairness_loss: Optional[FairnessLoss] = None,
    include_fairness: bool = True,
) -> Tuple[float, Layer]:
    """``alpha_ft * BCE + fairness`` on the last layer and its gradient.

    ``hidden`` holds the frozen activations feeding the last layer.
    """
    h = np.atleast_2d(np.asarray(hidden, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    m = h.shape[0]
    if m == 0:
        raise MetricInputError("composite loss needs at least one sample")

    logits = (h @ last.weight.T + last.bias)[:, 0]
    probs = expit(logits)

    loss = alpha_ft * float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    d_logits = alpha_ft * (probs - y) / m

    if include_fairness:
        fairness_loss = fairness_loss or EodSurrogate()
        penalty, d_probs = fairness_loss(probs, labels, attrs)
        loss += penalty
        d_logits = d_logits + d_probs * probs * (1.0 - probs)

    if normalize:
        loss /= alpha_ft + 1.0
        d_logits = d_logits / (alpha_ft + 1.0)

    grad = Layer(weight=d_logits[None, :] @ h, bias=np.array([d_logits.sum()]))
    return loss, grad


def _has_all_cells(labels: np.ndarray, attrs: np.ndarray) -> bool:
    return all(((attrs == a) & (labels == y)).any() for a in (0, 1) for y in (0, 1))


def _train_bacc(last: Layer, hidden: np.ndarray, labels: np.ndarray) -> float:
    logits = (hidden @ last.weight.T + last.bias)[:, 0]
    return balanced_accuracy((logits >= 0.0).astype(np.int64), labels)


def finetune_last_layer(
    weights: ModelWeights,
    train: Dataset,
    config: FtConfig,
    fairness_loss: Optional[FairnessLoss] = None,
) -> ModelWeights:
    """Run ``config.rounds`` descent rounds on the last layer only.

    In mini-batch mode a batch lacking a (Y,A) cell contributes BCE only.
    With ``max_bacc_drop`` set, every step is scored on the train set and the
    last iterate within the budget is returned.
    """
    _, last = split_frozen(weights)
    if len(train) == 0:
        raise FineTuneError("Fine-tuning needs a non-empty training set")
    _cell_masks(train.labels, train.sensitive)

    hidden = hidden_activations(weights, train.features)
    n = len(train)

    budget = config.max_bacc_drop
    floor = _train_bacc(last, hidden, train.labels) - budget if budget is not None else 0.0
    accepted = last
    steps = accepted_step = 0

    for r in range(config.rounds):
        if config.full_batch:
            batches = [np.arange(n)]
        else:
            order = np.random.default_rng(derive_seed(config.rng_seed, r)).permutation(n)
            batches = [order[s : s + config.batch_size] for s in range(0, n, config.batch_size)]

        for batch in batches:
            labels = train.labels[batch]
            attrs = train.sensitive[batch]
            _, grad = composite_loss_and_gradient(
                last,
                hidden[batch],
                labels,
                attrs,
                config.alpha_ft,
                normalize=config.normalize_loss,
                fairness_loss=fairness_loss,
                include_fairness=config.full_batch or _has_all_cells(labels, attrs),
            )
            last = Layer(
                weight=last.weight - config.eta * grad.weight,
                bias=last.bias - config.eta * grad.bias,
            )
            steps += 1
            if budget is None or _train_bacc(last, hidden, train.labels) >= floor:
                accepted, accepted_step = last, steps

    if budget is not None and accepted_step < steps:
        logger.debug(
            f"Accuracy budget {budget} kept step {accepted_step} of {steps} on {n} samples"
        )
    logger.debug(f"Fine-tuned last layer for {config.rounds} rounds on {n} samples")
    return weights.replace_layer(weights.n_layers - 1, accepted)
