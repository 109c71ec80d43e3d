"""
Feed-forward binary classifier with hand-written backpropagation.

Hidden layers use ReLU, the single output unit uses a sigmoid. Training
minimizes mean binary cross-entropy with mini-batch SGD.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from .core.exceptions import DatasetError, ModelShapeError
from .data import Dataset

logger = logging.getLogger(__name__)

# Largest double below 1 and smallest positive double keep outputs in (0, 1).
_PROB_MAX = float(np.nextafter(1.0, 0.0))
_PROB_MIN = float(np.finfo(np.float64).tiny)

DEFAULT_THRESHOLD = 0.5


def _frozen(array: Any) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Layer:
    """Dense layer: ``weight`` is (out x in), ``bias`` has length out."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weight = _frozen(self.weight)
        bias = _frozen(self.bias).reshape(-1)
        if weight.ndim != 2 or weight.shape[0] != bias.shape[0]:
            raise ModelShapeError(
                f"Layer weight {weight.shape} incompatible with bias {bias.shape}"
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    def equals(self, other: "Layer") -> bool:
        return np.array_equal(self.weight, other.weight) and np.array_equal(
            self.bias, other.bias
        )


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Immutable snapshot of all layer coefficients."""

    layers: Tuple[Layer, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ModelShapeError("A model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ModelShapeError(
                    f"Adjacent layers incompatible: {prev.out_dim} -> {nxt.in_dim}"
                )
        if layers[-1].out_dim != 1:
            raise ModelShapeError("The final layer must have a single output")
        object.__setattr__(self, "layers", layers)

    @property
    def dims(self) -> List[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def replace_layer(self, position: int, layer: Layer) -> "ModelWeights":
        layers = list(self.layers)
        layers[position] = layer
        return ModelWeights(tuple(layers))

    def equals(self, other: "ModelWeights") -> bool:
        return self.n_layers == other.n_layers and all(
            a.equals(b) for a, b in zip(self.layers, other.layers)
        )


class TrainConfig(BaseModel):
    """Local SGD hyperparameters."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.01, ge=0)
    batch_size: int = Field(default=32, ge=1)
    local_epochs: int = Field(default=1, ge=0)
    rng_seed: int = Field(default=0, ge=0)


def init_model(layer_dims: Sequence[int], rng_seed: int) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.

    ``layer_dims`` starts with the input dimension and ends with 1.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ModelShapeError(f"layer_dims needs an input and an output size, got {dims}")
    if any(d < 1 for d in dims):
        raise ModelShapeError(f"layer sizes must be positive, got {dims}")
    if dims[-1] != 1:
        raise ModelShapeError(f"the last layer size must be 1, got {dims[-1]}")

    rng = np.random.default_rng(rng_seed)
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(
            Layer(
                weight=rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                bias=rng.uniform(-bound, bound, size=fan_out),
            )
        )
    return ModelWeights(tuple(layers))


# =====================================
# Forward pass
# =====================================


def _check_input(weights: ModelWeights, features: np.ndarray) -> None:
    if features.shape[-1] != weights.layers[0].in_dim:
        raise ModelShapeError(
            f"Input has {features.shape[-1]} features, model expects "
            f"{weights.layers[0].in_dim}"
        )


def hidden_activations(weights: ModelWeights, features: np.ndarray) -> np.ndarray:
    """Output of all layers but the last (the input itself for one layer)."""
    h = np.asarray(features, dtype=np.float64)
    for layer in weights.layers[:-1]:
        h = np.maximum(h @ layer.weight.T + layer.bias, 0.0)
    return h


def _clip(prob: np.ndarray) -> np.ndarray:
    return np.clip(prob, _PROB_MIN, _PROB_MAX)


def predict_proba(weights: ModelWeights, features: np.ndarray) -> np.ndarray:
    """Batched forward pass returning P(Y=1) per row."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_input(weights, X)
    last = weights.layers[-1]
    logits = hidden_activations(weights, X) @ last.weight.T + last.bias
    return _clip(expit(logits[:, 0]))


def forward(weights: ModelWeights, features: Sequence[float]) -> float:
    """P(Y=1 | x) for a single feature vector, strictly inside (0, 1)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise ModelShapeError("forward expects a single feature vector")
    return float(predict_proba(weights, x[None, :])[0])


def predict_labels(
    weights: ModelWeights, data: Union[Dataset, np.ndarray], threshold: float = DEFAULT_THRESHOLD
) -> np.ndarray:
    """Hard labels: 1 iff the predicted probability is >= ``threshold``."""
    features = data.features if isinstance(data, Dataset) else data
    return (predict_proba(weights, features) >= threshold).astype(np.int64)


# =====================================
# Loss and gradients
# =====================================


def loss_and_gradients(
    weights: ModelWeights, features: np.ndarray, labels: np.ndarray
) -> Tuple[float, Tuple[Layer, ...]]:
    """Mean BCE and its gradient with respect to every layer."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    _check_input(weights, X)
    m = X.shape[0]

    activations = [X]
    pre_activations = []
    for layer in weights.layers:
        z = activations[-1] @ layer.weight.T + layer.bias
        pre_activations.append(z)
        activations.append(np.maximum(z, 0.0))

    logits = pre_activations[-1][:, 0]
    # log(1 + e^z) - y*z is BCE written on logits.
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    delta = ((expit(logits) - y) / m)[:, None]
    grads: List[Layer] = []
    for i in range(len(weights.layers) - 1, -1, -1):
        grads.append(Layer(weight=delta.T @ activations[i], bias=delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ weights.layers[i].weight) * (pre_activations[i - 1] > 0)
    grads.reverse()
    return loss, tuple(grads)


def bce_loss(weights: ModelWeights, data: Dataset) -> float:
    return loss_and_gradients(weights, data.features, data.labels)[0]


def sgd_step(
    weights: ModelWeights, grads: Sequence[Layer], learning_rate: float
) -> ModelWeights:
    return ModelWeights(
        tuple(
            Layer(
                weight=layer.weight - learning_rate * g.weight,
                bias=layer.bias - learning_rate * g.bias,
            )
            for layer, g in zip(weights.layers, grads)
        )
    )


def sgd_epoch(weights: ModelWeights, train: Dataset, config: TrainConfig) -> ModelWeights:
    """One pass of mini-batch SGD over ``train`` in a seeded shuffled order."""
    n = len(train)
    if n == 0:
        raise DatasetError("sgd_epoch needs a non-empty training set")
    _check_input(weights, train.features)

    order = np.random.default_rng(config.rng_seed).permutation(n)
    for start in range(0, n, config.batch_size):
        batch = order[start : start + config.batch_size]
        _, grads = loss_and_gradients(weights, train.features[batch], train.labels[batch])
        weights = sgd_step(weights, grads, config.learning_rate)
    return weights


# =====================================
# Serialization
# =====================================


def weights_to_dict(weights: ModelWeights) -> Dict[str, Any]:
    """Flat document: layer dims plus row-major coefficient arrays."""
    return {
        "dims": weights.dims,
        "layers": [
            {
                "shape": [layer.out_dim, layer.in_dim],
                "weight": layer.weight.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in weights.layers
        ],
    }


def weights_from_dict(document: Dict[str, Any]) -> ModelWeights:
    try:
        layers = tuple(
            Layer(
                weight=np.asarray(item["weight"], dtype=np.float64).reshape(item["shape"]),
                bias=item["bias"],
            )
            for item in document["layers"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelShapeError(f"Malformed weights document: {exc}") from exc
    weights = ModelWeights(layers)
    if "dims" in document and list(document["dims"]) != weights.dims:
        raise ModelShapeError(
            f"Declared dims {document['dims']} do not match layers {weights.dims}"
        )
    return weights


def weights_to_json(weights: ModelWeights) -> str:
    return json.dumps(weights_to_dict(weights), sort_keys=True)


def weights_from_json(payload: str) -> ModelWeights:
    return weights_from_dict(json.loads(payload))


def weights_digest(weights: ModelWeights) -> str:
    """SHA-256 content hash of the serialized weights."""
    hash_str = hashlib.sha256(weights_to_json(weights).encode()).hexdigest()
    return f"sha256:{hash_str}"
