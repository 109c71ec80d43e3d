"""
FedAvg server loop: local client updates, sample-count weighted aggregation
and communication accounting.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .core.config import get_settings
from .core.exceptions import AggregationError, ConfigurationError, DatasetError
from .core.seeding import STREAM_INIT, STREAM_TRAIN, derive_seed
from .data import Dataset
from .model import Layer, ModelWeights, TrainConfig, init_model, sgd_epoch
from .partition import ClientPartition

logger = logging.getLogger(__name__)


class FedConfig(BaseModel):
    """Server-side FedAvg settings."""

    model_config = ConfigDict(frozen=True)

    global_rounds: int = Field(default=40, ge=0)
    clients: int = Field(default=4, ge=1)
    train_config: TrainConfig = Field(default_factory=TrainConfig)
    model_dims: Tuple[int, ...] = (1,)
    rng_seed: int = Field(default=0, ge=0)
    max_workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("model_dims")
    @classmethod
    def validate_model_dims(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or v[-1] != 1 or any(d < 1 for d in v):
            raise ValueError("model_dims must be positive and end with 1")
        return v


class RoundLog(BaseModel):
    """Bookkeeping for one completed global round."""

    round: int
    messages_sent: int
    elapsed: float


def count_communication(global_rounds: int, clients: int) -> int:
    """Messages exchanged: one initial broadcast per client plus an upload
    and a download per client per round."""
    if global_rounds < 0:
        raise ConfigurationError(f"global_rounds must be >= 0, got {global_rounds}")
    if clients < 1:
        raise ConfigurationError(f"clients must be >= 1, got {clients}")
    return clients * (2 * global_rounds + 1)


def client_local_update(
    global_weights: ModelWeights, train: Dataset, config: TrainConfig
) -> ModelWeights:
    """Run ``local_epochs`` SGD passes starting from the global weights."""
    if len(train) == 0:
        raise DatasetError("client_local_update needs a non-empty training set")
    weights = global_weights
    for epoch in range(config.local_epochs):
        epoch_config = config.model_copy(
            update={"rng_seed": derive_seed(config.rng_seed, epoch)}
        )
        weights = sgd_epoch(weights, train, epoch_config)
    return weights


def _weighted_sum(arrays: Sequence[np.ndarray], coefficients: Sequence[float]) -> np.ndarray:
    # Sorting the terms makes the sum independent of client order.
    terms = np.stack([c * a for c, a in zip(coefficients, arrays)])
    return np.sort(terms, axis=0).sum(axis=0)


def aggregate(updates: Sequence[Tuple[ModelWeights, int]]) -> ModelWeights:
    """Coefficient-wise weighted mean with w_k = n_k / sum_j n_j."""
    if not updates:
        raise AggregationError("aggregate needs at least one update")
    dims = updates[0][0].dims
    for weights, count in updates:
        if weights.dims != dims:
            raise AggregationError(f"Update shape {weights.dims} differs from {dims}")
        if int(count) < 1:
            raise AggregationError(f"Sample counts must be >= 1, got {count}")

    total = sum(int(count) for _, count in updates)
    coefficients = [int(count) / total for _, count in updates]
    layers = []
    for i in range(len(dims) - 1):
        layers.append(
            Layer(
                weight=_weighted_sum([w.layers[i].weight for w, _ in updates], coefficients),
                bias=_weighted_sum([w.layers[i].bias for w, _ in updates], coefficients),
            )
        )
    return ModelWeights(tuple(layers))


def client_round_config(fed_config: FedConfig, client_id: int, global_round: int) -> TrainConfig:
    """Per-client, per-round training config with a schedule-independent seed."""
    return fed_config.train_config.model_copy(
        update={
            "rng_seed": derive_seed(fed_config.rng_seed, STREAM_TRAIN, client_id, global_round)
        }
    )


def fedavg_train(
    partitions: Sequence[ClientPartition],
    fed_config: FedConfig,
    initial_weights: Optional[ModelWeights] = None,
) -> Tuple[ModelWeights, List[RoundLog]]:
    """Run ``global_rounds`` rounds of FedAvg over the clients' train sets."""
    if len(partitions) != fed_config.clients:
        raise ConfigurationError(
            f"Expected {fed_config.clients} client partitions, got {len(partitions)}"
        )
    for partition in partitions:
        if partition.n_train == 0:
            raise DatasetError(f"Client {partition.client_id} has an empty train set")

    if initial_weights is None:
        input_dim = partitions[0].train.dim
        initial_weights = init_model(
            [input_dim, *fed_config.model_dims],
            derive_seed(fed_config.rng_seed, STREAM_INIT),
        )

    workers = fed_config.max_workers or get_settings().MAX_WORKERS
    messages_per_round = 2 * fed_config.clients
    weights = initial_weights
    logs: List[RoundLog] = []

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for t in range(1, fed_config.global_rounds + 1):
            started = time.perf_counter()
            broadcast = weights
            futures = [
                pool.submit(
                    client_local_update,
                    broadcast,
                    partition.train,
                    client_round_config(fed_config, partition.client_id, t),
                )
                for partition in partitions
            ]
            # Barrier: every client update completes before aggregation.
            updates = [
                (future.result(), partition.n_train)
                for future, partition in zip(futures, partitions)
            ]
            weights = aggregate(updates)
            elapsed = time.perf_counter() - started
            logs.append(RoundLog(round=t, messages_sent=messages_per_round, elapsed=elapsed))
            logger.debug(f"Round {t} done: {messages_per_round} messages in {elapsed:.4f}s")

    logger.info(
        f"FedAvg finished: {fed_config.global_rounds} rounds, {fed_config.clients} clients, "
        f"{count_communication(fed_config.global_rounds, fed_config.clients)} messages"
    )
    return weights, logs


def write_round_logs(path: Union[str, Path], logs: Sequence[RoundLog]) -> None:
    """CSV export with columns round, messages, elapsed_seconds."""
    frame = pd.DataFrame(
        [(log.round, log.messages_sent, log.elapsed) for log in logs],
        columns=["round", "messages", "elapsed_seconds"],
    )
    frame.to_csv(path, index=False)
