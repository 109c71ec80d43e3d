"""
Heterogeneous client partitioning.

A dataset is spread over K clients by drawing, for every (Y,A) cell, a
proportion vector over clients from Dir(alpha) and distributing the cell's
samples multinomially. Each client shard is then split into local train and
test sets.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError
from sklearn.model_selection import train_test_split as _sk_train_test_split

from .core.exceptions import PartitionError
from .core.seeding import STREAM_PARTITION, STREAM_SPLIT, derive_seed
from .data import CELL_ORDER, Dataset

logger = logging.getLogger(__name__)

DEFAULT_CLIENTS = 4
DEFAULT_TRAIN_FRACTION = 0.8


class HeterogeneityLevel(BaseModel):
    """Dirichlet concentration; smaller alpha means more heterogeneous clients."""

    alpha: float = Field(gt=0)


class DegeneratePolicy(str, Enum):
    """What to do when a client's train split misses a (Y,A) cell."""

    REJECT_AND_REDRAW = "reject_and_redraw"
    KEEP = "keep"


@dataclass(frozen=True)
class ClientPartition:
    """Local train/test split held by one client."""

    client_id: int
    train: Dataset
    test: Dataset

    def __post_init__(self) -> None:
        if np.intersect1d(self.train.index, self.test.index).size:
            raise PartitionError(
                f"Client {self.client_id}: train and test sets share samples"
            )

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_test(self) -> int:
        return len(self.test)

    def has_empty_train_cell(self) -> bool:
        return min(self.train.cell_counts()) == 0


def _validate_alpha(alpha: float) -> float:
    try:
        return HeterogeneityLevel(alpha=alpha).alpha
    except ValidationError as exc:
        raise PartitionError(f"Invalid Dirichlet alpha {alpha!r}: must be > 0") from exc


def dirichlet_partition(
    dataset: Dataset, alpha: float, k: int, rng_seed: int
) -> List[Dataset]:
    """Split ``dataset`` into ``k`` shards with per-cell Dirichlet proportions."""
    alpha = _validate_alpha(alpha)
    if k < 1:
        raise PartitionError(f"Number of clients must be >= 1, got {k}")
    n = len(dataset)
    if n == 0:
        raise PartitionError("Cannot partition an empty dataset")
    if k > n:
        raise PartitionError(f"{k} clients exceed dataset size {n}")

    rng = np.random.default_rng(rng_seed)
    assignment = np.empty(n, dtype=np.int64)
    for y, a in CELL_ORDER:
        members = np.flatnonzero((dataset.labels == y) & (dataset.sensitive == a))
        proportions = rng.dirichlet(np.full(k, alpha))
        counts = rng.multinomial(len(members), proportions)
        assignment[rng.permutation(members)] = np.repeat(np.arange(k), counts)

    return [dataset.subset(np.flatnonzero(assignment == c)) for c in range(k)]


def train_test_split(
    shard: Dataset,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    rng_seed: int = 0,
    *,
    client_id: int = 1,
) -> ClientPartition:
    """Uniform split of one shard into floor(f*n) train and n - floor(f*n) test."""
    if not 0.0 < train_fraction < 1.0:
        raise PartitionError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(shard)
    if n < 2:
        raise PartitionError(
            f"Client {client_id}: shard of {n} samples cannot be split", code="shard_too_small"
        )
    n_train = math.floor(round(train_fraction * n, 9))
    if n_train == 0 or n_train == n:
        raise PartitionError(
            f"Client {client_id}: train_fraction {train_fraction} leaves an empty side "
            f"for {n} samples",
            code="shard_too_small",
        )
    train_pos, test_pos = _sk_train_test_split(
        np.arange(n),
        train_size=n_train,
        test_size=n - n_train,
        random_state=rng_seed,
        shuffle=True,
    )
    return ClientPartition(
        client_id=client_id,
        train=shard.subset(np.sort(train_pos)),
        test=shard.subset(np.sort(test_pos)),
    )


def _cell_distribution(shard: Dataset) -> np.ndarray:
    counts = np.asarray(shard.cell_counts(), dtype=np.float64)
    return counts / counts.sum()


def heterogeneity_stat(shards: Sequence[Dataset]) -> float:
    """Largest total-variation distance between two clients' (Y,A) distributions."""
    if len(shards) < 2:
        raise PartitionError("heterogeneity_stat needs at least two shards")
    if any(len(s) == 0 for s in shards):
        raise PartitionError("heterogeneity_stat is undefined for an empty shard")
    dists = [_cell_distribution(s) for s in shards]
    return float(
        max(0.5 * np.abs(p - q).sum() for p, q in combinations(dists, 2))
    )


def cell_table(shards: Sequence[Dataset]) -> pd.DataFrame:
    """Per-client (Y,A) sample counts, one row per client."""
    columns = [f"#(Y={y},A={a})" for y, a in CELL_ORDER]
    rows = [shard.cell_counts() for shard in shards]
    frame = pd.DataFrame(rows, columns=columns)
    frame.index = pd.RangeIndex(1, len(rows) + 1, name="client")
    return frame


# =====================================
# Partition drawing with degenerate-cell policy
# =====================================


@dataclass(frozen=True)
class PartitionResult:
    """Client partitions plus how they were obtained."""

    partitions: List[ClientPartition]
    attempts: int
    degenerate: bool
    shards: List[Dataset]

    def degenerate_clients(self) -> List[int]:
        return [p.client_id for p in self.partitions if p.has_empty_train_cell()]


def _draw(
    dataset: Dataset, alpha: float, k: int, seed: int, attempt: int, train_fraction: float
) -> tuple[List[Dataset], List[ClientPartition]]:
    shards = dirichlet_partition(
        dataset, alpha, k, derive_seed(seed, STREAM_PARTITION, attempt)
    )
    partitions = [
        train_test_split(
            shard,
            train_fraction,
            derive_seed(seed, STREAM_SPLIT, attempt, client_id),
            client_id=client_id,
        )
        for client_id, shard in enumerate(shards, start=1)
    ]
    return shards, partitions


def split_clients(
    dataset: Dataset,
    alpha: float,
    k: int = DEFAULT_CLIENTS,
    seed: int = 0,
    *,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    policy: Union[DegeneratePolicy, str] = DegeneratePolicy.REJECT_AND_REDRAW,
    max_redraws: int = 20,
) -> PartitionResult:
    """Draw a partition, split every shard, and apply the degenerate policy.

    Under ``reject_and_redraw`` a draw with an empty (Y,A) train cell on any
    client, or a shard too small to split, is discarded and redrawn up to
    ``max_redraws`` times. Under ``keep`` unsplittable draws are still redrawn,
    and the first splittable draw is returned even with empty train cells.
    """
    policy = DegeneratePolicy(policy)
    last_error: PartitionError | None = None
    result: PartitionResult | None = None

    for attempt in range(max_redraws + 1):
        try:
            shards, partitions = _draw(dataset, alpha, k, seed, attempt, train_fraction)
        except PartitionError as exc:
            if exc.code != "shard_too_small":
                raise
            last_error = exc
            logger.debug(f"Partition attempt {attempt} rejected: {exc}")
            continue

        degenerate = any(p.has_empty_train_cell() for p in partitions)
        result = PartitionResult(partitions, attempt + 1, degenerate, shards)
        if not degenerate or policy is DegeneratePolicy.KEEP:
            break
        logger.debug(f"Partition attempt {attempt} rejected: empty (Y,A) train cell")

    if result is None:
        raise PartitionError(
            f"No splittable partition after {max_redraws + 1} attempts: {last_error}",
            code="shard_too_small",
        )
    if result.degenerate:
        logger.warning(
            f"Partition (alpha={alpha}, seed={seed}) has empty (Y,A) train cells on "
            f"clients {result.degenerate_clients()}"
        )
    logger.info(
        f"Partition drawn (alpha={alpha}, k={k}, seed={seed}, attempts={result.attempts}):\n"
        f"{cell_table(result.shards).to_string()}"
    )
    return result


# =====================================
# Manifests
# =====================================


def partition_manifest(
    partitions: Sequence[ClientPartition], **meta: Any
) -> Dict[str, Any]:
    """Client -> sample identities, for reproducibility audits."""
    return {
        **meta,
        "clients": {
            str(p.client_id): {
                "train": p.train.index.tolist(),
                "test": p.test.index.tolist(),
            }
            for p in partitions
        },
    }


def write_manifest(
    path: Union[str, Path], partitions: Sequence[ClientPartition], **meta: Any
) -> None:
    Path(path).write_text(
        json.dumps(partition_manifest(partitions, **meta), indent=2), encoding="utf-8"
    )
