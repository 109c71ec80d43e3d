"""
Tabular dataset loading and synthetic dataset generation.

Loaders return an immutable :class:`Dataset` whose continuous columns are
standardized over the retained rows and whose categorical columns are one-hot
encoded. The sensitive attribute and the label are kept out of the feature
matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator
from sklearn.preprocessing import StandardScaler

from .core.exceptions import DatasetError

logger = logging.getLogger(__name__)

# (Y, A) cell order used throughout: (1,1), (1,0), (0,1), (0,0).
CELL_ORDER: Tuple[Tuple[int, int], ...] = ((1, 1), (1, 0), (0, 1), (0, 0))

ADULT_COLUMNS: Tuple[str, ...] = (
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
)
ADULT_ALIASES: Mapping[str, str] = {
    "educational-num": "education-num",
    "gender": "sex",
}
ADULT_CONTINUOUS: Tuple[str, ...] = (
    "age",
    "fnlwgt",
    "education-num",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
)
ADULT_CATEGORICAL: Tuple[str, ...] = (
    "workclass",
    "education",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "native-country",
)
ADULT_MISSING_MARKERS = ("?", "")

COMPAS_REQUIRED: Tuple[str, ...] = (
    "age_cat",
    "sex",
    "priors_count",
    "c_charge_degree",
    "race",
    "two_year_recid",
)
COMPAS_CONTINUOUS: Tuple[str, ...] = ("priors_count",)
COMPAS_CATEGORICAL: Tuple[str, ...] = ("age_cat", "sex", "c_charge_degree")
COMPAS_RACES: Mapping[str, int] = {"Caucasian": 1, "African-American": 0}


class DatasetSource(str, Enum):
    """Where a dataset came from."""

    ADULT = "adult"
    COMPAS = "compas"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class Sample:
    """A single record: feature vector, binary label Y, binary sensitive A."""

    features: np.ndarray
    label: int
    sensitive: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, read-only collection of samples.

    ``index`` holds the identity of every row (its position in the source
    file or generator output) so that partitions can be audited.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    feature_names: Tuple[str, ...]
    source: DatasetSource
    index: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim != 2:
            raise DatasetError("features must be a 2-D array")
        n, dim = features.shape
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        sensitive = np.array(self.sensitive, dtype=np.int64, copy=True).reshape(-1)
        index = (
            np.arange(n, dtype=np.int64)
            if self.index is None
            else np.array(self.index, dtype=np.int64, copy=True).reshape(-1)
        )
        if len(labels) != n or len(sensitive) != n or len(index) != n:
            raise DatasetError("features, labels, sensitive and index lengths differ")
        if not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be binary {0,1}")
        if not np.isin(sensitive, (0, 1)).all():
            raise DatasetError("sensitive attribute must be binary {0,1}")
        if np.isnan(features).any():
            raise DatasetError("features contain NaN entries")
        names = tuple(self.feature_names)
        if not names or len(names) != dim:
            raise DatasetError(
                f"feature_names has {len(names)} entries, features have {dim} columns"
            )
        for arr in (features, labels, sensitive, index):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sensitive", sensitive)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "source", DatasetSource(self.source))

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def samples(self) -> Iterator[Sample]:
        for x, y, a in zip(self.features, self.labels, self.sensitive):
            yield Sample(features=x, label=int(y), sensitive=int(a))

    def subset(self, positions: Sequence[int]) -> "Dataset":
        """Rows at the given positions (positions, not ``index`` identities)."""
        pos = np.asarray(positions, dtype=np.int64)
        return Dataset(
            features=self.features[pos],
            labels=self.labels[pos],
            sensitive=self.sensitive[pos],
            feature_names=self.feature_names,
            source=self.source,
            index=self.index[pos],
        )

    def cell_counts(self) -> Tuple[int, int, int, int]:
        """Counts of (Y,A) cells in ``CELL_ORDER``."""
        return tuple(  # type: ignore[return-value]
            int(np.sum((self.labels == y) & (self.sensitive == a)))
            for y, a in CELL_ORDER
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and self.source == other.source
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.sensitive, other.sensitive)
            and np.array_equal(self.index, other.index)
        )

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise DatasetError("Cannot concatenate zero datasets")
        first = parts[0]
        for part in parts[1:]:
            if part.feature_names != first.feature_names:
                raise DatasetError("Cannot concatenate datasets with different features")
        return cls(
            features=np.vstack([p.features for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            sensitive=np.concatenate([p.sensitive for p in parts]),
            feature_names=first.feature_names,
            source=first.source,
            index=np.concatenate([p.index for p in parts]),
        )


# =====================================
# CSV helpers
# =====================================


def _read_csv(csv_path: Union[str, Path], **kwargs: Any) -> pd.DataFrame:
    path = Path(csv_path)
    if not path.is_file():
        raise DatasetError(f"Dataset file not found: {path}", code="missing_file")
    try:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            comment="|",
            **kwargs,
        )
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DatasetError(f"Cannot parse {path}: {exc}") from exc


def _encode(
    frame: pd.DataFrame,
    continuous: Sequence[str],
    categorical: Sequence[str],
) -> Tuple[np.ndarray, List[str]]:
    """Standardize ``continuous`` and one-hot encode ``categorical`` columns."""
    try:
        numeric = frame[list(continuous)].apply(pd.to_numeric, errors="raise")
    except ValueError as exc:
        raise DatasetError(f"Non-numeric value in a continuous column: {exc}") from exc
    scaled = StandardScaler().fit_transform(numeric.to_numpy(dtype=np.float64))
    dummies = pd.get_dummies(frame[list(categorical)], prefix_sep="=", dtype=np.float64)
    features = np.hstack([scaled, dummies.to_numpy(dtype=np.float64)])
    names = list(continuous) + [str(c) for c in dummies.columns]
    return features, names


def _map_binary(series: pd.Series, mapping: Mapping[str, int], column: str) -> np.ndarray:
    mapped = series.map(mapping)
    if mapped.isna().any():
        bad = sorted(set(series[mapped.isna()]))[:5]
        raise DatasetError(f"Unexpected values in column '{column}': {bad}")
    return mapped.to_numpy(dtype=np.int64)


# =====================================
# Adult
# =====================================


def _adult_frame(csv_path: Union[str, Path]) -> pd.DataFrame:
    frame = _read_csv(csv_path)
    columns = [ADULT_ALIASES.get(c.strip(), c.strip()) for c in frame.columns]
    if columns and columns[0].isdigit() and len(columns) == len(ADULT_COLUMNS):
        # Header-less UCI file: the first data row was consumed as a header.
        frame = _read_csv(csv_path, header=None, names=list(ADULT_COLUMNS))
        columns = list(ADULT_COLUMNS)
    frame.columns = columns

    unknown = sorted(set(columns) - set(ADULT_COLUMNS))
    missing = sorted(set(ADULT_COLUMNS) - set(columns))
    if unknown or missing:
        raise DatasetError(
            f"Adult schema mismatch: unknown columns {unknown}, missing columns "
            f"{missing}; expected header {list(ADULT_COLUMNS)}",
            code="schema_mismatch",
        )
    return frame[list(ADULT_COLUMNS)]


def load_adult(csv_path: Union[str, Path]) -> Dataset:
    """Load the Adult census income file.

    Rows containing ``'?'`` or empty values are dropped; ``sex`` becomes the
    sensitive attribute (Male=1, Female=0) and ``income`` the label
    (``>50K`` = 1). Neither column enters the one-hot feature matrix, so the
    model never sees ``sex`` directly. Test-split labels carrying a trailing
    ``.`` are accepted.
    """
    frame = _adult_frame(csv_path).apply(lambda col: col.str.strip())
    total = len(frame)
    cleaned = frame[~frame.isin(ADULT_MISSING_MARKERS).any(axis=1)]
    if cleaned.empty:
        raise DatasetError(
            f"Adult file {csv_path} has zero rows after cleaning", code="empty_dataset"
        )

    income = cleaned["income"].str.rstrip(".")
    labels = _map_binary(income, {">50K": 1, "<=50K": 0}, "income")
    sensitive = _map_binary(cleaned["sex"], {"Male": 1, "Female": 0}, "sex")
    features, names = _encode(cleaned, ADULT_CONTINUOUS, ADULT_CATEGORICAL)

    logger.info(
        f"Loaded Adult: {len(cleaned)} rows retained of {total}, {len(names)} features"
    )
    return Dataset(
        features=features,
        labels=labels,
        sensitive=sensitive,
        feature_names=tuple(names),
        source=DatasetSource.ADULT,
        index=cleaned.index.to_numpy(dtype=np.int64),
    )


# =====================================
# COMPAS
# =====================================


def _compas_screening_filter(frame: pd.DataFrame) -> pd.DataFrame:
    """Apply the ProPublica screening filters when their columns are present."""
    mask = pd.Series(True, index=frame.index)
    if "days_b_screening_arrest" in frame.columns:
        days = pd.to_numeric(frame["days_b_screening_arrest"], errors="coerce")
        mask &= days.between(-30, 30)
    if "is_recid" in frame.columns:
        mask &= frame["is_recid"] != "-1"
    if "c_charge_degree" in frame.columns:
        mask &= frame["c_charge_degree"] != "O"
    if "score_text" in frame.columns:
        mask &= frame["score_text"] != "N/A"
    return frame[mask]


def load_compas(csv_path: Union[str, Path]) -> Dataset:
    """Load the ProPublica two-year recidivism file.

    Only Caucasian (sensitive=1) and African-American (sensitive=0) rows are
    kept. Features are ``age_cat``, ``sex``, ``c_charge_degree`` (one-hot)
    and ``priors_count`` (standardized); the label is ``two_year_recid``.
    """
    frame = _read_csv(csv_path)
    frame.columns = [c.strip() for c in frame.columns]
    missing = sorted(set(COMPAS_REQUIRED) - set(frame.columns))
    if missing:
        raise DatasetError(
            f"COMPAS schema mismatch: missing columns {missing}; required "
            f"{list(COMPAS_REQUIRED)}",
            code="schema_mismatch",
        )
    frame = frame.apply(lambda col: col.str.strip())
    total = len(frame)

    frame = _compas_screening_filter(frame)
    used = frame[list(COMPAS_REQUIRED)]
    used = used[~used.isin(("", "N/A", "NA", "NaN")).any(axis=1)]
    used = used[used["race"].isin(list(COMPAS_RACES))]
    if used.empty:
        raise DatasetError(
            f"COMPAS file {csv_path} has zero rows after cleaning", code="empty_dataset"
        )

    labels = _map_binary(used["two_year_recid"], {"1": 1, "0": 0}, "two_year_recid")
    sensitive = _map_binary(used["race"], COMPAS_RACES, "race")
    features, names = _encode(used, COMPAS_CONTINUOUS, COMPAS_CATEGORICAL)

    logger.info(
        f"Loaded COMPAS: {len(used)} rows retained of {total}, {len(names)} features"
    )
    return Dataset(
        features=features,
        labels=labels,
        sensitive=sensitive,
        feature_names=tuple(names),
        source=DatasetSource.COMPAS,
        index=used.index.to_numpy(dtype=np.int64),
    )


# =====================================
# Synthetic
# =====================================


class SyntheticSpec(BaseModel):
    """Recipe for a Gaussian class-conditional dataset.

    ``group_rates`` are the probabilities of the (Y,A) cells in the order
    (1,1), (1,0), (0,1), (0,0). Class means sit ``separation`` apart along
    the first axis (``minority_separation`` for A=0 when given) and groups
    are ``group_shift`` apart along the second axis.
    """

    n: int = Field(ge=1)
    dim: int = Field(ge=1)
    group_rates: Tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    separation: float = 2.0
    minority_separation: Optional[float] = None
    group_shift: float = 0.0

    @field_validator("group_rates")
    @classmethod
    def validate_rates(
        cls, v: Tuple[float, float, float, float]
    ) -> Tuple[float, float, float, float]:
        if any(p < 0 or p > 1 for p in v):
            raise ValueError("group_rates entries must lie in [0, 1]")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"group_rates must sum to 1, got {sum(v)}")
        return v


def synth_generate(
    spec: Union[SyntheticSpec, Mapping[str, object]], rng_seed: int
) -> Dataset:
    """Generate a synthetic dataset; identical seeds give identical datasets."""
    if not isinstance(spec, SyntheticSpec):
        try:
            spec = SyntheticSpec.model_validate(spec)
        except ValidationError as exc:
            raise DatasetError(f"Invalid synthetic spec: {exc}", code="invalid_spec") from exc

    rng = np.random.default_rng(rng_seed)
    counts = rng.multinomial(spec.n, spec.group_rates)
    labels = np.repeat([y for y, _ in CELL_ORDER], counts)
    sensitive = np.repeat([a for _, a in CELL_ORDER], counts)

    means = np.zeros((len(labels), spec.dim))
    minority = (
        spec.separation if spec.minority_separation is None else spec.minority_separation
    )
    sep = np.where(sensitive == 1, spec.separation, minority)
    means[:, 0] = (2 * labels - 1) * sep / 2.0
    if spec.dim > 1:
        means[:, 1] = (2 * sensitive - 1) * spec.group_shift / 2.0
    features = means + rng.standard_normal((spec.n, spec.dim))

    order = rng.permutation(spec.n)
    return Dataset(
        features=features[order],
        labels=labels[order],
        sensitive=sensitive[order],
        feature_names=tuple(f"x{i}" for i in range(spec.dim)),
        source=DatasetSource.SYNTHETIC,
    )


def load_dataset(
    source: Union[DatasetSource, str],
    csv_path: Optional[Union[str, Path]] = None,
    synthetic: Optional[SyntheticSpec] = None,
    rng_seed: int = 0,
) -> Dataset:
    """Dispatch to the loader for ``source``."""
    source = DatasetSource(source)
    if source is DatasetSource.SYNTHETIC:
        if synthetic is None:
            raise DatasetError("Synthetic dataset requested without a generator spec")
        return synth_generate(synthetic, rng_seed)
    if csv_path is None:
        raise DatasetError(f"No csv_path given for dataset '{source.value}'", code="missing_file")
    loader = load_adult if source is DatasetSource.ADULT else load_compas
    return loader(csv_path)
