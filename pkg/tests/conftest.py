"""Shared fixtures for the fedpost test suite."""

import os
import sys
from pathlib import Path
from typing import Callable, Generator, Optional, Sequence

import numpy as np
import pytest

PACKAGES_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "packages", "py"))
if PACKAGES_ROOT not in sys.path:
    sys.path.insert(0, PACKAGES_ROOT)

from fedpost.core.config import get_settings  # noqa: E402
from fedpost.data import Dataset, DatasetSource, SyntheticSpec  # noqa: E402

ADULT_HEADER = (
    "age,workclass,fnlwgt,education,education-num,marital-status,occupation,"
    "relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income"
)

# race has three levels; every other categorical column is constant.
ADULT_ROWS = [
    "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K",
    "50, State-gov, 83311, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, Black, Male, 0, 0, 13, United-States, >50K",
    "38, State-gov, 215646, Bachelors, 9, Never-married, Adm-clerical, Not-in-family, White, Female, 0, 0, 40, United-States, <=50K",
    "53, State-gov, 234721, Bachelors, 7, Never-married, Adm-clerical, Not-in-family, Asian-Pac-Islander, Male, 0, 0, 40, United-States, >50K",
    "28, State-gov, 338409, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, Black, Female, 0, 0, 40, United-States, >50K",
    "37, State-gov, 284582, Bachelors, 14, Never-married, Adm-clerical, Not-in-family, White, Female, 0, 0, 40, United-States, <=50K",
    "49, State-gov, 160187, Bachelors, 5, Never-married, Adm-clerical, Not-in-family, Asian-Pac-Islander, Female, 0, 0, 16, United-States, <=50K",
    "52, State-gov, 209642, Bachelors, 9, Never-married, Adm-clerical, Not-in-family, White, Male, 0, 0, 45, United-States, >50K",
    "31, State-gov, 45781, Bachelors, 14, Never-married, Adm-clerical, Not-in-family, Black, Female, 14084, 0, 50, United-States, >50K",
    "42, State-gov, 159449, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 5178, 0, 40, United-States, <=50K",
]

COMPAS_HEADER = "id,age_cat,sex,priors_count,c_charge_degree,race,two_year_recid"
COMPAS_ROWS = [
    "1,Greater than 45,Male,0,F,Caucasian,0",
    "2,25 - 45,Male,3,F,African-American,1",
    "3,Less than 25,Female,1,M,Caucasian,1",
    "4,25 - 45,Female,0,M,Other,0",
    "5,25 - 45,Male,7,F,African-American,0",
    "6,Less than 25,Male,2,F,Caucasian,1",
]


@pytest.fixture(autouse=True)
def fresh_settings() -> Generator[None, None, None]:
    """Settings are cached per process; tests that patch the environment need a reset."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def write_csv(tmp_path: Path) -> Callable[..., Path]:
    def _write(name: str, header: Optional[str], rows: Sequence[str]) -> Path:
        lines = ([header] if header is not None else []) + list(rows)
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture
def adult_csv(write_csv) -> Path:
    return write_csv("adult.csv", ADULT_HEADER, ADULT_ROWS)


@pytest.fixture
def compas_csv(write_csv) -> Path:
    return write_csv("compas.csv", COMPAS_HEADER, COMPAS_ROWS)


def make_dataset(
    features: Sequence[Sequence[float]],
    labels: Sequence[int],
    sensitive: Sequence[int],
) -> Dataset:
    features = np.asarray(features, dtype=np.float64)
    return Dataset(
        features=features,
        labels=labels,
        sensitive=sensitive,
        feature_names=tuple(f"x{i}" for i in range(features.shape[1])),
        source=DatasetSource.SYNTHETIC,
    )


@pytest.fixture
def balanced_spec() -> SyntheticSpec:
    return SyntheticSpec(n=800, dim=3, group_rates=(0.25, 0.25, 0.25, 0.25), separation=2.0)


@pytest.fixture
def skewed_spec() -> SyntheticSpec:
    """Group-conditional label skew: the model can lean on the group axis."""
    return SyntheticSpec(
        n=4000,
        dim=3,
        group_rates=(0.35, 0.10, 0.15, 0.40),
        separation=1.0,
        group_shift=3.0,
    )


def _real_dataset_path(filename: str) -> Path:
    path = Path(os.environ.get("FEDPOST_DATA_DIR", "data")) / filename
    if not path.is_file():
        pytest.skip(f"{filename} not found under FEDPOST_DATA_DIR")
    return path


@pytest.fixture
def real_dataset_path() -> Callable[[str], Path]:
    """Public dataset file under FEDPOST_DATA_DIR; skips the test when absent."""
    return _real_dataset_path


@pytest.fixture
def dataset_factory() -> Callable[..., Dataset]:
    return make_dataset
