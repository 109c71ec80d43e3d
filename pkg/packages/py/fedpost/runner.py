"""
Experiment runner: dataset -> partition -> FedAvg -> {none | PP | FT} over a
sweep of seeds, with per-client and weighted-average reporting.

Debiasing only ever sees a client's local train set; the local test set is
touched once, for evaluation.
"""

from __future__ import annotations

import json
import logging
import math
import time
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    Field,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)

from .core.config import get_settings
from .core.exceptions import (
    ConfigurationError,
    FairnessUnmeasurableError,
    MetricInputError,
    ReportError,
)
from .core.seeding import (
    STREAM_FINETUNE,
    STREAM_SAMPLING,
    STREAM_SYNTHETIC,
    derive_seed,
    make_rng,
)
from .data import Dataset, DatasetSource, SyntheticSpec, load_dataset
from .federation import FedConfig, count_communication, fedavg_train
from .finetune import FtConfig, finetune_last_layer
from .metrics import (
    GroupRates,
    accuracy,
    balanced_accuracy,
    balanced_accuracy_from_rates,
    confusion_by_group,
    eod,
    pooled_eod,
    weighted_average,
)
from .model import ModelWeights, predict_labels, weights_digest
from .partition import ClientPartition, DegeneratePolicy, PartitionResult, split_clients
from .postprocess import (
    DerivedPredictor,
    apply_derived_batch,
    evaluate_derived_exact,
    fit_from_predictions,
)

logger = logging.getLogger(__name__)

DEFAULT_CSV_NAMES = {
    DatasetSource.ADULT: "adult.csv",
    DatasetSource.COMPAS: "compas-scores-two-years.csv",
}

METRICS = ("accuracy", "balanced_accuracy", "eod", "pooled_eod")

CSV_COLUMNS = [
    "seed",
    "client",
    "n_train",
    "n_test",
    "accuracy",
    "balanced_accuracy",
    "eod",
    "method",
    "alpha",
    "comm_rounds",
    "elapsed_s",
]


class Method(str, Enum):
    FEDAVG = "fedavg"
    PP = "pp"
    FT = "ft"


class PPMode(str, Enum):
    """How a derived predictor is scored on the test set."""

    EXPECTED = "expected"
    SAMPLED = "sampled"


class ClientStatus(str, Enum):
    OK = "ok"
    FAIRNESS_UNMEASURABLE = "fairness_unmeasurable"


# =====================================
# Configuration
# =====================================


def default_hyperparameters(dataset: Union[DatasetSource, str]) -> Dict[str, Dict[str, Any]]:
    """Per-dataset defaults for the FedAvg and fine-tuning stages.

    FedAvg and ``alpha_ft`` follow the published values. Fine-tuning runs
    200 full-batch steps at eta=0.05 under a 0.01 train balanced-accuracy
    budget.
    """
    source = DatasetSource(dataset)
    train = {"learning_rate": 0.01, "batch_size": 32, "local_epochs": 1}
    fed = {"global_rounds": 20 if source is DatasetSource.ADULT else 40, "train_config": train}
    ft = {
        "alpha_ft": 2.0 if source is DatasetSource.COMPAS else 1.0,
        "eta": 0.05,
        "rounds": 200,
        "batch_size": 256,
        "max_bacc_drop": 0.01,
    }
    return {"fed": fed, "ft": ft}


def _merge(defaults: Dict[str, Any], overrides: Any) -> Any:
    if not isinstance(overrides, dict):
        return overrides
    merged = dict(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ExperimentConfig(BaseModel):
    """One experiment: a dataset, a heterogeneity level, a method, a seed sweep."""

    dataset: DatasetSource
    csv_path: Optional[Path] = None
    synthetic: Optional[SyntheticSpec] = None
    alpha: float = Field(gt=0)
    # Heterogeneity sweep; when non-empty, one report per entry replaces ``alpha``.
    alphas: List[float] = Field(default_factory=list)
    clients: int = Field(default=4, ge=1)
    seeds: List[int] = Field(min_length=1)
    method: Method = Method.FEDAVG
    fed: FedConfig
    ft: Optional[FtConfig] = None
    model_dims: List[int] = Field(default_factory=lambda: [1])
    degenerate_partition_policy: DegeneratePolicy = DegeneratePolicy.REJECT_AND_REDRAW
    max_redraws: Optional[int] = Field(default=None, ge=0)
    train_fraction: float = Field(default=0.8, gt=0, lt=1)
    pp_mode: PPMode = PPMode.EXPECTED
    skip_debias_clients: List[int] = Field(default_factory=list)
    record_timing: bool = True

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "dataset" not in data:
            return data
        try:
            defaults = default_hyperparameters(data["dataset"])
        except ValueError:
            return data
        data = dict(data)
        if data.get("alpha") is None and data.get("alphas"):
            data["alpha"] = data["alphas"][0]
        for section in ("fed", "ft"):
            value = data.get(section)
            if isinstance(value, BaseModel):
                continue
            data[section] = _merge(defaults[section], value or {})
        return data

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v: List[int]) -> List[int]:
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        return v

    @field_validator("alphas")
    @classmethod
    def validate_alphas(cls, v: List[float]) -> List[float]:
        if any(not a > 0 for a in v):
            raise ValueError("alphas must be positive")
        return v

    @model_validator(mode="after")
    def sync_and_check(self) -> "ExperimentConfig":
        dims = tuple(self.model_dims)
        if not dims or dims[-1] != 1 or any(d < 1 for d in dims):
            raise ValueError("model_dims must be positive and end with 1")
        if self.method is Method.FT and len(dims) < 2:
            raise ValueError("method 'ft' needs a model with at least two layers")
        if self.dataset is DatasetSource.SYNTHETIC and self.synthetic is None:
            raise ValueError("dataset 'synthetic' needs a 'synthetic' generator spec")
        self.fed = self.fed.model_copy(update={"clients": self.clients, "model_dims": dims})
        return self

    @classmethod
    def from_json_file(cls, path: Union[str, Path], **overrides: Any) -> "ExperimentConfig":
        """Load a JSON config; keyword overrides replace top-level fields."""
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"Cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"Config {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigurationError(f"Config {path} must be a JSON object")
        document.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(document)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "ExperimentConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as exc:
            raise ConfigurationError(f"Invalid experiment config: {exc}") from exc

    def sweep(self) -> List["ExperimentConfig"]:
        """One single-alpha config per ``alphas`` entry, or ``[self]``."""
        if not self.alphas:
            return [self]
        return [self.model_copy(update={"alpha": a, "alphas": []}) for a in self.alphas]

    def resolved_csv_path(self) -> Optional[Path]:
        if self.dataset is DatasetSource.SYNTHETIC:
            return None
        if self.csv_path is not None:
            return self.csv_path
        return get_settings().dataset_path(DEFAULT_CSV_NAMES[self.dataset])


# =====================================
# Report types
# =====================================


class ClientResult(BaseModel):
    """Test-set metrics of one client for one seed."""

    seed: int
    client: int
    n_train: int
    n_test: int
    accuracy: float
    balanced_accuracy: Optional[float] = None
    eod: Optional[float] = None
    status: ClientStatus = ClientStatus.OK
    debiased: bool = False
    derived_predictor: Optional[DerivedPredictor] = None
    debias_seconds: float = 0.0


class WeightedMetrics(BaseModel):
    """Test-size weighted averages over clients; clients lacking a metric are left out."""

    accuracy: float
    balanced_accuracy: Optional[float] = None
    eod: Optional[float] = None


class SeedResult(BaseModel):
    seed: int
    clients: List[ClientResult]
    weighted: WeightedMetrics
    pooled_eod: Optional[float] = None
    model_digest: str
    partition_attempts: int = 1
    degenerate_clients: List[int] = Field(default_factory=list)
    train_seconds: float = 0.0
    debias_seconds: float = 0.0
    debias_max_seconds: float = 0.0

    @property
    def elapsed_seconds(self) -> float:
        return self.train_seconds + self.debias_seconds


class MetricSummary(BaseModel):
    mean: Optional[float] = None
    std: Optional[float] = None


class ExperimentReport(BaseModel):
    config: ExperimentConfig
    comm_rounds: int
    seeds: List[SeedResult]
    summary: Dict[str, MetricSummary] = Field(default_factory=dict)


# =====================================
# Pipeline
# =====================================


def _weighted(values: Sequence[Optional[float]], sizes: Sequence[int]) -> Optional[float]:
    pairs = [(v, n) for v, n in zip(values, sizes) if v is not None]
    if not pairs:
        return None
    return weighted_average([v for v, _ in pairs], [n for _, n in pairs])


def _score_rates(rates: GroupRates) -> Tuple[Optional[float], Optional[float], ClientStatus]:
    try:
        bacc: Optional[float] = balanced_accuracy_from_rates(rates)
    except MetricInputError:
        bacc = None
    try:
        return bacc, eod(rates), ClientStatus.OK
    except FairnessUnmeasurableError:
        return bacc, None, ClientStatus.FAIRNESS_UNMEASURABLE


def _score_labels(
    predictions: np.ndarray, test: Dataset
) -> Tuple[float, Optional[float], Optional[float], ClientStatus, GroupRates]:
    rates = confusion_by_group(predictions, test.labels, test.sensitive, strict=False)
    try:
        bacc: Optional[float] = balanced_accuracy(predictions, test.labels)
    except MetricInputError:
        bacc = None
    _, fairness, status = _score_rates(rates)
    return accuracy(predictions, test.labels), bacc, fairness, status, rates


def _debias_client(
    config: ExperimentConfig,
    seed: int,
    weights: ModelWeights,
    partition: ClientPartition,
) -> Tuple[ClientResult, GroupRates]:
    """Apply the configured debiasing on the client's train set and score on its test set."""
    test = partition.test
    base_test_predictions = predict_labels(weights, test)
    debias = config.method is not Method.FEDAVG and (
        partition.client_id not in config.skip_debias_clients
    )

    started = time.perf_counter()
    derived: Optional[DerivedPredictor] = None
    predictions = base_test_predictions
    debiased = False
    expected: Optional[Tuple[GroupRates, float]] = None

    if debias and config.method is Method.PP:
        try:
            derived = fit_from_predictions(
                predict_labels(weights, partition.train),
                partition.train.labels,
                partition.train.sensitive,
            )
            debiased = True
        except FairnessUnmeasurableError as exc:
            logger.warning(
                f"Seed {seed} client {partition.client_id}: derived predictor not fitted ({exc})"
            )
        if derived is not None:
            if config.pp_mode is PPMode.EXPECTED:
                expected = evaluate_derived_exact(
                    derived, base_test_predictions, test.labels, test.sensitive, strict=False
                )
            else:
                rng = make_rng(seed, STREAM_SAMPLING, partition.client_id)
                predictions = apply_derived_batch(
                    derived, base_test_predictions, test.sensitive, rng
                )

    elif debias and config.method is Method.FT:
        ft_config = config.ft.model_copy(
            update={"rng_seed": derive_seed(seed, STREAM_FINETUNE, partition.client_id)}
        )
        try:
            tuned = finetune_last_layer(weights, partition.train, ft_config)
            predictions = predict_labels(tuned, test)
            debiased = True
        except FairnessUnmeasurableError as exc:
            logger.warning(f"Seed {seed} client {partition.client_id}: fine-tuning skipped ({exc})")

    elapsed = time.perf_counter() - started if config.record_timing else 0.0

    if expected is not None:
        rates, acc = expected
        bacc, fairness, status = _score_rates(rates)
    else:
        acc, bacc, fairness, status, rates = _score_labels(predictions, test)

    if status is ClientStatus.FAIRNESS_UNMEASURABLE:
        logger.warning(
            f"Seed {seed} client {partition.client_id}: EOD unmeasurable on the test set"
        )
    logger.debug(
        f"Seed {seed} client {partition.client_id}: acc={acc:.4f} eod={fairness} "
        f"debiased={debiased}"
    )
    result = ClientResult(
        seed=seed,
        client=partition.client_id,
        n_train=partition.n_train,
        n_test=partition.n_test,
        accuracy=acc,
        balanced_accuracy=bacc,
        eod=fairness,
        status=status,
        debiased=debiased,
        derived_predictor=derived,
        debias_seconds=elapsed,
    )
    return result, rates


def load_experiment_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    """Load the configured dataset; synthetic data is regenerated per seed."""
    return load_dataset(
        config.dataset,
        csv_path=config.resolved_csv_path(),
        synthetic=config.synthetic,
        rng_seed=derive_seed(seed, STREAM_SYNTHETIC),
    )


def partition_for_seed(config: ExperimentConfig, dataset: Dataset, seed: int) -> PartitionResult:
    max_redraws = (
        config.max_redraws
        if config.max_redraws is not None
        else get_settings().DEGENERATE_MAX_REDRAWS
    )
    return split_clients(
        dataset,
        config.alpha,
        config.clients,
        seed,
        train_fraction=config.train_fraction,
        policy=config.degenerate_partition_policy,
        max_redraws=max_redraws,
    )


def run_seed(
    config: ExperimentConfig, seed: int, dataset: Optional[Dataset] = None
) -> SeedResult:
    """One seed of the pipeline."""
    if dataset is None:
        dataset = load_experiment_dataset(config, seed)
    drawn = partition_for_seed(config, dataset, seed)

    started = time.perf_counter()
    weights, _ = fedavg_train(drawn.partitions, config.fed.model_copy(update={"rng_seed": seed}))
    train_seconds = time.perf_counter() - started if config.record_timing else 0.0

    clients: List[ClientResult] = []
    client_rates: List[GroupRates] = []
    for partition in drawn.partitions:
        result, rates = _debias_client(config, seed, weights, partition)
        clients.append(result)
        client_rates.append(rates)

    sizes = [c.n_test for c in clients]
    weighted = WeightedMetrics(
        accuracy=weighted_average([c.accuracy for c in clients], sizes),
        balanced_accuracy=_weighted([c.balanced_accuracy for c in clients], sizes),
        eod=_weighted([c.eod for c in clients], sizes),
    )
    try:
        pooled: Optional[float] = pooled_eod(client_rates)
    except FairnessUnmeasurableError:
        pooled = None

    debias_times = [c.debias_seconds for c in clients]
    logger.info(
        f"Seed {seed} ({config.method.value}, alpha={config.alpha}): "
        f"weighted acc={weighted.accuracy:.4f} eod={weighted.eod}"
    )
    return SeedResult(
        seed=seed,
        clients=clients,
        weighted=weighted,
        pooled_eod=pooled,
        model_digest=weights_digest(weights),
        partition_attempts=drawn.attempts,
        degenerate_clients=drawn.degenerate_clients(),
        train_seconds=train_seconds,
        debias_seconds=float(sum(debias_times)),
        debias_max_seconds=float(max(debias_times)),
    )


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every seed of ``config`` and assemble the report."""
    shared = None
    if config.dataset is not DatasetSource.SYNTHETIC:
        shared = load_experiment_dataset(config, 0)
        logger.info(f"Loaded {config.dataset.value}: {len(shared)} samples, {shared.dim} features")

    results = [run_seed(config, seed, shared) for seed in config.seeds]
    return ExperimentReport(
        config=config,
        comm_rounds=count_communication(config.fed.global_rounds, config.clients),
        seeds=results,
        summary=summarize(results),
    )


def run_sweep(config: ExperimentConfig) -> List[ExperimentReport]:
    """Run ``config`` once per heterogeneity level in its ``alphas`` list."""
    reports = [run_experiment(single) for single in config.sweep()]
    if len(reports) > 1:
        logger.info(f"Sweep over alphas {config.alphas} finished")
    return reports


# =====================================
# Summaries and I/O
# =====================================


def _seed_metrics(result: SeedResult) -> Dict[str, Optional[float]]:
    return {
        "accuracy": result.weighted.accuracy,
        "balanced_accuracy": result.weighted.balanced_accuracy,
        "eod": result.weighted.eod,
        "pooled_eod": result.pooled_eod,
    }


def summary_frame(results: Sequence[Union[SeedResult, ExperimentReport]]) -> pd.DataFrame:
    """Mean and population std per metric across seeds (rows: metrics)."""
    seeds: List[SeedResult] = []
    for item in results:
        seeds.extend(item.seeds if isinstance(item, ExperimentReport) else [item])
    if not seeds:
        raise ReportError("summarize needs at least one seed result")
    frame = pd.DataFrame([_seed_metrics(r) for r in seeds], columns=list(METRICS), dtype=float)
    return pd.DataFrame({"mean": frame.mean(), "std": frame.std(ddof=0)})


def summarize(
    results: Sequence[Union[SeedResult, ExperimentReport]]
) -> Dict[str, MetricSummary]:
    table = summary_frame(results)

    def _clean(value: float) -> Optional[float]:
        return None if math.isnan(value) else float(value)

    return {
        metric: MetricSummary(mean=_clean(row["mean"]), std=_clean(row["std"]))
        for metric, row in table.iterrows()
    }


def report_frame(report: ExperimentReport) -> pd.DataFrame:
    """Flat table: K client rows plus one ``avg`` row per seed."""
    method = report.config.method.value
    alpha = report.config.alpha
    rows = []
    for result in report.seeds:
        common = {
            "seed": result.seed,
            "method": method,
            "alpha": alpha,
            "comm_rounds": report.comm_rounds,
            "elapsed_s": result.elapsed_seconds,
        }
        for c in result.clients:
            rows.append(
                {
                    **common,
                    "client": str(c.client),
                    "n_train": c.n_train,
                    "n_test": c.n_test,
                    "accuracy": c.accuracy,
                    "balanced_accuracy": c.balanced_accuracy,
                    "eod": c.eod,
                }
            )
        rows.append(
            {
                **common,
                "client": "avg",
                "n_train": sum(c.n_train for c in result.clients),
                "n_test": sum(c.n_test for c in result.clients),
                "accuracy": result.weighted.accuracy,
                "balanced_accuracy": result.weighted.balanced_accuracy,
                "eod": result.weighted.eod,
            }
        )
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_report(report: ExperimentReport, path: Union[str, Path], fmt: str = "json") -> None:
    """Write ``report`` as ``csv`` (flat table) or ``json`` (full structure)."""
    path = Path(path)
    try:
        if fmt == "csv":
            report_frame(report).to_csv(path, index=False, float_format="%.17g")
        elif fmt == "json":
            path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        else:
            raise ReportError(f"Unknown report format '{fmt}'", code="unknown_format")
    except OSError as exc:
        raise ReportError(f"Cannot write report to {path}: {exc}") from exc
    logger.info(f"Report written to {path} ({fmt})")


_REPORT_LIST = TypeAdapter(List[ExperimentReport])


def write_reports(
    reports: Sequence[ExperimentReport], path: Union[str, Path], fmt: str = "json"
) -> None:
    """Write a sweep: one CSV table with every report's rows, or a JSON array."""
    if len(reports) == 1:
        write_report(reports[0], path, fmt)
        return
    path = Path(path)
    try:
        if fmt == "csv":
            frame = pd.concat([report_frame(r) for r in reports], ignore_index=True)
            frame.to_csv(path, index=False, float_format="%.17g")
        elif fmt == "json":
            path.write_bytes(_REPORT_LIST.dump_json(list(reports), indent=2))
        else:
            raise ReportError(f"Unknown report format '{fmt}'", code="unknown_format")
    except OSError as exc:
        raise ReportError(f"Cannot write report to {path}: {exc}") from exc
    logger.info(f"Sweep of {len(reports)} reports written to {path} ({fmt})")


def read_report(path: Union[str, Path]) -> ExperimentReport:
    try:
        return ExperimentReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReportError(f"Cannot read report {path}: {exc}") from exc
    except ValidationError as exc:
        raise ReportError(f"Malformed report {path}: {exc}") from exc


def read_reports(path: Union[str, Path]) -> List[ExperimentReport]:
    """Read a single JSON report or a sweep array."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"Cannot read report {path}: {exc}") from exc
    if text.lstrip().startswith("["):
        try:
            reports = _REPORT_LIST.validate_json(text)
        except ValidationError as exc:
            raise ReportError(f"Malformed report {path}: {exc}") from exc
        if not reports:
            raise ReportError(f"Report file {path} holds no reports")
        return reports
    return [read_report(path)]
