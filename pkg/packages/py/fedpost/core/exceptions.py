"""Exception hierarchy for fedpost.

Every error raised on a documented failure path derives from
:class:`FedPostError`, which carries a machine-readable ``code`` used by the
CLI when it reports a failure.
"""

from __future__ import annotations

from typing import Optional


class FedPostError(ValueError):
    """Base class for all fedpost domain errors."""

    code: str = "fedpost_error"

    def __init__(self, message: str, *, code: Optional[str] = None) -> None:
        super().__init__(message)
        if code is not None:
            self.code = code

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class DatasetError(FedPostError):
    """Raised when a dataset cannot be loaded or generated."""

    code = "dataset_error"


class PartitionError(FedPostError):
    """Raised when a dataset cannot be split across clients."""

    code = "partition_error"


class ModelShapeError(FedPostError):
    """Raised on incompatible layer dimensions or input sizes."""

    code = "model_shape_error"


class AggregationError(FedPostError):
    """Raised when client updates cannot be averaged."""

    code = "aggregation_error"


class MetricInputError(FedPostError):
    """Raised on malformed metric inputs (length mismatch, empty, one class)."""

    code = "metric_input_error"


class FairnessUnmeasurableError(FedPostError):
    """Raised when a (sensitive group, label) cell is empty.

    ``group`` is the sensitive attribute value and ``cell`` names the missing
    label population (``"positives"`` or ``"negatives"``).
    """

    code = "fairness_unmeasurable"

    def __init__(self, group: int, cell: str, message: Optional[str] = None) -> None:
        self.group = group
        self.cell = cell
        super().__init__(
            message or f"Rates undefined: group A={group} has no {cell}"
        )

    def to_dict(self) -> dict:
        payload = super().to_dict()
        payload.update({"group": self.group, "cell": self.cell})
        return payload


class SolverError(FedPostError):
    """Raised when the derived-predictor linear program fails internally."""

    code = "solver_error"


class FineTuneError(FedPostError):
    """Raised when final-layer fine-tuning is not applicable."""

    code = "finetune_error"


class ConfigurationError(FedPostError):
    """Raised for invalid experiment configuration."""

    code = "configuration_error"


class ReportError(FedPostError):
    """Raised when a report cannot be written or read."""

    code = "report_error"
