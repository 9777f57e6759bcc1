"""Light input-validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Sequence

from .data import DatasetRecord
from .errors import ValidationError


def check_records(X) -> list[DatasetRecord]:
    """Coerce estimator input into a validated list of dataset records."""
    if isinstance(X, DatasetRecord):
        X = [X]
    try:
        records = list(X)
    except TypeError:
        raise ValidationError(
            f"expected an iterable of DatasetRecord, got {type(X).__name__}"
        ) from None
    if not records:
        raise ValidationError("at least one record is required")
    for i, record in enumerate(records):
        if not isinstance(record, DatasetRecord):
            raise ValidationError(f"item {i} is not a DatasetRecord: {type(record).__name__}")
        record.validate()
    return records


def check_probability(value: float, name: str) -> float:
    if not (0.0 < float(value) < 1.0):
        raise ValidationError(f"{name} must lie strictly between 0 and 1, got {value}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, int) or value <= 0:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return value
