"""Input validation helpers and the package exception taxonomy.

Validation failures on user-supplied values raise :class:`ValidationError`
(a ``ValueError``), while failures of persisted artifacts or running
computations raise the more specific subclasses below so callers (and the
CLI exit-code mapping) can tell "bad input" apart from "bad run".
"""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Invalid argument, configuration, or input data."""


class DataError(Exception):
    """A data file could not be parsed or violates its schema."""


class CheckpointError(Exception):
    """A checkpoint file is malformed, truncated, or inconsistent."""


class SimulationDiverged(Exception):
    """A closed-loop rollout produced a non-finite prediction."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}")


class TrainingDiverged(Exception):
    """A training loss became non-finite."""


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float64 array, optionally enforcing ndim."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"{name_a} and {name_b} must have the same shape, got {a.shape} vs {b.shape}"
        )


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value}")


def check_positive_int(value, name: str) -> None:
    if not (isinstance(value, (int, np.integer)) and value > 0):
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")


def check_in_unit_interval(value, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")
