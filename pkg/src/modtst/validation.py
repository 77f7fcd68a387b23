"""Input-validation helpers shared by the estimator wrappers."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import ContractError


def check_texts(X) -> list[str]:
    """Coerce ``X`` to a list of strings, rejecting anything else."""
    if isinstance(X, str):
        raise ContractError("expected a sequence of strings, got a single string")
    out = list(X)
    for i, x in enumerate(out):
        if not isinstance(x, str):
            raise ContractError(f"item {i} is {type(x).__name__}, expected str")
    return out


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(list(y))
    if y.shape != (n,):
        raise ContractError(f"expected {n} labels, got shape {y.shape}")
    return y


def check_pairs_match(sources: Sequence, targets: Sequence) -> None:
    if len(sources) != len(targets):
        raise ContractError(f"{len(sources)} sources vs {len(targets)} targets")


def check_unit_interval(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ContractError(f"{name}={value} must lie in [0, 1]")
    return value


def check_positive(name: str, value: int) -> int:
    if int(value) != value or value < 1:
        raise ContractError(f"{name}={value} must be a positive integer")
    return int(value)
