"""Loss metrics shared across modules."""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DataError


def rmse(predictions, targets) -> float:
    """Root mean squared error over two equal-length vectors."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ContractError(
            f"predictions and targets must be equal-length non-empty vectors, "
            f"got {p.shape} and {t.shape}"
        )
    if not np.isfinite(p).all() or not np.isfinite(t).all():
        raise DataError("rmse inputs contain non-finite values")
    return math.sqrt(float(np.mean((p - t) ** 2)))
