"""Pooling of a variable-size set of ground-view vectors into one descriptor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POOLINGS = ("avg", "max")


class MissingModalityError(ValueError):
    """Pooling was requested for an object with no ground views.

    Callers should route such objects through the retrieval pipeline instead.
    """


@dataclass(frozen=True)
class AggregatedFeature:
    values: np.ndarray  # (dim,) float64
    pooling: str


def aggregate(features, pooling: str = "avg") -> AggregatedFeature:
    """Collapse a nonempty set of equal-dim vectors elementwise.

    avg sums in input order and divides by the set size; max takes the
    elementwise maximum. Both are permutation invariant (avg up to float
    rounding).
    """
    if pooling not in POOLINGS:
        raise ValueError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")
    if not isinstance(features, np.ndarray):
        features = list(features)
        dims = {np.asarray(v).shape for v in features}
        if len(dims) > 1:
            raise ValueError(f"ground views disagree on dimension: {sorted(dims)}")
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(0, 0) if arr.size == 0 else arr.reshape(1, -1)
    if arr.shape[0] == 0:
        raise MissingModalityError("no ground views to aggregate")
    if arr.ndim != 2:
        raise ValueError(f"expected a (count, dim) batch, got shape {arr.shape}")
    if pooling == "avg":
        values = arr.sum(axis=0) / arr.shape[0]
    else:
        values = arr.max(axis=0)
    return AggregatedFeature(values, pooling)
