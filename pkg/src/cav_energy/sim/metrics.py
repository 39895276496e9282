"""Summary statistics of per-vehicle MPGe."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import skew

from ..errors import EmptyRecords, InvalidInput

__all__ = ["Aggregates", "collect_metrics"]


@dataclass(frozen=True)
class Aggregates:
    count: int
    mean: float
    std: float  # population
    skewness: float | None  # None when undefined (one record or zero spread)
    bin_edges: tuple[float, ...]
    bin_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "bin_edges": list(self.bin_edges),
            "bin_counts": list(self.bin_counts),
        }


def collect_metrics(records, bin_width: float = 1.0) -> Aggregates:
    """Mean, population std, histogram and sample skewness of MPGe.

    ``records`` may be numbers or objects with an ``mpge`` attribute.
    Histogram bins are aligned to multiples of ``bin_width``.
    """
    if bin_width <= 0:
        raise InvalidInput("bin width must be positive")
    values = np.array([getattr(r, "mpge", r) for r in records], dtype=float)
    if values.size == 0:
        raise EmptyRecords("no MPGe records to summarize")
    if not np.all(np.isfinite(values)):
        raise InvalidInput("MPGe values must be finite")
    mean = float(values.mean())
    std = float(values.std())
    g1 = None
    if values.size > 1 and std > 0:
        g1 = float(skew(values))
    lo = math.floor(values.min() / bin_width) * bin_width
    n_bins = max(int(math.floor(values.max() / bin_width) - lo / bin_width) + 1, 1)
    edges = lo + bin_width * np.arange(n_bins + 1)
    idx = np.clip(np.floor((values - lo) / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return Aggregates(int(values.size), mean, std, g1,
                      tuple(float(e) for e in edges), tuple(int(c) for c in counts))
