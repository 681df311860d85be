"""Statistics over many chip specimens and over repeated measurements."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

OUTLIER_SIGMAS = 2.0
SCREENING_CV = 0.02


class UndefinedCVError(ValueError):
    pass


class DegenerateDistributionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FleetSample:
    parameter: str
    values: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple((str(c), float(v)) for c, v in self.values))
        if not self.values:
            raise ValueError(f"{self.parameter}: need at least one value")
        ids = [c for c, _ in self.values]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.parameter}: chip ids must be unique")


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Sample standard deviation (n-1 divisor) over the mean."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("coefficient of variation needs >= 2 values")
    mean = float(x.mean())
    if mean == 0:
        raise UndefinedCVError("coefficient of variation undefined for zero mean")
    return float(x.std(ddof=1)) / mean


def passes_screening(values: Sequence[float], limit: float = SCREENING_CV) -> bool:
    """True if repeated measurements vary by no more than ``limit`` (relative)."""
    return abs(coefficient_of_variation(values)) <= limit


class GaussianFit(NamedTuple):
    mean: float
    std: float


def gaussian_fit(values: Sequence[float]) -> GaussianFit:
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("gaussian fit needs >= 2 values")
    std = float(x.std(ddof=1))
    if std == 0:
        warnings.warn("all values identical: degenerate (point-mass) distribution",
                      DegenerateDistributionWarning, stacklevel=2)
    return GaussianFit(float(x.mean()), std)


class Histogram(NamedTuple):
    edges: np.ndarray
    counts: np.ndarray
    probabilities: np.ndarray


def histogram(values: Sequence[float], bins: Union[int, str] = "auto") -> Histogram:
    """Equal-width histogram over [min, max]; probabilities sum to one."""
    x = np.asarray(values, dtype=float)
    if x.size < 1:
        raise ValueError("histogram needs >= 1 value")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return Histogram(np.array([lo, hi]), np.array([x.size]), np.array([1.0]))
    nbins = math.ceil(math.sqrt(x.size)) if bins == "auto" else int(bins)
    if nbins < 1:
        raise ValueError(f"bin count must be >= 1, got {bins!r}")
    counts, edges = np.histogram(x, bins=nbins, range=(lo, hi))
    probs = counts / counts.sum()
    # put the rounding residue into the largest bin so the probabilities sum to 1
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return Histogram(edges, counts, probs)


def local_maxima(h: Histogram) -> List[int]:
    """Indices of bins strictly higher than both neighbours (plateaus count once)."""
    p = list(h.probabilities)
    peaks = []
    i = 0
    while i < len(p):
        j = i
        while j + 1 < len(p) and p[j + 1] == p[i]:
            j += 1
        left = p[i - 1] if i > 0 else -1.0
        right = p[j + 1] if j + 1 < len(p) else -1.0
        if p[i] > left and p[i] > right:
            peaks.append(i)
        i = j + 1
    return peaks


@dataclass(frozen=True)
class ParameterSummary:
    parameter: str
    count: int
    mean: float
    std: float
    cv: Optional[float]
    outliers: Tuple[str, ...]


def fleet_summary(samples: Sequence[FleetSample],
                  sigmas: float = OUTLIER_SIGMAS) -> Tuple[List[ParameterSummary], Dict[str, List[str]]]:
    """Per-parameter mean/std/CV with outlier chips, and the parameters each chip is an outlier in.

    Outliers lie strictly beyond mean +- ``sigmas`` * std.  The second return
    value maps every chip flagged at least once to its outlying parameters;
    a chip that is extreme in one parameter is often ordinary in the others.
    """
    summaries = []
    per_chip: Dict[str, List[str]] = {}
    for s in sorted(samples, key=lambda s: s.parameter):
        if len(s.values) < 2:
            raise ValueError(f"{s.parameter}: fleet summary needs >= 2 chips")
        vals = sorted(s.values)
        x = np.array([v for _, v in vals])
        mean = float(x.mean())
        std = float(x.std(ddof=1))
        cv = std / mean if mean != 0 else None
        out = tuple(c for c, v in vals if abs(v - mean) > sigmas * std)
        for c in out:
            per_chip.setdefault(c, []).append(s.parameter)
        summaries.append(ParameterSummary(s.parameter, len(vals), mean, std, cv, out))
    return summaries, dict(sorted(per_chip.items()))
