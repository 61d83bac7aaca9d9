"""Univariate cut-offs over anomaly scores (the second thresholding stage)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

METHODS = ("zscore", "iqr", "percentile", "fixed")


@dataclass(frozen=True)
class ThresholdSpec:
    method: str = "zscore"
    k: float = 3.0  # zscore multiplier
    mult: float = 1.5  # iqr fence multiplier
    p: float = 95.0  # percentile
    cut: float = 0.0  # fixed cut
    two_sided: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown threshold method {self.method!r}")
        if self.k <= 0 or self.mult <= 0:
            raise ValueError("multipliers must be positive")
        if not 0 < self.p < 100:
            raise ValueError("percentile must be in (0, 100)")


@dataclass(frozen=True)
class FittedThreshold:
    method: str
    lower_cut: float
    upper_cut: float = math.inf
    two_sided: bool = True
    stats: dict = field(default_factory=dict, hash=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["upper_cut"] = None if math.isinf(self.upper_cut) else self.upper_cut
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedThreshold":
        d = dict(d)
        if d.get("upper_cut") is None:
            d["upper_cut"] = math.inf
        return cls(**d)


def tukey_hinges(values: Sequence[float]) -> tuple[float, float]:
    """Lower and upper hinges: medians of the halves, median included when n is odd."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("no values")
    half = (n + 1) // 2
    return float(np.median(x[:half])), float(np.median(x[n - half:]))


def fit_threshold(scores: Sequence[float], spec: ThresholdSpec = ThresholdSpec()) -> FittedThreshold:
    """Fit cut-offs from benign validation scores."""
    s = np.asarray(scores, dtype=float)
    if spec.method == "fixed":
        return FittedThreshold("fixed", spec.cut, math.inf, spec.two_sided, {"cut": spec.cut})
    minimum = {"zscore": 2, "iqr": 4, "percentile": 1}[spec.method]
    if len(s) < minimum:
        raise ValueError(f"{spec.method} needs at least {minimum} scores, got {len(s)}")
    if spec.method == "zscore":
        mean, std = float(s.mean()), float(s.std())
        if std == 0:
            return FittedThreshold("zscore", mean, mean, spec.two_sided,
                                   {"mean": mean, "std": 0.0, "degenerate": True})
        upper = mean + spec.k * std if spec.two_sided else math.inf
        return FittedThreshold("zscore", mean - spec.k * std, upper, spec.two_sided,
                               {"mean": mean, "std": std})
    if spec.method == "iqr":
        q1, q3 = tukey_hinges(s)
        iqr = q3 - q1
        return FittedThreshold("iqr", q1 - spec.mult * iqr, q3 + spec.mult * iqr, spec.two_sided,
                               {"q1": q1, "q3": q3, "iqr": iqr})
    value = float(np.percentile(s, 100 - spec.p))
    return FittedThreshold("percentile", value, math.inf, spec.two_sided, {"percentile": spec.p, "value": value})


def apply_threshold(t: FittedThreshold, s: float) -> bool:
    """Strict comparisons: a score on a cut is benign."""
    return s < t.lower_cut or (t.two_sided and s > t.upper_cut)


def apply_batch(t: FittedThreshold, scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    flagged = s < t.lower_cut
    if t.two_sided:
        flagged |= s > t.upper_cut
    return flagged
