# lab/services/stats.py
"""Confidence intervals shared by the experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

BOOTSTRAP_RESAMPLES = 2000


@dataclass(frozen=True)
class Estimate:
    """One report row: a point estimate with its interval and optional check."""

    row: str
    kind: str
    estimate: float
    ci_low: float
    ci_high: float
    n: int
    threshold: float = math.nan
    passed: Optional[bool] = None


@dataclass(frozen=True)
class MeanSummary:
    mean: float
    se: float
    ci_low: float
    ci_high: float
    n: int

    def z_score(self, target: float) -> float:
        if self.se == 0.0:
            return 0.0 if self.mean == target else math.inf
        return abs(self.mean - target) / self.se


def _z(level: float) -> float:
    return float(stats.norm.ppf(0.5 + level / 2.0))


def mean_ci(samples: np.ndarray, level: float = 0.95) -> MeanSummary:
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    half = _z(level) * se
    return MeanSummary(mean, se, mean - half, mean + half, n)


def variance_ci(samples: np.ndarray, level: float = 0.95) -> MeanSummary:
    """Sample variance with a delta-method standard error."""
    x = np.asarray(samples, dtype=float).ravel()
    sq = (x - x.mean()) ** 2
    n = x.size
    var = float(sq.sum() / (n - 1))
    se = float(sq.std(ddof=1) / math.sqrt(n))
    half = _z(level) * se
    return MeanSummary(var, se, var - half, var + half, n)


def covariance_ci(x: np.ndarray, y: np.ndarray, level: float = 0.95) -> MeanSummary:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    prod = (x - x.mean()) * (y - y.mean())
    n = x.size
    cov = float(prod.sum() / (n - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n))
    half = _z(level) * se
    return MeanSummary(cov, se, cov - half, cov + half, n)


def proportion_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float, float]:
    """(fraction, low, high) with the Wilson score interval."""
    result = stats.binomtest(int(successes), int(n))
    ci = result.proportion_ci(confidence_level=level, method="wilson")
    return successes / n, float(ci.low), float(ci.high)


def quantile_ci(samples: np.ndarray, q: float, level: float, rng: np.random.Generator) -> tuple[float, float, float]:
    """Sample quantile with a percentile-bootstrap interval."""
    x = np.asarray(samples, dtype=float).ravel()
    point = float(np.quantile(x, q))
    if np.all(x == x[0]):
        return point, point, point
    res = stats.bootstrap(
        (x,),
        lambda s, axis: np.quantile(s, q, axis=axis),
        confidence_level=level,
        n_resamples=BOOTSTRAP_RESAMPLES,
        method="percentile",
        vectorized=True,
        rng=rng,
    )
    return point, float(res.confidence_interval.low), float(res.confidence_interval.high)


def paired_bootstrap_ci(arrays, statistic, level: float, rng: np.random.Generator) -> tuple[float, float, float]:
    """
    statistic(*arrays, axis=-1) with a percentile-bootstrap interval that
    resamples whole paths (rows shared across the arrays).
    """
    arrays = tuple(np.asarray(a, dtype=float).ravel() for a in arrays)
    point = float(statistic(*arrays, axis=-1))
    res = stats.bootstrap(
        arrays,
        statistic,
        paired=True,
        confidence_level=level,
        n_resamples=BOOTSTRAP_RESAMPLES,
        method="percentile",
        vectorized=True,
        rng=rng,
    )
    return point, float(res.confidence_interval.low), float(res.confidence_interval.high)


def difference_ci(p1: float, n1: int, p2: float, n2: int, level: float = 0.95) -> tuple[float, float, float]:
    """p1 - p2 for two independent proportions, normal-approximation interval."""
    se = math.sqrt(p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2)
    diff = p1 - p2
    half = _z(level) * se
    return diff, diff - half, diff + half
