# lab/conf.py
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from django.conf import settings


@dataclass(frozen=True)
class Thresholds:
    """Acceptance calibrations used by the verify experiments.

    Defaults match config/settings.py; LAB_THRESHOLDS may override any of them.
    Instances are plain data so they can be shipped to worker processes.
    """

    ci_level: float = 0.95
    se_tolerance: float = 3.0
    uniqueness_slack: float = 10.0
    origin_shrink_guard: float = 0.5
    origin_quantile: float = 0.05
    origin_eps: float = 1e-6
    nonuniqueness_fraction: float = 0.99
    nonuniqueness_margin: float = 10.0
    transience_exponent: float = 0.4
    transience_fraction: float = 0.95
    blowup_fraction: float = 0.99
    blowup_median_ratio: float = 1.5
    blowup_interleave_fraction: float = 0.95
    blowup_overflow_fraction: float = 0.01
    blowup_growth: float = 0.1
    control_fraction: float = 0.01
    lemma2_relative_tolerance: float = 0.05
    lemma2_divergence_growth: float = 0.10
    lemma2_divergence_fraction: float = 0.95
    lemma2_cutoff_node: int = 32
    lemma4_stability: float = 0.02
    quadrature_rtol: float = 1e-8
    mellin_tolerance: float = 1e-6
    mc_se_tolerance: float = 4.0


def thresholds(**overrides) -> Thresholds:
    known = {f.name for f in fields(Thresholds)}
    table = getattr(settings, "LAB_THRESHOLDS", {}) or {}
    unknown = set(table) - known
    if unknown:
        raise ValueError(f"Unknown LAB_THRESHOLDS keys: {sorted(unknown)}")
    return replace(Thresholds(**table), **overrides)


def path_chunk() -> int:
    return int(getattr(settings, "LAB_PATH_CHUNK", 200))
