# lab/services/rng_paths.py
"""
Reproducible discrete Brownian paths and their running time integral
J_t = int_0^t B_s ds.

Every path is keyed by a SeedSpec. Streams are numpy Philox (counter-based)
generators built from SeedSequence(base_seed, spawn_key=(stream_index, purpose, ...)),
so a path can be regenerated in isolation and streams are parallel-safe.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from lab.exceptions import InvalidParameter

logger = logging.getLogger(__name__)

# ---- Stream purposes (second spawn-key word) ----
INCREMENTS = 0
BRIDGE = 1
ADAPTIVE_BRIDGE = 2
AUXILIARY = 3

UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class SeedSpec:
    base_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.base_seed) <= UINT64_MAX):
            raise InvalidParameter(f"base_seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if int(self.stream_index) < 0:
            raise InvalidParameter(f"stream_index must be nonnegative, got {self.stream_index}")

    def stream(self, offset: int) -> "SeedSpec":
        """The SeedSpec `offset` streams further along."""
        return replace(self, stream_index=self.stream_index + int(offset))

    def generator(self, purpose: int = INCREMENTS, *tags: int) -> np.random.Generator:
        ss = np.random.SeedSequence(
            int(self.base_seed),
            spawn_key=(int(self.stream_index), int(purpose), *(int(t) for t in tags)),
        )
        return np.random.Generator(np.random.Philox(ss))

    def __str__(self) -> str:
        return f"{self.base_seed}:{self.stream_index}"


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """B sampled on `times` (times[0] = 0, B(0) = 0) with its trapezoid integral."""

    times: np.ndarray
    values: np.ndarray
    j_values: np.ndarray
    seed: Optional[SeedSpec] = field(default=None)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def negated(self) -> "BrownianPath":
        """The mirrored path -B (its integral is -J)."""
        return BrownianPath(self.times, -self.values, -self.j_values, self.seed)


def trapezoid_integral(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis, starting at 0."""
    return cumulative_trapezoid(values, times, axis=-1, initial=0.0)


def _check_horizon(horizon: float, steps: int) -> None:
    if not math.isfinite(horizon) or horizon <= 0:
        raise InvalidParameter(f"horizon must be finite and positive, got {horizon}")
    if int(steps) < 1:
        raise InvalidParameter(f"steps must be >= 1, got {steps}")


def _path_from_increments(times: np.ndarray, increments: np.ndarray, seed: Optional[SeedSpec]) -> BrownianPath:
    values = np.concatenate(([0.0], np.cumsum(increments)))
    times = np.asarray(times, dtype=float)
    return BrownianPath(times, values, trapezoid_integral(values, times), seed)


def generate(seed: SeedSpec, horizon: float, steps: int) -> BrownianPath:
    """Uniform-grid Brownian path: increments ~ Normal(0, horizon/steps)."""
    _check_horizon(horizon, steps)
    times = np.linspace(0.0, horizon, int(steps) + 1)
    z = seed.generator(INCREMENTS).standard_normal(int(steps))
    return _path_from_increments(times, z * math.sqrt(horizon / steps), seed)


def generate_on_grid(seed: SeedSpec, times: np.ndarray) -> BrownianPath:
    """Brownian path on an arbitrary strictly increasing grid starting at 0."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or times[0] != 0.0:
        raise InvalidParameter("grid must be one-dimensional, start at 0 and hold at least two points")
    dt = np.diff(times)
    if not np.all(dt > 0) or not np.isfinite(times[-1]):
        raise InvalidParameter("grid must be strictly increasing and finite")
    z = seed.generator(INCREMENTS).standard_normal(len(dt))
    return _path_from_increments(times, z * np.sqrt(dt), seed)


def graded_grid(horizon: float, steps: int, grading: float = 3.0) -> np.ndarray:
    """s_k = (k/K)^grading * horizon, clustered near 0."""
    _check_horizon(horizon, steps)
    if grading < 1.0:
        raise InvalidParameter(f"grading must be >= 1, got {grading}")
    grid = horizon * (np.arange(int(steps) + 1) / steps) ** grading
    grid[-1] = horizon
    return grid


def generate_graded(seed: SeedSpec, horizon: float, steps: int, grading: float = 3.0) -> BrownianPath:
    return generate_on_grid(seed, graded_grid(horizon, steps, grading))


def generate_many(seed: SeedSpec, n_paths: int, horizon: float, steps: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Stack the uniform-grid paths of streams seed.stream(0) ... seed.stream(n_paths-1).

    Returns (times, B, J) with B and J of shape (n_paths, steps + 1); row i is
    bit-identical to generate(seed.stream(i), horizon, steps).
    """
    _check_horizon(horizon, steps)
    if n_paths < 1:
        raise InvalidParameter(f"n_paths must be >= 1, got {n_paths}")
    times = np.linspace(0.0, horizon, int(steps) + 1)
    scale = math.sqrt(horizon / steps)
    increments = np.empty((n_paths, int(steps)))
    for i in range(n_paths):
        increments[i] = seed.stream(i).generator(INCREMENTS).standard_normal(int(steps)) * scale
    values = np.zeros((n_paths, int(steps) + 1))
    np.cumsum(increments, axis=1, out=values[:, 1:])
    logger.debug("generated %d paths of %d steps from streams %s+", n_paths, steps, seed)
    return times, values, trapezoid_integral(values, times)


def refine(path: BrownianPath, factor: int, seed: SeedSpec, tag: int = 0) -> BrownianPath:
    """
    Insert factor-1 bridge-sampled points into every parent interval.

    Parent grid points keep their values exactly; interior points are drawn
    left to right from the Brownian bridge pinned at the parent endpoints.
    J is recomputed on the fine grid.
    """
    if int(factor) != factor or factor < 2:
        raise InvalidParameter(f"refinement factor must be an integer >= 2, got {factor}")
    factor = int(factor)
    rng = seed.generator(BRIDGE, tag)
    t0, t1 = path.times[:-1], path.times[1:]
    b_right = path.values[1:]
    h = (t1 - t0) / factor

    fine_t = np.empty((len(t0), factor))
    fine_b = np.empty((len(t0), factor))
    fine_t[:, 0] = t0
    fine_b[:, 0] = path.values[:-1]
    for j in range(1, factor):
        remaining = t1 - fine_t[:, j - 1]
        mean = fine_b[:, j - 1] + (h / remaining) * (b_right - fine_b[:, j - 1])
        std = np.sqrt(h * (remaining - h) / remaining)
        fine_t[:, j] = t0 + j * h
        fine_b[:, j] = mean + std * rng.standard_normal(len(t0))

    times = np.append(fine_t.ravel(), path.times[-1])
    values = np.append(fine_b.ravel(), path.values[-1])
    return BrownianPath(times, values, trapezoid_integral(values, times), path.seed)


def insert_bridge_points(path: BrownianPath, new_times: np.ndarray, seed: SeedSpec, tag: int = 0) -> BrownianPath:
    """
    Bridge-sample B at new_times, at most one point strictly inside each parent
    interval. Parent points are kept exactly; J is recomputed.
    """
    s = np.sort(np.asarray(new_times, dtype=float))
    idx = np.searchsorted(path.times, s, side="right") - 1
    if s.size == 0:
        return path
    if idx[0] < 0 or idx[-1] >= path.steps or np.any(np.diff(idx) == 0):
        raise InvalidParameter("new times must fall one per interval inside the grid")
    t0, t1 = path.times[idx], path.times[idx + 1]
    if np.any(s <= t0) or np.any(s >= t1):
        raise InvalidParameter("new times must not coincide with grid points")
    b0, b1 = path.values[idx], path.values[idx + 1]
    mean = b0 + (s - t0) / (t1 - t0) * (b1 - b0)
    std = np.sqrt((s - t0) * (t1 - s) / (t1 - t0))
    draws = mean + std * seed.generator(BRIDGE, tag).standard_normal(len(s))
    times = np.insert(path.times, idx + 1, s)
    values = np.insert(path.values, idx + 1, draws)
    return BrownianPath(times, values, trapezoid_integral(values, times), path.seed)


def refine_graded(path: BrownianPath, seed: SeedSpec, grading: float = 3.0, tag: int = 0) -> BrownianPath:
    """
    Double the index resolution of a graded path: the result lives on
    graded_grid(horizon, 2 * steps, grading), whose even nodes are the parent's.
    """
    parent = graded_grid(path.horizon, path.steps, grading)
    if not np.allclose(path.times, parent, rtol=1e-12, atol=0.0):
        raise InvalidParameter("path is not on a graded grid with this grading")
    k = np.arange(path.steps)
    midpoints = path.horizon * ((2 * k + 1) / (2.0 * path.steps)) ** grading
    return insert_bridge_points(path, midpoints, seed, tag)


def restrict(path: BrownianPath, every: int) -> BrownianPath:
    """Keep every `every`-th grid point (inverse of refine on the grid)."""
    idx = np.arange(0, len(path.times), int(every))
    return BrownianPath(path.times[idx], path.values[idx], trapezoid_integral(path.values[idx], path.times[idx]), path.seed)


def integrated_value(path: BrownianPath, t: float) -> float:
    """J at time t by linear interpolation of the stored trapezoid integral."""
    if not (0.0 <= t <= path.horizon):
        raise InvalidParameter(f"t={t} outside [0, {path.horizon}]")
    return float(np.interp(t, path.times, path.j_values))


def bridge_midpoint(rng: np.random.Generator, b0: float, b1: float, h: float) -> float:
    """B at the midpoint of an interval of length h given its endpoint values."""
    return 0.5 * (b0 + b1) + 0.5 * math.sqrt(h) * float(rng.standard_normal())
