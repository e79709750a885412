# lab/services/timechange.py
"""
The time-change machinery: h(x) = |x|^(2a+1) sgn(x)/(2a+1) and its inverse,
the additive functional T(s) = int_0^s |X_r|^(2a) dr with its right-continuous
inverse, and the constructor of the nonzero weak solution from a Brownian path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from lab.exceptions import IntegrationError, InvalidParameter
from lab.services.rng_paths import BrownianPath, trapezoid_integral
from lab.services.sde_core import StopReason, SystemParams, Trajectory

logger = logging.getLogger(__name__)

# Tolerance used when checking that a requested t lies inside the map's range.
RANGE_SLACK = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PowerMap:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParameter(f"alpha must be positive, got {self.alpha}")

    @property
    def power(self) -> float:
        return 2.0 * self.alpha + 1.0

    @property
    def clock_exponent(self) -> float:
        """beta = 2a/(2a+1), the singularity exponent of the inverse clock."""
        return 2.0 * self.alpha / self.power

    @property
    def clock_constant(self) -> float:
        """C in |h^-1(v)|^(-2a) = C |v|^(-beta), namely (2a+1)^(-beta)."""
        return self.power ** (-self.clock_exponent)


def h_eval(pmap: PowerMap, x: ArrayLike) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.abs(x) ** pmap.power / pmap.power
    return out if out.ndim else float(out)


def h_inv_eval(pmap: PowerMap, v: ArrayLike) -> ArrayLike:
    v = np.asarray(v, dtype=float)
    out = np.sign(v) * (pmap.power * np.abs(v)) ** (1.0 / pmap.power)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class TimeChangeMap:
    s_grid: np.ndarray
    t_values: np.ndarray

    @property
    def t_max(self) -> float:
        return float(self.t_values[-1])


def build_T(traj: Trajectory, alpha: float) -> TimeChangeMap:
    """Trapezoid cumulative integral of |X|^(2 alpha) on the trajectory grid."""
    if not alpha > 0:
        raise InvalidParameter(f"alpha must be positive, got {alpha}")
    integrand = np.abs(traj.xs) ** (2.0 * alpha)
    return TimeChangeMap(np.asarray(traj.times, dtype=float), trapezoid_integral(integrand, traj.times))


def invert_T(tmap: TimeChangeMap, t: ArrayLike) -> ArrayLike:
    """
    Generalised inverse inf{s >= 0 : T(s) > t}.

    Binary search for the first sample with T > t, then linear interpolation on
    the bracketing (strictly increasing) segment; flat stretches therefore map
    to their right endpoint. t equal to the map's maximum returns the first
    grid time at which that maximum is attained.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InvalidParameter("t must be nonnegative")
    if np.any(t_arr > tmap.t_max * (1.0 + RANGE_SLACK)):
        raise InvalidParameter(f"t beyond the map's range [0, {tmap.t_max}]")
    tv, sg = tmap.t_values, tmap.s_grid
    k = np.searchsorted(tv, t_arr, side="right")
    at_top = k >= len(tv)
    k_safe = np.clip(k, 1, len(tv) - 1)
    t0, t1 = tv[k_safe - 1], tv[k_safe]
    s0, s1 = sg[k_safe - 1], sg[k_safe]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = s0 + (t_arr - t0) / (t1 - t0) * (s1 - s0)
    if np.any(at_top):
        top = sg[np.searchsorted(tv, tmap.t_max, side="left")]
        out = np.where(at_top, top, out)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def linear_power_integral(values: np.ndarray, times: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-interval integrals of |v|^(-beta), v linear between samples.

    Same-sign intervals use the closed form of the linear interpolant (which
    agrees with the trapezoid rule to second order); intervals that touch or
    cross zero use the exact finite value |b-a|^-1 (|a|^(1-b) + |b|^(1-b))/(1-b).
    Works along the last axis. Returns (pieces, crossing_mask).
    """
    if not 0.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    a, b = values[..., :-1], values[..., 1:]
    h = np.diff(times, axis=-1)
    p = 1.0 - beta
    crossing = (a * b) <= 0.0
    lo = np.minimum(np.abs(a), np.abs(b))
    hi = np.maximum(np.abs(a), np.abs(b))

    with np.errstate(divide="ignore", invalid="ignore"):
        # Same sign: h * hi^(-beta) * (1 - r^p) / (p (1 - r)), r = lo/hi in (0, 1].
        log_r = np.log(lo / hi)
        ratio = np.where(log_r == 0.0, p, np.expm1(p * log_r) / np.expm1(log_r))
        same = h * hi ** (-beta) * ratio / p
        span = np.abs(b - a)
        cross = h * (np.abs(a) ** p + np.abs(b) ** p) / (p * span)
    pieces = np.where(crossing, cross, same)
    # Both endpoints exactly zero: the interpolant vanishes on the interval.
    pieces = np.where(crossing & (span == 0.0), np.inf, pieces)
    return pieces, crossing


def construct_weak_solution(noise: BrownianPath, params: SystemParams, clock_horizon: float) -> Trajectory:
    """
    Build (X, Y) on the original clock from the time-changed system.

    On the tilde clock: V = h(x0) + y0 t + J~_t, Y~ = y0 + B~_t, X~ = h^-1(V).
    The original clock is S(t) = int_0^t |X~_s|^(-2a) ds
    = (2a+1)^(-beta) int_0^t |V_s|^(-beta) ds with beta = 2a/(2a+1), and the
    returned trajectory has times = S(t_k), xs = X~(t_k), ys = Y~(t_k).
    The tilde grid is the noise grid truncated at clock_horizon.
    """
    pmap = PowerMap(params.alpha)
    beta = pmap.clock_exponent
    if not beta < 1.0:
        raise IntegrationError("clock integrand is not integrable at a zero of V", code="integrand_singular")
    if not clock_horizon > 0:
        raise InvalidParameter(f"clock_horizon must be positive, got {clock_horizon}")
    if noise.horizon < clock_horizon * (1.0 - RANGE_SLACK):
        raise InvalidParameter(f"noise horizon {noise.horizon} is shorter than clock horizon {clock_horizon}")

    n = int(np.searchsorted(noise.times, clock_horizon * (1.0 + RANGE_SLACK), side="right"))
    tilde_t = noise.times[:n]
    v = h_eval(pmap, params.x0) + params.y0 * tilde_t + noise.j_values[:n]
    y = params.y0 + noise.values[:n]
    x = h_inv_eval(pmap, v)

    pieces, crossing = linear_power_integral(v, tilde_t, beta)
    if not np.all(np.isfinite(pieces)):
        raise IntegrationError("V vanishes on a whole interval; the clock diverges", code="integrand_singular")
    clock = np.concatenate(([0.0], np.cumsum(pmap.clock_constant * pieces)))
    if not np.isfinite(clock[-1]):
        raise IntegrationError(f"original clock overflowed at tilde time {tilde_t[-1]}", code="nonfinite")

    # Interior sign changes of V (the start node of an origin start excluded).
    zero_crossings = int(np.count_nonzero(crossing[1:])) + int(bool(crossing[0]) and v[0] != 0.0)
    if zero_crossings:
        logger.debug("weak solution: %d zero crossings of V capped", zero_crossings)

    return Trajectory(
        times=clock,
        xs=np.asarray(x, dtype=float),
        ys=y,
        stop_reason=StopReason.HORIZON,
        stop_time=float(clock[-1]),
        clock=tilde_t.copy(),
        zero_crossings=zero_crossings,
    )
