# lab/services/sde_core.py
"""
Strong integration of dX = Y dt, dY = |X|^alpha dB on a noise grid.

Fixed stepping runs a vectorised kernel over a batch of paths sharing one grid;
adaptive stepping bisects base intervals with Brownian-bridge midpoints until
the per-step displacement cap holds. Stopping events are checked at grid
points only.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from lab.exceptions import InvalidParameter
from lab.services.rng_paths import ADAPTIVE_BRIDGE, BrownianPath, SeedSpec, bridge_midpoint

logger = logging.getLogger(__name__)

# Adaptive steps below this fraction of the horizon count as step overflow.
OVERFLOW_FRACTION = 1e-15

# Relative slack when matching the noise grid against the policy horizon.
GRID_SLACK = 1e-12


class StopReason(str, enum.Enum):
    HORIZON = "horizon"
    ORIGIN = "origin"
    BLOWUP_X = "blowup_x"
    BLOWUP_Y = "blowup_y"
    STEP_OVERFLOW = "step_overflow"


class Scheme(str, enum.Enum):
    EULER = "euler"
    TAMED_EULER = "tamed_euler"


# Integer codes used inside the batch kernel.
_CODES = [StopReason.HORIZON, StopReason.ORIGIN, StopReason.BLOWUP_X, StopReason.BLOWUP_Y, StopReason.STEP_OVERFLOW]
_RUNNING = -1


@dataclass(frozen=True)
class SystemParams:
    alpha: float
    x0: float
    y0: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidParameter(f"alpha must be positive, got {self.alpha}")
        if not (math.isfinite(self.x0) and math.isfinite(self.y0)):
            raise InvalidParameter("initial state must be finite")

    @property
    def at_origin(self) -> bool:
        return self.x0 == 0.0 and self.y0 == 0.0

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "SystemParams":
        return SystemParams(self.alpha, self.x0 + dx, self.y0 + dy)

    def default_scheme(self) -> Scheme:
        return Scheme.EULER if self.alpha <= 1 else Scheme.TAMED_EULER


@dataclass(frozen=True)
class StopPolicy:
    """
    origin_eps: l-infinity radius of the origin ball (0 detects exact zero).
    blowup_level: L for |X| >= L / |Y| >= L; math.inf disables.
    blowup_component: which of X, Y is watched ("either", "x", "y").
    stop_at_origin: False runs through the origin (identically-zero solution).
    """

    horizon: float
    origin_eps: float = 1e-6
    blowup_level: float = math.inf
    blowup_component: str = "either"
    stop_at_origin: bool = True

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidParameter(f"horizon must be finite and positive, got {self.horizon}")
        if self.origin_eps < 0:
            raise InvalidParameter(f"origin_eps must be nonnegative, got {self.origin_eps}")
        if not self.blowup_level > 0:
            raise InvalidParameter(f"blowup_level must be positive, got {self.blowup_level}")
        if not self.origin_eps < self.blowup_level:
            raise InvalidParameter("origin_eps must be smaller than blowup_level")
        if self.blowup_component not in ("either", "x", "y"):
            raise InvalidParameter(f"blowup_component must be either/x/y, got {self.blowup_component!r}")


@dataclass(frozen=True)
class FixedStep:
    pass


@dataclass(frozen=True)
class AdaptiveStep:
    """Cap per-step displacement |Y| dt and |X|^alpha sqrt(dt) by max_growth
    (times the current l-infinity norm when relative)."""

    max_growth: float = 0.1
    relative: bool = True

    def __post_init__(self):
        if not self.max_growth > 0:
            raise InvalidParameter(f"max_growth must be positive, got {self.max_growth}")


StepControl = Union[FixedStep, AdaptiveStep]


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    stop_reason: StopReason
    stop_time: float
    # Noise increments consumed per step; absent for constructed paths.
    increments: Optional[np.ndarray] = None
    scheme: Optional[Scheme] = None
    adaptive: bool = False
    # Time-change bookkeeping (constructed weak solutions only).
    clock: Optional[np.ndarray] = None
    zero_crossings: int = 0

    def __len__(self) -> int:
        return len(self.times)

    @property
    def norms(self) -> np.ndarray:
        return np.maximum(np.abs(self.xs), np.abs(self.ys))


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Fixed-grid paths; values after a row's stop index are frozen."""

    times: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    stop_index: np.ndarray
    reason_codes: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.xs.shape[0]

    def stop_reasons(self) -> list:
        return [_CODES[c] for c in self.reason_codes]

    def stop_times(self) -> np.ndarray:
        return self.times[self.stop_index]

    def final(self) -> Tuple[np.ndarray, np.ndarray]:
        rows = np.arange(self.n_paths)
        return self.xs[rows, self.stop_index], self.ys[rows, self.stop_index]

    def alive_mask(self) -> np.ndarray:
        """True where the grid point is at or before the row's stop index."""
        cols = np.arange(len(self.times))
        return cols[None, :] <= self.stop_index[:, None]

    def row(self, i: int, increments: Optional[np.ndarray] = None, scheme: Optional[Scheme] = None) -> Trajectory:
        k = int(self.stop_index[i])
        return Trajectory(
            times=self.times[: k + 1].copy(),
            xs=self.xs[i, : k + 1].copy(),
            ys=self.ys[i, : k + 1].copy(),
            stop_reason=_CODES[int(self.reason_codes[i])],
            stop_time=float(self.times[k]),
            increments=None if increments is None else np.asarray(increments)[:k].copy(),
            scheme=scheme,
        )


# ---------- Coefficients ----------

def diffusion(x: np.ndarray, alpha: float) -> np.ndarray:
    """|x|^alpha, exactly 0 at x = 0 for every alpha > 0."""
    return np.abs(x) ** alpha


def tamed_diffusion(x: np.ndarray, alpha: float, dt: np.ndarray) -> np.ndarray:
    g = np.abs(x) ** alpha
    return g / (1.0 + np.sqrt(dt) * g)


# ---------- Stop evaluation ----------

def _stop_codes(x: np.ndarray, y: np.ndarray, policy: StopPolicy) -> np.ndarray:
    ax, ay = np.abs(x), np.abs(y)
    codes = np.full(x.shape, _RUNNING, dtype=np.int8)
    if policy.stop_at_origin:
        codes[np.maximum(ax, ay) <= policy.origin_eps] = 1
    # Non-finite states count as reaching the level.
    if policy.blowup_component in ("either", "y"):
        codes[(ay >= policy.blowup_level) | ~np.isfinite(y)] = 3
    if policy.blowup_component in ("either", "x"):
        codes[(ax >= policy.blowup_level) | ~np.isfinite(x)] = 2
    return codes


def _stop_code_scalar(x: float, y: float, policy: StopPolicy) -> int:
    ax, ay = abs(x), abs(y)
    watch_x = policy.blowup_component in ("either", "x")
    watch_y = policy.blowup_component in ("either", "y")
    if watch_x and (ax >= policy.blowup_level or not math.isfinite(x)):
        return 2
    if watch_y and (ay >= policy.blowup_level or not math.isfinite(y)):
        return 3
    if policy.stop_at_origin and max(ax, ay) <= policy.origin_eps:
        return 1
    return _RUNNING


# ---------- Fixed-step kernel ----------

def _horizon_steps(times: np.ndarray, horizon: float) -> int:
    n = int(np.searchsorted(times, horizon * (1.0 + GRID_SLACK), side="right")) - 1
    if times[-1] < horizon * (1.0 - GRID_SLACK):
        raise InvalidParameter(f"noise horizon {times[-1]} is shorter than policy horizon {horizon}")
    return n


def integrate_batch(
    alpha: float,
    x0: np.ndarray,
    y0: np.ndarray,
    times: np.ndarray,
    increments: np.ndarray,
    policy: StopPolicy,
    scheme: Scheme = Scheme.EULER,
) -> TrajectoryBatch:
    """
    Euler / tamed Euler for a batch of paths on a shared grid.

    x0, y0: shape (n,); increments: shape (n, steps) of Brownian increments on
    `times`. Rows are independent except for sharing the grid.
    """
    if not alpha > 0:
        raise InvalidParameter(f"alpha must be positive, got {alpha}")
    times = np.asarray(times, dtype=float)
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    n = increments.shape[0]
    if x0.shape[0] != n or y0.shape[0] != n:
        raise InvalidParameter("initial states and increments disagree on the number of paths")
    steps = _horizon_steps(times, policy.horizon)
    if increments.shape[1] < steps:
        raise InvalidParameter("fewer increments than grid steps up to the horizon")
    times = times[: steps + 1]
    dts = np.diff(times)
    tamed = Scheme(scheme) is Scheme.TAMED_EULER

    xs = np.empty((n, steps + 1))
    ys = np.empty((n, steps + 1))
    xs[:, 0], ys[:, 0] = x0, y0
    codes = _stop_codes(x0, y0, policy)
    stop_index = np.zeros(n, dtype=np.int64)
    running = codes == _RUNNING

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x, y = xs[:, k], ys[:, k]
            dt = dts[k]
            g = tamed_diffusion(x, alpha, dt) if tamed else diffusion(x, alpha)
            x_new = x + y * dt
            y_new = y + g * increments[:, k]
            xs[:, k + 1] = np.where(running, x_new, x)
            ys[:, k + 1] = np.where(running, y_new, y)
            step_codes = _stop_codes(xs[:, k + 1], ys[:, k + 1], policy)
            hit = running & (step_codes != _RUNNING)
            codes[hit] = step_codes[hit]
            stop_index[running] = k + 1
            running &= ~hit
            if not running.any():
                # Freeze the remaining columns.
                xs[:, k + 2:] = xs[:, k + 1: k + 2]
                ys[:, k + 2:] = ys[:, k + 1: k + 2]
                break

    codes[codes == _RUNNING] = 0
    return TrajectoryBatch(times, xs, ys, stop_index, codes.astype(np.int64))


# ---------- Adaptive kernel ----------

def _euler_step(x: float, y: float, dt: float, db: float, alpha: float, tamed: bool) -> Tuple[float, float]:
    g = abs(x) ** alpha
    if tamed:
        g = g / (1.0 + math.sqrt(dt) * g)
    return x + y * dt, y + g * db


def _integrate_adaptive(
    params: SystemParams,
    noise: BrownianPath,
    policy: StopPolicy,
    tamed: bool,
    control: AdaptiveStep,
    rng: np.random.Generator,
) -> Trajectory:
    alpha = params.alpha
    x, y, t = float(params.x0), float(params.y0), 0.0
    times, xs, ys, dbs = [0.0], [x], [y], []
    min_dt = OVERFLOW_FRACTION * policy.horizon
    scheme = Scheme.TAMED_EULER if tamed else Scheme.EULER

    def finish(reason: StopReason) -> Trajectory:
        return Trajectory(
            np.array(times), np.array(xs), np.array(ys), reason, times[-1], np.array(dbs), scheme, adaptive=True
        )

    code = _stop_code_scalar(x, y, policy)
    if code != _RUNNING:
        return finish(_CODES[code])

    base_t, base_b = noise.times, noise.values
    last = _horizon_steps(base_t, policy.horizon)
    for k in range(last):
        stack = [(float(base_t[k + 1]), float(base_b[k + 1]))]
        t0, b0 = float(base_t[k]), float(base_b[k])
        while stack:
            t1, b1 = stack[-1]
            h = t1 - t0
            cap = control.max_growth * (max(abs(x), abs(y)) if control.relative else 1.0)
            if abs(y) * h > cap or abs(x) ** alpha * math.sqrt(h) > cap:
                if h < min_dt:
                    logger.warning("step overflow at t=%.6g (dt=%.3g)", t, h)
                    return finish(StopReason.STEP_OVERFLOW)
                stack.append((0.5 * (t0 + t1), bridge_midpoint(rng, b0, b1, h)))
                continue
            stack.pop()
            db = b1 - b0
            x, y = _euler_step(x, y, h, db, alpha, tamed)
            t0, b0, t = t1, b1, t1
            times.append(t)
            xs.append(x)
            ys.append(y)
            dbs.append(db)
            code = _stop_code_scalar(x, y, policy)
            if code != _RUNNING:
                return finish(_CODES[code])
    return finish(StopReason.HORIZON)


# ---------- Public operations ----------

def integrate(
    params: SystemParams,
    noise: BrownianPath,
    policy: StopPolicy,
    scheme: Optional[Scheme] = None,
    dt_ctrl: StepControl = FixedStep(),
    bridge_seed: Optional[SeedSpec] = None,
) -> Trajectory:
    """
    Integrate one path. The default scheme is plain Euler for alpha <= 1 and
    tamed Euler above. Adaptive control samples sub-grid noise from the bridge
    stream of `bridge_seed` (default: the noise path's own SeedSpec).
    """
    scheme = Scheme(scheme) if scheme is not None else params.default_scheme()
    if isinstance(dt_ctrl, AdaptiveStep):
        seed = bridge_seed or noise.seed
        if seed is None:
            raise InvalidParameter("adaptive stepping needs a SeedSpec for bridge sampling")
        return _integrate_adaptive(
            params, noise, policy, scheme is Scheme.TAMED_EULER, dt_ctrl, seed.generator(ADAPTIVE_BRIDGE)
        )
    increments = noise.increments[None, :]
    batch = integrate_batch(
        params.alpha, np.array([params.x0]), np.array([params.y0]), noise.times, increments, policy, scheme
    )
    return batch.row(0, increments[0], scheme)


def integrate_pair(
    p1: SystemParams,
    p2: SystemParams,
    noise: BrownianPath,
    policy: StopPolicy,
    scheme: Optional[Scheme] = None,
) -> Tuple[Trajectory, Trajectory]:
    """Synchronous coupling: both solutions consume the same increments."""
    if p1.alpha != p2.alpha:
        raise InvalidParameter(f"coupled solutions need one alpha, got {p1.alpha} and {p2.alpha}")
    scheme = Scheme(scheme) if scheme is not None else p1.default_scheme()
    increments = np.vstack([noise.increments, noise.increments])
    batch = integrate_batch(
        p1.alpha, np.array([p1.x0, p2.x0]), np.array([p1.y0, p2.y0]), noise.times, increments, policy, scheme
    )
    return batch.row(0, increments[0], scheme), batch.row(1, increments[1], scheme)


def first_hit(traj: Trajectory, which: str = "origin", level: Optional[float] = None, origin_eps: float = 0.0) -> Optional[float]:
    """
    First grid time the event holds, or None.

    which: "origin" (l-infinity norm <= origin_eps), "level" (|X| >= level)
    or "level_y" (|Y| >= level).
    """
    if which == "origin":
        mask = traj.norms <= origin_eps
    elif which in ("level", "level_y"):
        if level is None:
            raise InvalidParameter(f"which={which!r} needs a level")
        mask = np.abs(traj.xs if which == "level" else traj.ys) >= level
    else:
        raise InvalidParameter(f"unknown event {which!r}")
    idx = np.flatnonzero(mask)
    return float(traj.times[idx[0]]) if idx.size else None


def replay(traj: Trajectory, params: SystemParams) -> Tuple[np.ndarray, np.ndarray]:
    """Recompute xs, ys from the trajectory's own increments and times."""
    if traj.increments is None or traj.scheme is None:
        raise InvalidParameter("trajectory carries no noise record to replay")
    if len(traj.increments) == 0:
        return traj.xs[:1].copy(), traj.ys[:1].copy()
    if not traj.adaptive:
        # Same vectorised kernel, same operand shapes, same bits.
        policy = StopPolicy(horizon=float(traj.times[-1]), origin_eps=0.0, stop_at_origin=False)
        batch = integrate_batch(
            params.alpha, np.array([params.x0]), np.array([params.y0]), traj.times,
            traj.increments[None, :], policy, traj.scheme,
        )
        return batch.xs[0], batch.ys[0]
    tamed = traj.scheme is Scheme.TAMED_EULER
    x, y = float(params.x0), float(params.y0)
    xs, ys = [x], [y]
    for dt, db in zip(np.diff(traj.times), traj.increments):
        x, y = _euler_step(x, y, float(dt), float(db), params.alpha, tamed)
        xs.append(x)
        ys.append(y)
    return np.array(xs), np.array(ys)


# ---------- Path functionals ----------

def path_min_norm(xs: np.ndarray, ys: np.ndarray, alive: Optional[np.ndarray] = None) -> np.ndarray:
    """Minimum l-infinity norm along the last axis (over alive points)."""
    norms = np.maximum(np.abs(xs), np.abs(ys))
    if alive is not None:
        norms = np.where(alive, norms, np.inf)
    return norms.min(axis=-1)


def sup_sq_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a - b) ** 2).max(axis=-1)


def quadratic_variation(xs: np.ndarray, times: np.ndarray, alpha: float, rule: str = "left") -> np.ndarray:
    """int |X_s|^(2 alpha) ds along the last axis (left Riemann or trapezoid)."""
    integrand = np.abs(xs) ** (2.0 * alpha)
    dts = np.diff(times, axis=-1)
    if rule == "left":
        return (integrand[..., :-1] * dts).sum(axis=-1)
    if rule == "trapezoid":
        return (0.5 * (integrand[..., 1:] + integrand[..., :-1]) * dts).sum(axis=-1)
    raise InvalidParameter(f"unknown rule {rule!r}")
