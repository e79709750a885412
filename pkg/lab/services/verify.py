# lab/services/verify.py
"""
Statistical experiments: each check_* fans a path workload out through the
pool, reduces the per-path arrays and returns a Verdict.

Worker functions are module level and receive plain data only (SeedSpec,
floats, tuples) so they run unchanged in a process pool. Path i of a run
always uses seed.stream(i), whatever the chunking.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from lab.conf import Thresholds, path_chunk, thresholds as load_thresholds
from lab.exceptions import InvalidParameter
from lab.services import moments
from lab.services.pool import gather
from lab.services.rng_paths import (
    AUXILIARY,
    BrownianPath,
    SeedSpec,
    generate,
    generate_graded,
    generate_many,
    refine,
    refine_graded,
)
from lab.services.sde_core import (
    AdaptiveStep,
    Scheme,
    StopPolicy,
    StopReason,
    SystemParams,
    diffusion,
    first_hit,
    integrate,
    integrate_batch,
    path_min_norm,
    quadratic_variation,
    replay,
    sup_sq_difference,
    tamed_diffusion,
)
from lab.services.stats import (
    Estimate,
    covariance_ci,
    difference_ci,
    mean_ci,
    paired_bootstrap_ci,
    proportion_ci,
    quantile_ci,
    variance_ci,
)
from lab.services.timechange import construct_weak_solution

logger = logging.getLogger(__name__)

# Bootstrap streams live on the AUXILIARY purpose, tagged per use.
_TAG_QUANTILE = 1
_TAG_RATIO = 2
_TAG_DENSITY = 3
_TAG_MC = 4


@dataclass(frozen=True, eq=False)
class Verdict:
    name: str
    statistic: float
    ci_low: float
    ci_high: float
    threshold: float
    passed: bool
    n_paths: int
    seed: SeedSpec
    estimates: Tuple[Estimate, ...] = ()
    # Per-path arrays kept for plots; never written to CSV.
    samples: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class BlowupCurve:
    levels: np.ndarray
    hit_fractions: np.ndarray
    median_hit_times: np.ndarray
    alpha: float = math.nan
    horizon: float = math.nan

    def __post_init__(self):
        if np.any(np.diff(self.hit_fractions) > 0):
            raise AssertionError("hit fractions must be nonincreasing in the level")


def _resolve(thr: Optional[Thresholds], chunk: Optional[int]) -> Tuple[Thresholds, int]:
    return (thr or load_thresholds()), (chunk or path_chunk())


def _fraction_row(row: str, hits: np.ndarray, threshold: float, passed: Optional[bool], level: float) -> Estimate:
    hits = np.asarray(hits, dtype=bool)
    frac, lo, hi = proportion_ci(int(hits.sum()), hits.size, level)
    return Estimate(row, "fraction", frac, lo, hi, hits.size, threshold, passed)


def _mean_row(row: str, samples: np.ndarray, target: float, se_tolerance: float, level: float) -> Estimate:
    s = mean_ci(samples, level)
    return Estimate(row, "mean", s.mean, s.ci_low, s.ci_high, s.n, target, s.z_score(target) <= se_tolerance)


def _at_times(times: np.ndarray, arr: np.ndarray, points: Sequence[float]) -> np.ndarray:
    """Linear interpolation of each row of arr at the given times; shape (rows, len(points))."""
    out = np.empty((arr.shape[0], len(points)))
    for c, t in enumerate(points):
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        out[:, c] = arr[:, k] * (1.0 - w) + arr[:, k + 1] * w
    return out


def _steps_for(horizon: float, dt: float) -> int:
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9 * horizon:
        raise InvalidParameter(f"dt={dt} does not divide horizon {horizon}")
    return steps


def _check_start(alpha: float, x0: float, y0: float, lower: float = 0.5) -> SystemParams:
    if not alpha > lower:
        raise InvalidParameter(f"alpha must exceed {lower}, got {alpha}")
    params = SystemParams(alpha, x0, y0)
    if params.at_origin:
        raise InvalidParameter("the start must differ from the origin")
    return params


# ---------- Moments of (B, J) ----------

def _var_j_worker(start: int, count: int, seed: SeedSpec, horizon: float, steps: int, points: tuple):
    times, b, j = generate_many(seed.stream(start), count, horizon, steps)
    return _at_times(times, b, points), _at_times(times, j, points)


def check_var_j(
    t_points: Sequence[float] = (0.5, 1.0, 2.0),
    n_paths: int = 100_000,
    steps: int = 200,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """Var(B_t) = t and Var(J_t) = t^3/3 at each t, within se_tolerance standard errors."""
    thr, chunk = _resolve(thr, chunk)
    points = tuple(float(t) for t in t_points)
    if not points or min(points) <= 0:
        raise InvalidParameter("t points must be positive")
    b, j = gather(_var_j_worker, n_paths, (seed, max(points), steps, points), workers, chunk)

    rows, z_max, worst = [], 0.0, None
    for c, t in enumerate(points):
        for label, sample, target in ((f"var_b[t={t:g}]", b[:, c], t), (f"var_j[t={t:g}]", j[:, c], t**3 / 3.0)):
            s = variance_ci(sample, thr.ci_level)
            z = s.z_score(target)
            rows.append(Estimate(label, "variance", s.mean, s.ci_low, s.ci_high, s.n, target, z <= thr.se_tolerance))
            if label.startswith("var_j") and (worst is None or z >= z_max):
                z_max, worst = z, rows[-1]
    passed = all(r.passed for r in rows)
    logger.info("var_j: max z=%.3f over t=%s (n=%d)", z_max, points, n_paths)
    return Verdict("var_j", worst.estimate, worst.ci_low, worst.ci_high, worst.threshold, passed, n_paths, seed, tuple(rows))


def check_covariance(
    t: float = 1.0,
    n_paths: int = 100_000,
    steps: int = 200,
    density_points: int = 10_000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """Empirical Cov(B_t, J_t) against [[t, t^2/2], [t^2/2, t^3/3]] and the t^-2 density bound."""
    thr, chunk = _resolve(thr, chunk)
    b, j = gather(_var_j_worker, n_paths, (seed, float(t), steps, (float(t),)), workers, chunk)
    b, j = b[:, 0], j[:, 0]
    pair = moments.GaussPair(t)
    targets = pair.cov
    rows = []
    for label, (x, y), target in (
        ("cov_bb", (b, b), targets[0, 0]),
        ("cov_bj", (b, j), targets[0, 1]),
        ("cov_jj", (j, j), targets[1, 1]),
    ):
        s = covariance_ci(x, y, thr.ci_level)
        rows.append(Estimate(label, "covariance", s.mean, s.ci_low, s.ci_high, s.n, target, s.z_score(target) <= thr.se_tolerance))

    # Density bound on random points, spread over four decades of t.
    rng = seed.generator(AUXILIARY, _TAG_DENSITY)
    ts = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), density_points))
    z = rng.standard_normal((density_points, 2)) * 3.0
    violations = np.zeros(density_points, dtype=bool)
    det_err = 0.0
    for k in range(density_points):
        pair = moments.GaussPair(float(ts[k]))
        sd = np.sqrt(np.diag(pair.cov))
        x, y = z[k] * sd
        violations[k] = moments.joint_density(pair, x, y) > moments.density_bound(pair)
        det_err = max(det_err, abs(np.linalg.det(pair.cov) / pair.det - 1.0))
    rows.append(_fraction_row("density_violations", violations, 0.0, not violations.any(), thr.ci_level))
    rows.append(Estimate("det_relative_error", "max", det_err, det_err, det_err, density_points, 1e-12, det_err <= 1e-12))

    head = rows[1]
    passed = all(r.passed for r in rows)
    logger.info("covariance: t=%g passed=%s", t, passed)
    return Verdict("covariance", head.estimate, head.ci_low, head.ci_high, head.threshold, passed, n_paths, seed, tuple(rows))


# ---------- Strong scheme checks ----------

def _isometry_worker(start, count, seed, alpha, x0, y0, horizon, steps, scheme):
    times, b, _ = generate_many(seed.stream(start), count, horizon, steps)
    increments = np.diff(b, axis=1)
    policy = StopPolicy(horizon=horizon, origin_eps=0.0, stop_at_origin=False)
    batch = integrate_batch(alpha, np.full(count, x0), np.full(count, y0), times, increments, policy, scheme)
    dts = np.diff(batch.times)
    xs = batch.xs[:, :-1]
    with np.errstate(over="ignore", invalid="ignore"):
        g = tamed_diffusion(xs, alpha, dts) if Scheme(scheme) is Scheme.TAMED_EULER else diffusion(xs, alpha)
        qv = ((g**2) * dts).sum(axis=1)
    _, y_end = batch.final()
    return y_end - y0, qv


def check_isometry(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    horizon: float = 1.0,
    steps: int = 1000,
    n_paths: int = 10_000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """
    Mean of Y_T - y0 is zero and E(Y_T - y0)^2 equals the expected quadratic
    variation sum |X_k|^(2 alpha) dt (the scheme's own coefficient).
    """
    thr, chunk = _resolve(thr, chunk)
    params = SystemParams(alpha, x0, y0)
    scheme = params.default_scheme()
    dy, qv = gather(_isometry_worker, n_paths, (seed, alpha, x0, y0, horizon, steps, scheme.value), workers, chunk)
    martingale = _mean_row("martingale", dy, 0.0, thr.se_tolerance, thr.ci_level)
    isometry = _mean_row("isometry_gap", dy**2 - qv, 0.0, thr.se_tolerance, thr.ci_level)
    qv_row = mean_ci(qv, thr.ci_level)
    rows = (
        martingale,
        isometry,
        Estimate("quadratic_variation", "mean", qv_row.mean, qv_row.ci_low, qv_row.ci_high, qv_row.n),
    )
    passed = bool(martingale.passed and isometry.passed)
    logger.info("isometry: alpha=%g gap=%.4g passed=%s", alpha, isometry.estimate, passed)
    return Verdict("isometry", isometry.estimate, isometry.ci_low, isometry.ci_high, 0.0, passed, n_paths, seed, rows)


def check_zero_solution(alpha: float, horizon: float = 1.0, steps: int = 1000, seed: SeedSpec = SeedSpec(0)) -> Verdict:
    """The identically-zero solution: integrated from the origin without stopping, then replayed."""
    params = SystemParams(alpha, 0.0, 0.0)
    noise = generate(seed, horizon, steps)
    policy = StopPolicy(horizon=horizon, origin_eps=0.0, stop_at_origin=False)
    traj = integrate(params, noise, policy, Scheme.EULER)
    xs, ys = replay(traj, params)
    deviation = float(max(np.abs(traj.xs).max(), np.abs(traj.ys).max()))
    exact = bool(np.array_equal(xs, traj.xs) and np.array_equal(ys, traj.ys))
    rows = (
        Estimate("zero_max_norm", "max", deviation, deviation, deviation, 1, 0.0, deviation == 0.0),
        Estimate("zero_replay_exact", "flag", float(exact), float(exact), float(exact), 1, 1.0, exact),
    )
    passed = exact and deviation == 0.0 and traj.stop_reason is StopReason.HORIZON
    return Verdict("zero_solution", deviation, deviation, deviation, 0.0, passed, 1, seed, rows)


def _uniqueness_worker(start, count, seed, alpha, x0, y0, eps_list, horizon, steps, scheme, offset_first):
    times, b, _ = generate_many(seed.stream(start), count, horizon, steps)
    increments = np.diff(b, axis=1)
    doubled = np.vstack([increments, increments])
    policy = StopPolicy(horizon=horizon, origin_eps=0.0, stop_at_origin=False)
    out = np.empty((count, len(eps_list)))
    for c, eps in enumerate(eps_list):
        plain, shifted = np.full(count, x0), np.full(count, x0 + eps)
        xs0 = np.concatenate([shifted, plain] if offset_first else [plain, shifted])
        ys0 = np.full(2 * count, y0)
        batch = integrate_batch(alpha, xs0, ys0, times, doubled, policy, scheme)
        out[:, c] = sup_sq_difference(batch.xs[:count], batch.xs[count:])
    return (out,)


def check_uniqueness(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    eps_list: Sequence[float] = (1e-2, 1e-3, 1e-4),
    n_paths: int = 1000,
    horizon: float = 1.0,
    dt: float = 1e-3,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
    offset_first: bool = False,
) -> Verdict:
    """
    D(eps) = E sup_t (X^1_t - X^2_t)^2 for starts offset by eps under one noise;
    `offset_first` moves the offset to the first trajectory of each pair.
    Passes when D is nonincreasing as eps decreases and
    D(eps_min)/D(eps_max) <= (eps_min/eps_max)^2 * uniqueness_slack.
    """
    thr, chunk = _resolve(thr, chunk)
    params = _check_start(alpha, x0, y0)
    eps = tuple(sorted((float(e) for e in eps_list), reverse=True))
    if len(eps) < 2 or eps[-1] < 0:
        raise InvalidParameter("need at least two nonnegative offsets")
    steps = _steps_for(horizon, dt)
    (sup_sq,) = gather(
        _uniqueness_worker, n_paths, (seed, alpha, x0, y0, eps, horizon, steps, params.default_scheme().value, offset_first), workers, chunk
    )

    rows, d = [], []
    for c, e in enumerate(eps):
        s = mean_ci(sup_sq[:, c], thr.ci_level)
        d.append(s.mean)
        exact_zero = (s.mean == 0.0) if e == 0.0 else None
        rows.append(Estimate(f"D[eps={e:g}]", "mean", s.mean, s.ci_low, s.ci_high, s.n, 0.0 if e == 0 else math.nan, exact_zero))
    monotone = all(b <= a for a, b in zip(d[:-1], d[1:]))

    positive = [c for c, e in enumerate(eps) if e > 0]
    big, small = positive[0], positive[-1]
    bound = (eps[small] / eps[big]) ** 2 * thr.uniqueness_slack
    ratio, lo, hi = paired_bootstrap_ci(
        (sup_sq[:, small], sup_sq[:, big]),
        lambda a, b, axis: a.mean(axis=axis) / b.mean(axis=axis),
        thr.ci_level,
        seed.generator(AUXILIARY, _TAG_RATIO),
    )
    rows.append(Estimate("D_monotone", "flag", float(monotone), float(monotone), float(monotone), n_paths, 1.0, monotone))
    passed = monotone and ratio <= bound and all(r.passed is not False for r in rows)
    logger.info("uniqueness: alpha=%g ratio=%.4g bound=%.4g passed=%s", alpha, ratio, bound, passed)
    return Verdict("uniqueness", ratio, lo, hi, bound, passed, n_paths, seed, tuple(rows), {"sup_sq": sup_sq})


# ---------- Origin avoidance ----------

def _origin_worker(start, count, seed, alpha, x0, y0, horizon, base_steps, factors, origin_eps, scheme):
    levels = [[] for _ in range(len(factors) + 1)]
    for i in range(count):
        path_seed = seed.stream(start + i)
        path = generate(path_seed, horizon, base_steps)
        levels[0].append(path)
        for level, factor in enumerate(factors, start=1):
            path = refine(path, factor, path_seed, tag=level)
            levels[level].append(path)
    policy = StopPolicy(horizon=horizon, origin_eps=origin_eps)
    out = np.empty((count, len(levels)))
    for c, paths in enumerate(levels):
        increments = np.vstack([p.increments for p in paths])
        batch = integrate_batch(alpha, np.full(count, x0), np.full(count, y0), paths[0].times, increments, policy, scheme)
        out[:, c] = path_min_norm(batch.xs, batch.ys, batch.alive_mask())
    return (out,)


def check_origin_avoidance(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    n_paths: int = 1000,
    horizon: float = 5.0,
    dt_list: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """
    q(dt) = origin_quantile of the path minimum of the l-infinity norm, each
    finer dt a bridge refinement of the same noise. Passes when every q is
    positive and q(dt_next) >= origin_shrink_guard * q(dt).
    """
    thr, chunk = _resolve(thr, chunk)
    params = _check_start(alpha, x0, y0)
    dts = tuple(float(d) for d in dt_list)
    if not dts or any(b >= a for a, b in zip(dts[:-1], dts[1:])):
        raise InvalidParameter("dt_list must be strictly decreasing")
    base_steps = _steps_for(horizon, dts[0])
    factors = []
    for a, b in zip(dts[:-1], dts[1:]):
        f = int(round(a / b))
        if f < 2 or abs(f * b - a) > 1e-9 * a:
            raise InvalidParameter(f"dt {b} is not an integer refinement of {a}")
        factors.append(f)

    (minima,) = gather(
        _origin_worker, n_paths,
        (seed, alpha, x0, y0, horizon, base_steps, tuple(factors), thr.origin_eps, params.default_scheme().value),
        workers, chunk,
    )
    q_level = thr.origin_quantile
    rows, qs = [], []
    for c, dt in enumerate(dts):
        q, lo, hi = quantile_ci(minima[:, c], q_level, thr.ci_level, seed.generator(AUXILIARY, _TAG_QUANTILE, c))
        qs.append(q)
        rows.append(Estimate(f"q{q_level:g}[dt={dt:g}]", "quantile", q, lo, hi, n_paths, 0.0, q > 0.0))

    if len(dts) > 1:
        def worst_ratio(*cols, axis):
            qq = [np.quantile(col, q_level, axis=axis) for col in cols]
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.min(np.stack([b / a for a, b in zip(qq[:-1], qq[1:])]), axis=0)

        stat, lo, hi = paired_bootstrap_ci(
            tuple(minima[:, c] for c in range(len(dts))), worst_ratio, thr.ci_level, seed.generator(AUXILIARY, _TAG_RATIO)
        )
    else:
        stat = lo = hi = 1.0
    guard = thr.origin_shrink_guard
    passed = all(q > 0.0 for q in qs) and stat >= guard
    logger.info("origin: alpha=%g q=%s worst ratio=%.4g passed=%s", alpha, ["%.4g" % q for q in qs], stat, passed)
    return Verdict("origin", stat, lo, hi, guard, passed, n_paths, seed, tuple(rows), {"minima": minima, "dt": np.array(dts)})


# ---------- Constructed weak solutions ----------

def _weak_worker(start, count, seed, alpha, x0, y0, clock_horizon, steps, grading, refine_clock):
    params = SystemParams(alpha, x0, y0)
    out = np.full((count, 6), np.nan)
    for i in range(count):
        path_seed = seed.stream(start + i)
        if grading:
            noise = generate_graded(path_seed, clock_horizon, steps, grading)
        else:
            noise = generate(path_seed, clock_horizon, steps)
        traj = construct_weak_solution(noise, params, clock_horizon)
        qv = quadratic_variation(traj.xs, traj.times, alpha, rule="trapezoid")
        out[i, :5] = traj.xs[-1], traj.xs[1], traj.ys[-1] - y0, qv, traj.times[-1]
        if refine_clock:
            fine = refine_graded(noise, path_seed, grading, tag=1) if grading else refine(noise, 2, path_seed, tag=1)
            out[i, 5] = construct_weak_solution(fine, params, clock_horizon).times[-1]
    return (out,)


def _weak_samples(alpha, x0, y0, clock_horizon, steps, grading, refine_clock, n_paths, seed, workers, chunk):
    (out,) = gather(
        _weak_worker, n_paths, (seed, alpha, x0, y0, clock_horizon, steps, grading, refine_clock), workers, chunk
    )
    return {"x_final": out[:, 0], "x_first": out[:, 1], "dy": out[:, 2], "qv": out[:, 3], "clock": out[:, 4], "clock_fine": out[:, 5]}


def check_weak_isometry(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    clock_horizon: float = 1.0,
    steps: int = 1000,
    n_paths: int = 10_000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """E(Y_T - y0)^2 against E int |X|^(2 alpha) ds on the constructed path's own clock."""
    thr, chunk = _resolve(thr, chunk)
    if not 0 < alpha < 1 and x0 == 0.0 and y0 == 0.0:
        raise InvalidParameter("the construction from the origin needs 0 < alpha < 1")
    grading = 3.0 if (x0 == 0.0 and y0 == 0.0) else None
    s = _weak_samples(alpha, x0, y0, clock_horizon, steps, grading, False, n_paths, seed, workers, chunk)
    gap = _mean_row("weak_isometry_gap", s["dy"] ** 2 - s["qv"], 0.0, thr.se_tolerance, thr.ci_level)
    passed = bool(gap.passed)
    logger.info("weak isometry: alpha=%g start=(%g, %g) gap=%.4g passed=%s", alpha, x0, y0, gap.estimate, passed)
    return Verdict("weak_isometry", gap.estimate, gap.ci_low, gap.ci_high, 0.0, passed, n_paths, seed, (gap,))


def check_nonuniqueness(
    alpha: float,
    n_paths: int = 1000,
    tilde_horizon: float = 1.0,
    steps: int = 1000,
    grading: float = 3.0,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """
    Weak solutions built from the origin end away from it while the zero
    solution stays put. Statistic: fraction of seeds with
    |X_final| > nonuniqueness_margin * origin_eps.
    """
    thr, chunk = _resolve(thr, chunk)
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}")
    s = _weak_samples(alpha, 0.0, 0.0, tilde_horizon, steps, grading, True, n_paths, seed, workers, chunk)

    level = thr.nonuniqueness_margin * thr.origin_eps
    away = np.abs(s["x_final"]) > level
    frac, lo, hi = proportion_ci(int(away.sum()), n_paths, thr.ci_level)
    primary = frac >= thr.nonuniqueness_fraction

    positive = s["x_first"] > 0
    sign_mean = mean_ci(positive.astype(float), thr.ci_level)
    # Informational rows: they describe the construction but do not gate the verdict.
    sign_row = Estimate("sign_positive", "fraction", sign_mean.mean, sign_mean.ci_low, sign_mean.ci_high, n_paths, 0.5)
    gap = _mean_row("weak_isometry_gap", s["dy"] ** 2 - s["qv"], 0.0, thr.se_tolerance, thr.ci_level)
    change, c_lo, c_hi = paired_bootstrap_ci(
        (s["clock_fine"], s["clock"]),
        lambda fine, coarse, axis: fine.mean(axis=axis) / coarse.mean(axis=axis) - 1.0,
        thr.ci_level,
        seed.generator(AUXILIARY, _TAG_RATIO),
    )
    clock_row = Estimate("clock_refinement_change", "ratio", change, c_lo, c_hi, n_paths, 0.05)
    zero = check_zero_solution(alpha, tilde_horizon, steps, seed)

    rows = (
        Estimate("away_from_origin", "fraction", frac, lo, hi, n_paths, thr.nonuniqueness_fraction, primary),
        sign_row,
        gap,
        clock_row,
    ) + zero.estimates
    passed = bool(primary and gap.passed and zero.passed)
    logger.info("nonuniqueness: alpha=%g fraction=%.4f passed=%s", alpha, frac, passed)
    return Verdict("nonuniqueness", frac, lo, hi, thr.nonuniqueness_fraction, passed, n_paths, seed, rows,
                   {"x_final": s["x_final"]})


# ---------- Transience of (B, J) ----------

def transience_hits(path: BrownianPath, checkpoints: Sequence[float], exponent: float) -> np.ndarray:
    """Per checkpoint T: min over [T/2, T] of max(|B|, |J|) exceeds max(T^exponent, 1)."""
    norm = np.maximum(np.abs(path.values), np.abs(path.j_values))
    hits = np.empty(len(checkpoints), dtype=bool)
    for c, t in enumerate(checkpoints):
        lo = int(np.searchsorted(path.times, t / 2.0, side="left"))
        hi = int(np.searchsorted(path.times, t * (1.0 + 1e-12), side="right"))
        hits[c] = norm[lo:hi].min() > max(t**exponent, 1.0)
    return hits


def _transience_worker(start, count, seed, horizon, steps, checkpoints, exponent):
    out = np.empty((count, len(checkpoints)), dtype=bool)
    for i in range(count):
        out[i] = transience_hits(generate(seed.stream(start + i), horizon, steps), checkpoints, exponent)
    return (out,)


def check_transience(
    n_paths: int = 1000,
    checkpoints: Sequence[float] = (1e2, 1e3, 1e4),
    steps: int = 50_000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    thr, chunk = _resolve(thr, chunk)
    cps = tuple(float(c) for c in checkpoints)
    if not cps or cps[0] <= 0 or any(b <= a for a, b in zip(cps[:-1], cps[1:])):
        raise InvalidParameter("checkpoints must be positive and increasing")
    (hits,) = gather(_transience_worker, n_paths, (seed, cps[-1], steps, cps, thr.transience_exponent), workers, chunk)

    rows = [_fraction_row(f"r[T={t:g}]", hits[:, c], max(t**thr.transience_exponent, 1.0), None, thr.ci_level)
            for c, t in enumerate(cps)]
    fractions = [r.estimate for r in rows]
    monotone = all(b >= a for a, b in zip(fractions[:-1], fractions[1:]))
    final = rows[-1]
    passed = monotone and final.estimate >= thr.transience_fraction
    rows.append(Estimate("r_monotone", "flag", float(monotone), float(monotone), float(monotone), n_paths, 1.0, monotone))
    # Informational: does the whole interval clear the fraction, not just the point estimate.
    rows.append(Estimate("r_final_lower_bound", "ci", final.ci_low, final.ci_low, final.ci_high, n_paths,
                         thr.transience_fraction, None))
    if final.ci_low < thr.transience_fraction <= final.ci_high:
        logger.warning("transience: r=%.3f with interval [%.3f, %.3f] straddles %.2f; the verdict depends on the seed",
                       final.estimate, final.ci_low, final.ci_high, thr.transience_fraction)
    logger.info("transience: r=%s passed=%s", ["%.3f" % f for f in fractions], passed)
    return Verdict("transience", final.estimate, final.ci_low, final.ci_high, thr.transience_fraction, passed, n_paths, seed, tuple(rows))


# ---------- Blowup ----------

def _blowup_worker(start, count, seed, alpha, x0, y0, levels, horizon, steps, max_growth, origin_eps):
    params = SystemParams(alpha, x0, y0)
    top = levels[-1]
    policy = StopPolicy(horizon=horizon, origin_eps=origin_eps, blowup_level=top, blowup_component="x")
    control = AdaptiveStep(max_growth=max_growth, relative=True)
    sigma = np.full((count, len(levels) + 1), np.inf)
    interleave = np.full(count, np.nan)
    overflow = np.zeros(count, dtype=bool)
    for i in range(count):
        noise = generate(seed.stream(start + i), horizon, steps)
        traj = integrate(params, noise, policy, Scheme.EULER, control)
        overflow[i] = traj.stop_reason is StopReason.STEP_OVERFLOW
        for c, level in enumerate(tuple(levels) + (top / 100.0,)):
            hit = first_hit(traj, "level", level)
            if hit is not None:
                sigma[i, c] = hit
        if np.isfinite(sigma[i, len(levels) - 1]):
            k = int(np.searchsorted(traj.times, sigma[i, len(levels) - 1], side="right"))
            interleave[i] = float(np.abs(traj.ys[:k]).max() >= top / 10.0)
    return sigma, interleave, overflow


def _check_levels(levels: Sequence[float]) -> Tuple[float, ...]:
    levels = tuple(float(v) for v in levels)
    if not levels or levels[0] <= 0 or any(b <= a for a, b in zip(levels[:-1], levels[1:])):
        raise InvalidParameter("levels must be positive and strictly increasing")
    return levels


def blowup_curve(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    levels: Sequence[float] = (1e2, 1e3, 1e4),
    horizon: float = 50.0,
    n_paths: int = 1000,
    steps: int = 5000,
    max_growth: float = 0.1,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Tuple[BlowupCurve, Dict[str, np.ndarray]]:
    """
    Level-hitting times sigma_L of |X| under adaptive Euler stepping, one run
    per path up to the largest level. Returns the curve and per-path arrays.
    """
    thr, chunk = _resolve(thr, chunk)
    levels = _check_levels(levels)
    sigma, interleave, overflow = gather(
        _blowup_worker, n_paths,
        (seed, alpha, x0, y0, levels, horizon, steps, max_growth, thr.origin_eps),
        workers, chunk,
    )
    per_level = sigma[:, : len(levels)]
    curve = BlowupCurve(
        levels=np.array(levels),
        hit_fractions=np.isfinite(per_level).mean(axis=0),
        median_hit_times=np.median(per_level, axis=0),
        alpha=alpha,
        horizon=horizon,
    )
    return curve, {"sigma": per_level, "sigma_low": sigma[:, -1], "interleave": interleave, "overflow": overflow}


def check_blowup(
    alpha: float,
    x0: float = 1.0,
    y0: float = 0.0,
    levels: Sequence[float] = (1e2, 1e3, 1e4),
    horizon: float = 50.0,
    n_paths: int = 1000,
    steps: int = 5000,
    max_growth: Optional[float] = None,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Tuple[Verdict, BlowupCurve]:
    """
    Passes when the largest level is hit on blowup_fraction of paths, the
    median hitting time moves by at most blowup_median_ratio between L/100 and
    L, both |X| and |Y| pass L/10 by sigma_L on blowup_interleave_fraction of
    the blown-up paths, and step overflow stays under blowup_overflow_fraction.
    """
    thr, chunk = _resolve(thr, chunk)
    _check_start(alpha, x0, y0, lower=1.0)
    levels = _check_levels(levels)
    growth = thr.blowup_growth if max_growth is None else max_growth
    curve, raw = blowup_curve(alpha, x0, y0, levels, horizon, n_paths, steps, growth, seed, thr, workers, chunk)

    sigma_top = raw["sigma"][:, -1]
    hit = np.isfinite(sigma_top)
    frac, lo, hi = proportion_ci(int(hit.sum()), n_paths, thr.ci_level)
    primary = frac >= thr.blowup_fraction

    def median_ratio(top, low, axis):
        num, den = np.median(top, axis=axis), np.median(low, axis=axis)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(np.isfinite(num), num / den, np.inf)

    if hit.mean() > 0.5:
        ratio, r_lo, r_hi = paired_bootstrap_ci(
            (sigma_top, raw["sigma_low"]), median_ratio, thr.ci_level, seed.generator(AUXILIARY, _TAG_RATIO)
        )
    else:
        ratio, r_lo, r_hi = math.inf, math.nan, math.nan
    ratio_ok = ratio <= thr.blowup_median_ratio

    inter = raw["interleave"][hit]
    if inter.size:
        i_frac, i_lo, i_hi = proportion_ci(int(inter.sum()), inter.size, thr.ci_level)
    else:
        i_frac, i_lo, i_hi = 0.0, 0.0, 1.0
    inter_ok = i_frac >= thr.blowup_interleave_fraction
    overflow = raw["overflow"]
    overflow_row = _fraction_row("step_overflow", overflow, thr.blowup_overflow_fraction,
                                 overflow.mean() < thr.blowup_overflow_fraction, thr.ci_level)

    rows = [
        _fraction_row(f"hit[L={lv:g}]", np.isfinite(raw["sigma"][:, c]), math.nan, None, thr.ci_level)
        for c, lv in enumerate(curve.levels)
    ]
    rows += [
        Estimate("median_ratio", "ratio", ratio, r_lo, r_hi, n_paths, thr.blowup_median_ratio, ratio_ok),
        Estimate("interleave", "fraction", i_frac, i_lo, i_hi, int(inter.size), thr.blowup_interleave_fraction, inter_ok),
        overflow_row,
    ]
    passed = bool(primary and ratio_ok and inter_ok and overflow_row.passed)
    logger.info("blowup: alpha=%g hit=%.3f ratio=%.3g interleave=%.3f passed=%s", alpha, frac, ratio, i_frac, passed)
    verdict = Verdict("blowup", frac, lo, hi, thr.blowup_fraction, passed, n_paths, seed, tuple(rows),
                      {"sigma": raw["sigma"]})
    return verdict, curve


def check_blowup_control(
    alpha: float = 0.9,
    x0: float = 1.0,
    y0: float = 0.0,
    levels: Sequence[float] = (1e2, 1e3, 1e4),
    horizon: float = 10.0,
    n_paths: int = 1000,
    steps: int = 1000,
    max_growth: Optional[float] = None,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Tuple[Verdict, BlowupCurve]:
    """Linear-growth control run through the blowup harness: the top level is (almost) never hit."""
    thr, chunk = _resolve(thr, chunk)
    if not 0 < alpha <= 1:
        raise InvalidParameter(f"the control needs 0 < alpha <= 1, got {alpha}")
    growth = thr.blowup_growth if max_growth is None else max_growth
    curve, raw = blowup_curve(alpha, x0, y0, levels, horizon, n_paths, steps, growth, seed, thr, workers, chunk)
    hit = np.isfinite(raw["sigma"][:, -1])
    frac, lo, hi = proportion_ci(int(hit.sum()), n_paths, thr.ci_level)
    passed = frac <= thr.control_fraction
    logger.info("blowup control: alpha=%g hit=%.3f passed=%s", alpha, frac, passed)
    row = Estimate(f"hit[L={curve.levels[-1]:g}]", "fraction", frac, lo, hi, n_paths, thr.control_fraction, passed)
    return Verdict("blowup_control", frac, lo, hi, thr.control_fraction, passed, n_paths, seed, (row,)), curve


def blowup_separation(main: Verdict, control: Verdict, margin: float = 0.9, level: float = 0.95) -> Verdict:
    """Difference of top-level hit fractions between the explosive run and the control."""
    diff, lo, hi = difference_ci(main.statistic, main.n_paths, control.statistic, control.n_paths, level)
    return Verdict("blowup_separation", diff, lo, hi, margin, diff >= margin, main.n_paths, main.seed)


# ---------- Finiteness lemmas ----------

def _lemma2_worker(start, count, seed, beta, delta, steps, grading, refinements, growth, cutoff_node):
    out = np.empty((count, 2 * refinements + 2))
    for i in range(count):
        path_seed = seed.stream(start + i)
        noise = generate_graded(path_seed, delta, steps, grading)
        res = moments.lemma2_integral(beta, delta, noise, path_seed, refinements, growth, grading, cutoff_node)
        out[i, : refinements + 1] = (res.estimate,) + res.refined
        out[i, refinements + 1 : -1] = res.growth
        out[i, -1] = float(res.divergent)
    return (out,)


def check_lemma2(
    beta: float,
    delta: float = 1.0,
    n_paths: int = 10_000,
    steps: int = 1000,
    grading: float = 8.0,
    refinements: int = 2,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """
    beta < 2/3: the mean of int_0^delta |J|^(-beta) matches its closed form
    within lemma2_relative_tolerance. beta >= 2/3: the refinement-growth flag
    fires on at least lemma2_divergence_fraction of paths.
    """
    thr, chunk = _resolve(thr, chunk)
    if not 0 < beta < 1:
        raise InvalidParameter(f"beta must lie in (0, 1), got {beta}")
    (out,) = gather(
        _lemma2_worker, n_paths,
        (seed, beta, delta, steps, grading, refinements, thr.lemma2_divergence_growth, thr.lemma2_cutoff_node),
        workers, chunk,
    )
    divergent = out[:, -1].astype(bool)
    integrable = 1.5 * beta < 1.0
    flag_row = _fraction_row("divergent", divergent, thr.lemma2_divergence_fraction,
                             None if integrable else divergent.mean() >= thr.lemma2_divergence_fraction, thr.ci_level)
    rows = [flag_row]
    for level in range(refinements + 1):
        s = mean_ci(out[:, level], thr.ci_level)
        rows.append(Estimate(f"mean_I[refinement={level}]", "mean", s.mean, s.ci_low, s.ci_high, s.n))
    for level in range(1, refinements + 1):
        med, lo, hi = quantile_ci(out[:, refinements + level], 0.5, thr.ci_level,
                                  seed.generator(AUXILIARY, _TAG_QUANTILE, level))
        rows.append(Estimate(f"median_growth[refinement={level}]", "quantile", med, lo, hi, n_paths,
                             thr.lemma2_divergence_growth))

    name = f"lemma2[beta={beta:g}]"
    if integrable:
        target = moments.lemma2_mean(beta, delta)
        s = mean_ci(out[:, 0], thr.ci_level)
        rel = abs(s.mean / target - 1.0)
        passed = rel <= thr.lemma2_relative_tolerance
        rows.append(Estimate("relative_error", "ratio", rel, abs(s.ci_low / target - 1.0), abs(s.ci_high / target - 1.0),
                             n_paths, thr.lemma2_relative_tolerance, passed))
        logger.info("lemma2: beta=%g mean=%.5g closed form=%.5g passed=%s", beta, s.mean, target, passed)
        return Verdict(name, s.mean, s.ci_low, s.ci_high, target, passed, n_paths, seed, tuple(rows))
    passed = bool(flag_row.passed)
    logger.info("lemma2: beta=%g divergent fraction=%.3f passed=%s", beta, flag_row.estimate, passed)
    return Verdict(name, flag_row.estimate, flag_row.ci_low, flag_row.ci_high, thr.lemma2_divergence_fraction,
                   passed, n_paths, seed, tuple(rows))


def _lemma4_worker(start, count, seed, beta, x0, y0, t_max_list, steps):
    out = np.empty((count, len(t_max_list)))
    for i in range(count):
        noise = generate(seed.stream(start + i), t_max_list[-1], steps)
        for c, t_max in enumerate(t_max_list):
            out[i, c] = moments.lemma4_integral(beta, x0, y0, noise, t_max)[0]
    return (out,)


def check_lemma4(
    beta: float = 0.8,
    x0: float = 1.0,
    y0: float = 0.0,
    t_max_list: Sequence[float] = (100.0, 200.0),
    dt: float = 0.02,
    n_paths: int = 1000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
    workers: int = 1,
    chunk: Optional[int] = None,
) -> Verdict:
    """
    Pathwise head plus mean tail bound, compared between the first and last
    t_max: the relative change of the mean total stays under lemma4_stability
    and every path is finite.
    """
    thr, chunk = _resolve(thr, chunk)
    if not 2.0 / 3.0 < beta < 1.0:
        raise InvalidParameter(f"beta must lie in (2/3, 1), got {beta}")
    if x0 == 0.0 and y0 == 0.0:
        raise InvalidParameter("the start must differ from the origin")
    t_list = tuple(sorted(float(t) for t in t_max_list))
    if len(t_list) < 2:
        raise InvalidParameter("need at least two t_max values")
    steps = _steps_for(t_list[-1], dt)
    (heads,) = gather(_lemma4_worker, n_paths, (seed, beta, x0, y0, t_list, steps), workers, chunk)

    tails = [moments.lemma4_tail_bound(beta, t) for t in t_list]
    totals = heads + np.array(tails)[None, :]
    finite = bool(np.all(np.isfinite(heads)))
    rows = []
    for c, t in enumerate(t_list):
        s = mean_ci(heads[:, c], thr.ci_level)
        rows.append(Estimate(f"head[t_max={t:g}]", "mean", s.mean, s.ci_low, s.ci_high, s.n))
        rows.append(Estimate(f"tail_bound[t_max={t:g}]", "bound", tails[c], tails[c], tails[c], s.n))
    change, lo, hi = paired_bootstrap_ci(
        (totals[:, -1], totals[:, 0]),
        lambda late, early, axis: late.mean(axis=axis) / early.mean(axis=axis) - 1.0,
        thr.ci_level,
        seed.generator(AUXILIARY, _TAG_RATIO),
    )
    rows.append(_fraction_row("finite", np.isfinite(heads).all(axis=1), 1.0, finite, thr.ci_level))
    passed = finite and abs(change) < thr.lemma4_stability
    logger.info("lemma4: beta=%g change=%.4g passed=%s", beta, change, passed)
    return Verdict(f"lemma4[beta={beta:g}]", change, lo, hi, thr.lemma4_stability, passed, n_paths, seed, tuple(rows))


def check_lemma5(
    spec: moments.MomentSpec,
    mc_samples: int = 1_000_000,
    seed: SeedSpec = SeedSpec(0),
    thr: Optional[Thresholds] = None,
) -> Verdict:
    """
    Quadrature of E|m + sigma Z|^(-beta) against Monte Carlo (mc_se_tolerance
    standard errors), the Mellin-of-Laplace integral (mellin_tolerance,
    relative) and, at m = 0, the Gamma-function closed form (quadrature_rtol).
    """
    thr, _ = _resolve(thr, 1)
    quad = moments.frac_inv_moment_quad(spec)
    z = seed.generator(AUXILIARY, _TAG_MC).standard_normal(int(mc_samples))
    with np.errstate(divide="ignore"):
        mc = mean_ci(np.abs(spec.m + spec.sigma * z) ** (-spec.beta), thr.ci_level)
    mc_ok = mc.z_score(quad) <= thr.mc_se_tolerance
    mellin = moments.mellin_moment(spec)
    mellin_err = abs(mellin / quad - 1.0)
    mellin_ok = mellin_err <= thr.mellin_tolerance
    rows = [
        Estimate("monte_carlo", "mean", mc.mean, mc.ci_low, mc.ci_high, mc.n, quad, mc_ok),
        Estimate("mellin", "quadrature", mellin, mellin, mellin, 0, quad, mellin_ok),
    ]
    passed = mc_ok and mellin_ok
    if spec.m == 0.0:
        closed = spec.sigma ** (-spec.beta) * moments.gaussian_abs_moment(spec.beta)
        closed_ok = abs(quad / closed - 1.0) <= thr.quadrature_rtol
        rows.append(Estimate("closed_form", "exact", closed, closed, closed, 0, quad, closed_ok))
        passed = passed and closed_ok
    name = f"lemma5[m={spec.m:g},sigma={spec.sigma:g},beta={spec.beta:g}]"
    logger.info("%s: quad=%.10g mc=%.6g mellin=%.10g passed=%s", name, quad, mc.mean, mellin, passed)
    return Verdict(name, mc.mean, mc.ci_low, mc.ci_high, quad, passed, int(mc_samples), seed, tuple(rows))
